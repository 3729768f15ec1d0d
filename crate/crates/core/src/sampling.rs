//! Hypercube datasets with bounded noise variation.
//!
//! [`active_sample`] subdivides a box breadth-first until the oracle levels at
//! the two antipodal monotone corners of every cube differ by at most `μ_act`.
//! By monotonicity those two corners bracket the level everywhere inside the
//! cube. [`lattice_dataset`] builds the fixed-grid baseline.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::SoundLevel;
use crate::numfmt::sig9;
use crate::oracle::{Domain, LevelRecord, NoiseOracle, OracleError};
use crate::partition::Partition;
use crate::state::ObserverRelativeState;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("cube {cube:?} still varies by {gap:.4} dB at the minimum edge size")]
    ThresholdUnreachable { cube: Box<Hypercube>, gap: f64 },
    #[error("mu_act must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("lattice axis `{0}` needs at least two increasing levels")]
    InvalidLattice(&'static str),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("dataset csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box in `(v, ρ, h, r)` at a fixed azimuth.
///
/// Only `v`, `ρ` and `h` are subdivided; `r` is a fixed slab (possibly a
/// single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypercube {
    pub v: [f64; 2],
    pub rho: [f64; 2],
    pub h: [f64; 2],
    pub r: [f64; 2],
    pub phi: f64,
}

impl Hypercube {
    pub fn from_domain(domain: &Domain, r: [f64; 2], phi: f64) -> Self {
        Self {
            v: domain.v,
            rho: domain.rho,
            h: domain.h,
            r,
            phi,
        }
    }

    /// Loudest vertex under the monotone order: high `v`, `ρ`; low `h`, `r`.
    pub fn max_corner(&self) -> ObserverRelativeState {
        ObserverRelativeState::new(self.v[1], self.rho[1], self.h[0], self.r[0], self.phi)
    }

    /// Quietest vertex under the monotone order.
    pub fn min_corner(&self) -> ObserverRelativeState {
        ObserverRelativeState::new(self.v[0], self.rho[0], self.h[1], self.r[1], self.phi)
    }

    fn axes(&self) -> [[f64; 2]; 3] {
        [self.v, self.rho, self.h]
    }

    pub fn volume(&self) -> f64 {
        let e = |[lo, hi]: [f64; 2]| hi - lo;
        e(self.v) * e(self.rho) * e(self.h) * e(self.r)
    }

    /// Closed-interval membership of `(v, ρ, h, r)`.
    pub fn contains(&self, s: &ObserverRelativeState) -> bool {
        let inside = |x: f64, [lo, hi]: [f64; 2]| lo <= x && x <= hi;
        inside(s.v, self.v) && inside(s.rho, self.rho) && inside(s.h, self.h) && inside(s.r, self.r)
    }

    /// Half-open membership, with the upper face of the root closed so that a
    /// tiling assigns every point of the root to exactly one cube.
    pub fn owns(&self, s: &ObserverRelativeState, root: &Hypercube) -> bool {
        let inside = |x: f64, [lo, hi]: [f64; 2], top: f64| lo <= x && (x < hi || (hi == top && x <= hi));
        inside(s.v, self.v, root.v[1])
            && inside(s.rho, self.rho, root.rho[1])
            && inside(s.h, self.h, root.h[1])
            && inside(s.r, self.r, root.r[1])
    }

    /// Splits every non-degenerate subdivided axis at its midpoint.
    ///
    /// Children are ordered by the number of upper halves taken, then
    /// lexicographically in `(v, ρ, h)`.
    pub fn children(&self) -> Vec<Hypercube> {
        let axes = self.axes();
        let splits: Vec<bool> = axes.iter().map(|[lo, hi]| hi > lo).collect();
        let mut codes: Vec<[usize; 3]> = Vec::with_capacity(8);
        for j in 0..=splits[0] as usize {
            for k in 0..=splits[1] as usize {
                for l in 0..=splits[2] as usize {
                    codes.push([j, k, l]);
                }
            }
        }
        codes.sort_by_key(|c| (c.iter().sum::<usize>(), *c));
        let half = |[lo, hi]: [f64; 2], upper: usize, split: bool| {
            if !split {
                [lo, hi]
            } else {
                let mid = 0.5 * (lo + hi);
                if upper == 1 {
                    [mid, hi]
                } else {
                    [lo, mid]
                }
            }
        };
        codes
            .into_iter()
            .map(|[j, k, l]| Hypercube {
                v: half(axes[0], j, splits[0]),
                rho: half(axes[1], k, splits[1]),
                h: half(axes[2], l, splits[2]),
                r: self.r,
                phi: self.phi,
            })
            .collect()
    }

    fn validate(&self) -> Result<(), SamplingError> {
        for (name, [lo, hi]) in [("v", self.v), ("rho", self.rho), ("h", self.h), ("r", self.r)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SamplingError::InvalidBounds(format!("{name} = [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Per-axis floor below which cubes are no longer split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinEdge {
    pub v: f64,
    pub rho: f64,
    pub h: f64,
}

impl Default for MinEdge {
    fn default() -> Self {
        Self {
            v: 1.0,
            rho: 10.0,
            h: 5.0,
        }
    }
}

impl MinEdge {
    fn reached(&self, c: &Hypercube) -> bool {
        c.v[1] - c.v[0] <= self.v && c.rho[1] - c.rho[0] <= self.rho && c.h[1] - c.h[0] <= self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptedCube {
    pub cube: Hypercube,
    /// Oracle level at the max corner.
    pub l_max: f64,
    /// Oracle level at the min corner.
    pub l_min: f64,
    /// Accepted at the edge floor with `l_max - l_min > μ_act`.
    pub floor_hit: bool,
}

impl AcceptedCube {
    pub fn gap(&self) -> f64 {
        self.l_max - self.l_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub state: ObserverRelativeState,
    pub level: SoundLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Active,
    Lattice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedDataset {
    pub kind: DatasetKind,
    /// Deduplicated corner samples in first-seen order.
    pub samples: Vec<Sample>,
    pub cubes: Vec<AcceptedCube>,
    /// Gap tolerance; every non-floor cube satisfies `gap <= mu_act`.
    pub mu_act: f64,
    /// Oracle evaluations spent building the dataset.
    pub oracle_evals: u64,
    /// Cubes dequeued, including those that were split.
    pub processed_cubes: usize,
}

/// Quantized `(v, ρ, h, r, φ)` identity of a corner state.
pub type CornerKey = [i64; 5];

const KEY_QUANTUM: f64 = 1e-6;

/// Key with each axis quantized to `1e-6` of the reference span, so corners
/// reached through different parents share one key.
pub fn corner_cache_key(s: &ObserverRelativeState, reference: &Domain) -> CornerKey {
    let q = |x: f64, [lo, hi]: [f64; 2]| {
        let span = if hi > lo { hi - lo } else { 1.0 };
        ((x - lo) / (span * KEY_QUANTUM)).round() as i64
    };
    [
        q(s.v, reference.v),
        q(s.rho, reference.rho),
        q(s.h, reference.h),
        q(s.r, reference.r),
        (s.phi / KEY_QUANTUM).round() as i64,
    ]
}

/// Memoizes oracle calls by corner key and collects distinct samples.
struct CornerCache<'a> {
    oracle: &'a dyn NoiseOracle,
    reference: Domain,
    levels: HashMap<CornerKey, f64>,
    evals: u64,
}

impl<'a> CornerCache<'a> {
    fn new(oracle: &'a dyn NoiseOracle, reference: Domain) -> Self {
        Self {
            oracle,
            reference,
            levels: HashMap::new(),
            evals: 0,
        }
    }

    fn level(&mut self, s: &ObserverRelativeState) -> Result<f64, OracleError> {
        let key = corner_cache_key(s, &self.reference);
        if let Some(&l) = self.levels.get(&key) {
            return Ok(l);
        }
        let l = self.oracle.eval(s)?.value();
        self.evals += 1;
        self.levels.insert(key, l);
        Ok(l)
    }
}

struct SampleSet {
    reference: Domain,
    seen: HashSet<CornerKey>,
    samples: Vec<Sample>,
}

impl SampleSet {
    fn new(reference: Domain) -> Self {
        Self {
            reference,
            seen: HashSet::new(),
            samples: Vec::new(),
        }
    }

    fn push(&mut self, state: ObserverRelativeState, level: f64) {
        if self.seen.insert(corner_cache_key(&state, &self.reference)) {
            self.samples.push(Sample {
                state,
                level: SoundLevel::db(level),
            });
        }
    }

    fn push_cube(&mut self, c: &AcceptedCube) {
        self.push(c.cube.max_corner(), c.l_max);
        self.push(c.cube.min_corner(), c.l_min);
    }
}

fn check_tolerance(mu_act: f64) -> Result<(), SamplingError> {
    if mu_act.is_finite() && mu_act > 0.0 {
        Ok(())
    } else {
        Err(SamplingError::InvalidTolerance(mu_act))
    }
}

/// Breadth-first subdivision of `root` until every cube's corner gap is at
/// most `mu_act` or the cube reaches `min_edge` on every axis.
pub fn active_sample(
    root: Hypercube,
    oracle: &dyn NoiseOracle,
    mu_act: f64,
    min_edge: MinEdge,
) -> Result<CertifiedDataset, SamplingError> {
    check_tolerance(mu_act)?;
    root.validate()?;
    let reference = Domain {
        v: root.v,
        rho: root.rho,
        h: root.h,
        r: root.r,
    };
    let mut cache = CornerCache::new(oracle, reference);
    let mut set = SampleSet::new(reference);
    let mut cubes = Vec::new();
    let mut processed = 0;
    bfs(root, &mut cache, mu_act, &min_edge, &mut cubes, &mut processed)?;
    for c in &cubes {
        set.push_cube(c);
    }
    Ok(CertifiedDataset {
        kind: DatasetKind::Active,
        samples: set.samples,
        cubes,
        mu_act,
        oracle_evals: cache.evals,
        processed_cubes: processed,
    })
}

fn bfs(
    root: Hypercube,
    cache: &mut CornerCache<'_>,
    mu_act: f64,
    min_edge: &MinEdge,
    out: &mut Vec<AcceptedCube>,
    processed: &mut usize,
) -> Result<(), SamplingError> {
    let mut queue = VecDeque::from([root]);
    while let Some(cube) = queue.pop_front() {
        *processed += 1;
        let l_max = cache.level(&cube.max_corner())?;
        let l_min = cache.level(&cube.min_corner())?;
        let gap = (l_max - l_min).abs();
        if gap <= mu_act {
            out.push(AcceptedCube {
                cube,
                l_max,
                l_min,
                floor_hit: false,
            });
        } else if min_edge.reached(&cube) || cube.children().len() == 1 {
            out.push(AcceptedCube {
                cube,
                l_max,
                l_min,
                floor_hit: true,
            });
        } else {
            queue.extend(cube.children());
        }
    }
    Ok(())
}

/// Settings for covering a whole oracle domain with active sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub mu_act: f64,
    pub min_edge: MinEdge,
    /// Each `r` slab is bisected until its level drop at the loudest
    /// `(v, ρ, h)` is at most `r_share · μ_act`.
    pub r_share: f64,
    /// Slabs narrower than this are not bisected further, m.
    pub r_min_width: f64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            mu_act: 1.5,
            min_edge: MinEdge::default(),
            r_share: 0.4,
            r_min_width: 1.0,
        }
    }
}

/// Bisects `[r_lo, r_hi]` into slabs across which the level at the loudest
/// `(v, ρ, h)` drops by at most `tolerance`.
pub fn r_slabs(
    oracle: &dyn NoiseOracle,
    phi: f64,
    tolerance: f64,
    min_width: f64,
) -> Result<(Vec<[f64; 2]>, u64), SamplingError> {
    let d = *oracle.domain();
    let level = |r: f64| -> Result<f64, OracleError> {
        Ok(oracle
            .eval(&ObserverRelativeState::new(d.v[1], d.rho[1], d.h[0], r, phi))?
            .value())
    };
    if d.r[0] == d.r[1] {
        return Ok((vec![d.r], 1));
    }
    let mut evals = 2;
    let mut out = Vec::new();
    // Depth-first, left to right, so slabs come out sorted.
    let mut stack = vec![(d.r, level(d.r[0])?, level(d.r[1])?)];
    while let Some(([lo, hi], l_lo, l_hi)) = stack.pop() {
        if (l_lo - l_hi).abs() <= tolerance || hi - lo <= min_width {
            out.push([lo, hi]);
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let l_mid = level(mid)?;
        evals += 1;
        stack.push(([mid, hi], l_mid, l_hi));
        stack.push(([lo, mid], l_lo, l_mid));
    }
    Ok((out, evals))
}

/// Active sampling over the whole oracle domain: for every sector and every
/// `r` slab, run [`active_sample`] at the sector's representative azimuth.
pub fn sample_domain(
    oracle: &dyn NoiseOracle,
    partition: &Partition,
    cfg: &ActiveConfig,
) -> Result<CertifiedDataset, SamplingError> {
    check_tolerance(cfg.mu_act)?;
    let domain = *oracle.domain();
    let mut set = SampleSet::new(domain);
    let mut cubes = Vec::new();
    let mut evals = 0;
    let mut processed = 0;
    for sector in partition.sectors() {
        let (slabs, slab_evals) = r_slabs(oracle, sector.rep, cfg.r_share * cfg.mu_act, cfg.r_min_width)?;
        evals += slab_evals;
        for slab in slabs {
            let root = Hypercube::from_domain(&domain, slab, sector.rep);
            let part = active_sample(root, oracle, cfg.mu_act, cfg.min_edge)?;
            evals += part.oracle_evals;
            processed += part.processed_cubes;
            for c in &part.cubes {
                set.push_cube(c);
            }
            cubes.extend(part.cubes);
        }
    }
    Ok(CertifiedDataset {
        kind: DatasetKind::Active,
        samples: set.samples,
        cubes,
        mu_act: cfg.mu_act,
        oracle_evals: evals,
        processed_cubes: processed,
    })
}

/// Grid levels per axis for the lattice baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGrid {
    pub v: Vec<f64>,
    pub rho: Vec<f64>,
    pub h: Vec<f64>,
    pub r: Vec<f64>,
}

impl Default for LatticeGrid {
    fn default() -> Self {
        Self {
            v: vec![20.0, 30.0, 40.0, 50.0, 60.0],
            rho: vec![500.0, 600.0, 700.0],
            h: (1..=9).map(|i| 50.0 * i as f64).collect(),
            r: (0..=32).map(|i| 100.0 * i as f64).collect(),
        }
    }
}

impl LatticeGrid {
    fn validate(&self) -> Result<(), SamplingError> {
        for (name, axis) in [("v", &self.v), ("rho", &self.rho), ("h", &self.h), ("r", &self.r)] {
            // A single r value is allowed: it fixes the slice.
            let needed = if name == "r" { 1 } else { 2 };
            if axis.len() < needed || axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SamplingError::InvalidLattice(name));
            }
        }
        Ok(())
    }

    /// Distinct corner samples per sector: `2·∏(n−1) − ∏(n−2)`, with a
    /// single `r` level counted as a fixed slice.
    pub fn unique_samples_per_sector(&self) -> usize {
        let n = [self.v.len(), self.rho.len(), self.h.len(), self.r.len()];
        let fixed_r = self.r.len() == 1;
        let cells: usize = n.iter().enumerate().map(|(i, &k)| if i == 3 && fixed_r { 1 } else { k - 1 }).product();
        if fixed_r {
            let inner: usize = n[..3].iter().map(|&k| k - 2).product();
            2 * cells - inner
        } else {
            let inner: usize = n.iter().map(|&k| k - 2).product();
            2 * cells - inner
        }
    }
}

/// Every grid cell of `grid`, per sector, with its two antipodal corners.
pub fn lattice_dataset(
    grid: &LatticeGrid,
    partition: &Partition,
    oracle: &dyn NoiseOracle,
) -> Result<CertifiedDataset, SamplingError> {
    grid.validate()?;
    let domain = *oracle.domain();
    let mut cache = CornerCache::new(oracle, domain);
    let mut set = SampleSet::new(domain);
    let mut cubes = Vec::new();
    let r_cells: Vec<[f64; 2]> = if grid.r.len() == 1 {
        vec![[grid.r[0], grid.r[0]]]
    } else {
        grid.r.windows(2).map(|w| [w[0], w[1]]).collect()
    };
    let mut max_gap: f64 = 0.0;
    for sector in partition.sectors() {
        for v in grid.v.windows(2) {
            for rho in grid.rho.windows(2) {
                for h in grid.h.windows(2) {
                    for &r in &r_cells {
                        let cube = Hypercube {
                            v: [v[0], v[1]],
                            rho: [rho[0], rho[1]],
                            h: [h[0], h[1]],
                            r,
                            phi: sector.rep,
                        };
                        let l_max = cache.level(&cube.max_corner())?;
                        let l_min = cache.level(&cube.min_corner())?;
                        let accepted = AcceptedCube {
                            cube,
                            l_max,
                            l_min,
                            floor_hit: false,
                        };
                        max_gap = max_gap.max(accepted.gap().abs());
                        set.push_cube(&accepted);
                        cubes.push(accepted);
                    }
                }
            }
        }
    }
    let processed = cubes.len();
    Ok(CertifiedDataset {
        kind: DatasetKind::Lattice,
        samples: set.samples,
        cubes,
        mu_act: max_gap,
        oracle_evals: cache.evals,
        processed_cubes: processed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRefinement {
    /// Number of halvings per axis at which every cube met the tolerance.
    pub depth: u32,
    pub cubes: usize,
    /// Distinct corner evaluations at the final depth.
    pub samples: u64,
    /// Whether the tolerance was met before `max_depth`.
    pub converged: bool,
}

/// Refines `root` on a uniform dyadic grid until every cell's corner gap is at
/// most `mu_act`. Reports the sample count of the final grid only.
pub fn uniform_refinement(
    root: Hypercube,
    oracle: &dyn NoiseOracle,
    mu_act: f64,
    max_depth: u32,
) -> Result<UniformRefinement, SamplingError> {
    check_tolerance(mu_act)?;
    root.validate()?;
    let mut depth = 0;
    loop {
        let n = 1usize << depth;
        let axis = |[lo, hi]: [f64; 2]| -> Vec<[f64; 2]> {
            if hi == lo {
                return vec![[lo, hi]];
            }
            (0..n)
                .map(|i| {
                    let a = lo + (hi - lo) * (i as f64 / n as f64);
                    let b = lo + (hi - lo) * ((i + 1) as f64 / n as f64);
                    [a, b]
                })
                .collect()
        };
        let (vs, rhos, hs) = (axis(root.v), axis(root.rho), axis(root.h));
        let mut cache = CornerCache::new(oracle, Domain { v: root.v, rho: root.rho, h: root.h, r: root.r });
        let mut ok = true;
        let mut cubes = 0;
        for v in &vs {
            for rho in &rhos {
                for h in &hs {
                    let c = Hypercube { v: *v, rho: *rho, h: *h, r: root.r, phi: root.phi };
                    let gap = (cache.level(&c.max_corner())? - cache.level(&c.min_corner())?).abs();
                    ok &= gap <= mu_act;
                    cubes += 1;
                }
            }
        }
        if ok || depth >= max_depth {
            return Ok(UniformRefinement {
                depth,
                cubes,
                samples: cache.evals,
                converged: ok,
            });
        }
        depth += 1;
    }
}

/// Uniform-refinement sample count over the same sector and slab layout that
/// [`sample_domain`] uses.
pub fn uniform_refinement_domain(
    oracle: &dyn NoiseOracle,
    partition: &Partition,
    cfg: &ActiveConfig,
    max_depth: u32,
) -> Result<UniformRefinement, SamplingError> {
    let domain = *oracle.domain();
    let mut total = UniformRefinement {
        depth: 0,
        cubes: 0,
        samples: 0,
        converged: true,
    };
    for sector in partition.sectors() {
        let (slabs, _) = r_slabs(oracle, sector.rep, cfg.r_share * cfg.mu_act, cfg.r_min_width)?;
        for slab in slabs {
            let part = uniform_refinement(Hypercube::from_domain(&domain, slab, sector.rep), oracle, cfg.mu_act, max_depth)?;
            total.depth = total.depth.max(part.depth);
            total.cubes += part.cubes;
            total.samples += part.samples;
            total.converged &= part.converged;
        }
    }
    Ok(total)
}

impl CertifiedDataset {
    pub fn floor_hits(&self) -> impl Iterator<Item = &AcceptedCube> {
        self.cubes.iter().filter(|c| c.floor_hit)
    }

    /// The first cube accepted at the edge floor, as an error.
    pub fn check_reachable(&self) -> Result<(), SamplingError> {
        match self.floor_hits().next() {
            None => Ok(()),
            Some(c) => Err(SamplingError::ThresholdUnreachable {
                cube: Box::new(c.cube),
                gap: c.gap(),
            }),
        }
    }

    pub fn write_samples_csv<W: Write>(&self, out: W) -> Result<(), SamplingError> {
        write_samples_csv(&self.samples, out)
    }

    /// Cube log without the samples.
    pub fn to_log(&self) -> DatasetLog {
        DatasetLog {
            kind: self.kind,
            mu_act: self.mu_act,
            oracle_evals: self.oracle_evals,
            processed_cubes: self.processed_cubes,
            samples: self.samples.len(),
            cubes: self.cubes.clone(),
        }
    }

    pub fn from_parts(log: DatasetLog, samples: Vec<Sample>) -> Self {
        Self {
            kind: log.kind,
            samples,
            cubes: log.cubes,
            mu_act: log.mu_act,
            oracle_evals: log.oracle_evals,
            processed_cubes: log.processed_cubes,
        }
    }
}

/// JSON audit log of a dataset's cubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLog {
    pub kind: DatasetKind,
    pub mu_act: f64,
    pub oracle_evals: u64,
    pub processed_cubes: usize,
    pub samples: usize,
    pub cubes: Vec<AcceptedCube>,
}

pub fn write_samples_csv<W: Write>(samples: &[Sample], out: W) -> Result<(), SamplingError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "rho", "h", "r", "phi", "L"])?;
    for s in samples {
        let st = &s.state;
        w.write_record([
            sig9(st.v),
            sig9(st.rho),
            sig9(st.h),
            sig9(st.r),
            sig9(st.phi),
            sig9(s.level.value()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<Sample>, SamplingError> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<LevelRecord>()
        .map(|row| {
            let row = row?;
            Ok(Sample {
                state: ObserverRelativeState::new(row.v, row.rho, row.h, row.r, row.phi),
                level: SoundLevel::try_db(row.level)
                    .map_err(|e| SamplingError::InvalidBounds(format!("level: {e}")))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{SyntheticOracle, SyntheticParams};
    use crate::partition::{default_step, partition_azimuth, SweepCondition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn root(r: f64) -> Hypercube {
        Hypercube::from_domain(&Domain::default(), [r, r], 0.0)
    }

    /// Level rises linearly in `v` only.
    struct LinearInV {
        slope: f64,
        domain: Domain,
        evals: std::sync::atomic::AtomicU64,
    }

    impl NoiseOracle for LinearInV {
        fn domain(&self) -> &Domain {
            &self.domain
        }
        fn raw(&self, s: &ObserverRelativeState) -> Result<SoundLevel, OracleError> {
            Ok(SoundLevel::db(30.0 + self.slope * (s.v - self.domain.v[0])))
        }
        fn counter(&self) -> &std::sync::atomic::AtomicU64 {
            &self.evals
        }
    }

    #[test]
    fn constant_oracle_accepts_root() {
        let o = SyntheticOracle::new(SyntheticParams::constant(40.0)).unwrap();
        let ds = active_sample(root(100.0), &o, 1.5, MinEdge::default()).unwrap();
        assert_eq!(ds.cubes.len(), 1);
        assert_eq!(ds.samples.len(), 2);
        assert_eq!(ds.oracle_evals, 2);
        assert_eq!(o.evaluations(), 2);
    }

    #[test]
    fn one_split_for_span_of_twice_the_tolerance() {
        // Span 3 dB over [20, 60] with mu_act 1.5: one split, eight children accepted.
        let o = LinearInV {
            slope: 3.0 / 40.0,
            domain: Domain::default(),
            evals: Default::default(),
        };
        let ds = active_sample(root(0.0), &o, 1.5, MinEdge::default()).unwrap();
        assert_eq!(ds.processed_cubes, 9);
        assert_eq!(ds.cubes.len(), 8);
        // Without the cache this would be 2 + 16 evaluations.
        assert!(ds.oracle_evals < 18);
        assert_eq!(ds.oracle_evals, o.evaluations());
        assert!(ds.cubes.iter().all(|c| c.gap() <= 1.5 + 1e-12 && !c.floor_hit));
    }

    #[test]
    fn children_are_rank_ordered() {
        let kids = root(0.0).children();
        assert_eq!(kids.len(), 8);
        assert_eq!(kids[0].v, [20.0, 40.0]);
        assert_eq!(kids[0].h, [50.0, 250.0]);
        // Rank one, lexicographic: upper h, then upper rho, then upper v.
        assert_eq!(kids[1].h, [250.0, 450.0]);
        assert_eq!(kids[2].rho, [600.0, 700.0]);
        assert_eq!(kids[3].v, [40.0, 60.0]);
        assert_eq!(kids[7].v, [40.0, 60.0]);
        assert_eq!(kids[7].rho, [600.0, 700.0]);
        assert_eq!(kids[7].h, [250.0, 450.0]);
        let vol: f64 = kids.iter().map(|c| (c.v[1] - c.v[0]) * (c.rho[1] - c.rho[0]) * (c.h[1] - c.h[0])).sum();
        assert_eq!(vol, 40.0 * 200.0 * 400.0);
    }

    #[test]
    fn cache_key_quantizes() {
        let d = Domain::default();
        let a = ObserverRelativeState::new(40.0, 600.0, 100.0, 10.0, 0.5);
        let b = ObserverRelativeState::new(40.0 + 1e-9, 600.0, 100.0, 10.0, 0.5);
        let c = ObserverRelativeState::new(40.1, 600.0, 100.0, 10.0, 0.5);
        assert_eq!(corner_cache_key(&a, &d), corner_cache_key(&b, &d));
        assert_ne!(corner_cache_key(&a, &d), corner_cache_key(&c, &d));
    }

    #[test]
    fn synthetic_slab_meets_tolerance_and_brackets() {
        let o = SyntheticOracle::new(SyntheticParams::default()).unwrap();
        let r0 = Hypercube::from_domain(&Domain::default(), [0.0, 20.0], 0.4);
        let ds = active_sample(r0, &o, 1.5, MinEdge::default()).unwrap();
        assert!(ds.cubes.iter().all(|c| c.gap() <= 1.5 && !c.floor_hit));
        assert!(ds.oracle_evals < 2 * ds.processed_cubes as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in &ds.cubes {
            for _ in 0..20 {
                let u = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.gen::<f64>();
                let s = ObserverRelativeState::new(
                    u(&mut rng, c.cube.v),
                    u(&mut rng, c.cube.rho),
                    u(&mut rng, c.cube.h),
                    u(&mut rng, c.cube.r),
                    c.cube.phi,
                );
                let l = o.eval(&s).unwrap().value();
                assert!(c.l_min <= l && l <= c.l_max);
            }
        }
        // The cubes tile the root.
        let total: f64 = ds.cubes.iter().map(|c| c.cube.volume()).sum();
        assert!((total - r0.volume()).abs() < 1e-6 * r0.volume());
        for _ in 0..500 {
            let s = ObserverRelativeState::new(
                rng.gen_range(20.0..=60.0),
                rng.gen_range(500.0..=700.0),
                rng.gen_range(50.0..=450.0),
                rng.gen_range(0.0..=20.0),
                0.4,
            );
            assert_eq!(ds.cubes.iter().filter(|c| c.cube.owns(&s, &r0)).count(), 1);
        }
    }

    #[test]
    fn floor_hits_are_flagged() {
        let o = LinearInV {
            slope: 10.0,
            domain: Domain::default(),
            evals: Default::default(),
        };
        let ds = active_sample(root(0.0), &o, 1.5, MinEdge { v: 5.0, rho: 1e3, h: 1e3 }).unwrap();
        assert!(ds.floor_hits().count() > 0);
        assert!(matches!(ds.check_reachable(), Err(SamplingError::ThresholdUnreachable { .. })));
    }

    #[test]
    fn lattice_counts_match_closed_form() {
        let o = SyntheticOracle::new(SyntheticParams::default()).unwrap();
        let p = Partition::single(1.0).unwrap();
        let grid = LatticeGrid {
            r: vec![0.0, 100.0, 200.0, 400.0],
            ..LatticeGrid::default()
        };
        let ds = lattice_dataset(&grid, &p, &o).unwrap();
        // 2·(4·2·8·3) − (3·1·7·2)
        assert_eq!(grid.unique_samples_per_sector(), 2 * 4 * 2 * 8 * 3 - 3 * 7 * 2);
        assert_eq!(ds.samples.len(), grid.unique_samples_per_sector());
        assert_eq!(ds.cubes.len(), 4 * 2 * 8 * 3);

        let minimal = LatticeGrid {
            v: vec![20.0, 60.0],
            rho: vec![500.0, 700.0],
            h: vec![50.0, 450.0],
            r: vec![0.0, 100.0],
        };
        let ds = lattice_dataset(&minimal, &p, &o).unwrap();
        assert_eq!(ds.cubes.len(), 1);
        assert_eq!(ds.samples.len(), 2);

        let slice = LatticeGrid {
            r: vec![250.0],
            ..LatticeGrid::default()
        };
        let ds = lattice_dataset(&slice, &p, &o).unwrap();
        assert!(ds.samples.iter().all(|s| s.state.r == 250.0));
        assert_eq!(ds.samples.len(), slice.unique_samples_per_sector());
    }

    #[test]
    fn active_beats_uniform_refinement() {
        let o = SyntheticOracle::new(SyntheticParams::default()).unwrap();
        let r0 = Hypercube::from_domain(&Domain::default(), [0.0, 20.0], 0.4);
        let active = active_sample(r0, &o, 1.5, MinEdge::default()).unwrap();
        let uniform = uniform_refinement(r0, &o, 1.5, 8).unwrap();
        assert!(uniform.converged);
        assert!(active.oracle_evals < uniform.samples, "{} vs {}", active.oracle_evals, uniform.samples);
    }

    #[test]
    fn domain_sampling_covers_r() {
        let o = SyntheticOracle::new(SyntheticParams::default()).unwrap();
        let p = partition_azimuth(&o, 1.0, default_step(), SweepCondition::worst_case(&o)).unwrap();
        let (slabs, _) = r_slabs(&o, p.sectors()[0].rep, 0.3, 1.0).unwrap();
        assert_eq!(slabs[0][0], 0.0);
        assert_eq!(slabs.last().unwrap()[1], 3200.0);
        assert!(slabs.windows(2).all(|w| w[0][1] == w[1][0]));
    }

    #[test]
    fn csv_roundtrip() {
        let samples = vec![Sample {
            state: ObserverRelativeState::new(20.0, 512.5, 50.0, 1234.5678912345, -0.1),
            level: SoundLevel::db(27.123456789123),
        }];
        let mut buf = Vec::new();
        write_samples_csv(&samples, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("v,rho,h,r,phi,L\n"));
        assert!(text.contains("1234.56789"));
        let back = read_samples_csv(buf.as_slice()).unwrap();
        assert!((back[0].level.value() - 27.1234568).abs() < 1e-9);
    }
}
