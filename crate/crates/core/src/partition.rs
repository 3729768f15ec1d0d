//! Azimuthal sectors within which the noise level varies by at most `μ_φ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{NoiseOracle, OracleError};
use crate::state::{wrap_angle, ObserverRelativeState};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("sector {m} is one step wide but varies by {variation:.4} dB; use a finer step")]
    StepTooCoarse { m: usize, variation: f64 },
    #[error("azimuth step must be positive and at most π, got {0}")]
    InvalidStep(f64),
    #[error("mu_phi must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("invalid partition: {0}")]
    Invalid(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthSector {
    /// 1-based sector number in sweep order.
    pub m: usize,
    pub lo: f64,
    pub hi: f64,
    /// Representative azimuth used when sampling and training this sector.
    pub rep: f64,
}

impl AzimuthSector {
    pub fn contains(&self, phi: f64) -> bool {
        self.lo <= phi && phi < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Sectors tiling `[-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    mu_phi: f64,
    /// In sweep order, so `sectors[i].m == i + 1`.
    sectors: Vec<AzimuthSector>,
    /// Indices into `sectors`, sorted by `lo`.
    by_angle: Vec<usize>,
}

impl Partition {
    /// Validates that the sectors tile `[-π, π)` without gaps or overlaps.
    pub fn new(mu_phi: f64, mut sectors: Vec<AzimuthSector>) -> Result<Self, PartitionError> {
        if !(mu_phi.is_finite() && mu_phi > 0.0) {
            return Err(PartitionError::InvalidTolerance(mu_phi));
        }
        if sectors.is_empty() {
            return Err(PartitionError::Invalid("no sectors".into()));
        }
        sectors.sort_by_key(|s| s.m);
        for (i, s) in sectors.iter().enumerate() {
            if s.m != i + 1 {
                return Err(PartitionError::Invalid(format!("sector numbers must be 1..={}", sectors.len())));
            }
            if !(s.lo < s.hi && s.lo <= s.rep && s.rep < s.hi) {
                return Err(PartitionError::Invalid(format!("sector {} has a bad range", s.m)));
            }
        }
        let mut by_angle: Vec<usize> = (0..sectors.len()).collect();
        by_angle.sort_by(|&a, &b| sectors[a].lo.total_cmp(&sectors[b].lo));
        let first = &sectors[by_angle[0]];
        let last = &sectors[*by_angle.last().unwrap()];
        if first.lo != -PI || last.hi != PI {
            return Err(PartitionError::Invalid("sectors must span [-π, π)".into()));
        }
        for w in by_angle.windows(2) {
            if sectors[w[0]].hi != sectors[w[1]].lo {
                return Err(PartitionError::Invalid(format!(
                    "sectors {} and {} are not contiguous",
                    sectors[w[0]].m, sectors[w[1]].m
                )));
            }
        }
        Ok(Self {
            mu_phi,
            sectors,
            by_angle,
        })
    }

    /// A single sector covering the whole circle.
    pub fn single(mu_phi: f64) -> Result<Self, PartitionError> {
        Self::new(
            mu_phi,
            vec![AzimuthSector {
                m: 1,
                lo: -PI,
                hi: PI,
                rep: 0.0,
            }],
        )
    }

    pub fn mu_phi(&self) -> f64 {
        self.mu_phi
    }

    pub fn sectors(&self) -> &[AzimuthSector] {
        &self.sectors
    }

    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    /// The sector containing `φ` (wrapped into `[-π, π)`), by binary search.
    pub fn sector_of(&self, phi: f64) -> &AzimuthSector {
        let phi = wrap_angle(phi);
        let pos = self.by_angle.partition_point(|&i| self.sectors[i].lo <= phi);
        &self.sectors[self.by_angle[pos.saturating_sub(1)]]
    }

    /// Reference implementation of [`Partition::sector_of`] by linear scan.
    pub fn sector_of_linear(&self, phi: f64) -> &AzimuthSector {
        let phi = wrap_angle(phi);
        self.sectors
            .iter()
            .find(|s| s.contains(phi))
            .expect("sectors cover the circle")
    }
}

/// Fixed `(v, ρ, h, r)` at which the azimuthal sweep is run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCondition {
    pub v: f64,
    pub rho: f64,
    pub h: f64,
    pub r: f64,
}

impl SweepCondition {
    /// The loudest corner of the oracle domain.
    pub fn worst_case(oracle: &dyn NoiseOracle) -> Self {
        let d = oracle.domain();
        Self {
            v: d.v[1],
            rho: d.rho[1],
            h: d.h[0],
            r: d.r[0],
        }
    }

    fn at(&self, phi: f64) -> ObserverRelativeState {
        ObserverRelativeState::new(self.v, self.rho, self.h, self.r, wrap_angle(phi))
    }
}

pub const DEFAULT_MU_PHI: f64 = 1.0;

pub fn default_step() -> f64 {
    0.1f64.to_radians()
}

/// Sweeps `[0, π)` then `[-π, 0)` in steps of about `step`, opening a new
/// sector whenever the level range since the current sector start would
/// exceed `μ_φ`.
///
/// A sector ends at the last grid point that kept its range within `μ_φ`,
/// so each sector's gridded variation never exceeds the tolerance unless it
/// is a single step wide.
pub fn partition_azimuth(
    oracle: &dyn NoiseOracle,
    mu_phi: f64,
    step: f64,
    condition: SweepCondition,
) -> Result<Partition, PartitionError> {
    if !(step.is_finite() && step > 0.0 && step <= PI) {
        return Err(PartitionError::InvalidStep(step));
    }
    if !(mu_phi.is_finite() && mu_phi > 0.0) {
        return Err(PartitionError::InvalidTolerance(mu_phi));
    }
    let n = (PI / step).round().max(1.0) as usize;
    let level = |phi: f64| -> Result<f64, PartitionError> { Ok(oracle.eval(&condition.at(phi))?.value()) };

    let mut halves = Vec::with_capacity(2);
    for (lo, hi) in [(0.0, PI), (-PI, 0.0)] {
        let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * (i as f64 / n as f64)).collect();
        let levels = grid.iter().map(|&p| level(p)).collect::<Result<Vec<_>, _>>()?;
        halves.push((grid, levels));
    }

    let (min, max) = halves
        .iter()
        .flat_map(|(_, l)| l.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if max - min <= mu_phi {
        return Partition::single(mu_phi);
    }

    let mut sectors = Vec::new();
    for (grid, levels) in &halves {
        let mut start = 0;
        let (mut lo_l, mut hi_l) = (levels[0], levels[0]);
        let mut i = 1;
        while i <= n {
            let l = levels[i];
            let (nlo, nhi) = (lo_l.min(l), hi_l.max(l));
            if nhi - nlo <= mu_phi {
                lo_l = nlo;
                hi_l = nhi;
                i += 1;
                continue;
            }
            let m = sectors.len() + 1;
            let end = if i - 1 > start {
                i - 1
            } else {
                let variation = nhi - nlo;
                if variation > 2.0 * mu_phi {
                    return Err(PartitionError::StepTooCoarse { m, variation });
                }
                i
            };
            sectors.push(sector(m, grid[start], grid[end]));
            start = end;
            lo_l = levels[start];
            hi_l = levels[start];
            i = start + 1;
        }
        if start < n {
            let m = sectors.len() + 1;
            sectors.push(sector(m, grid[start], grid[n]));
        }
    }
    Partition::new(mu_phi, sectors)
}

fn sector(m: usize, lo: f64, hi: f64) -> AzimuthSector {
    AzimuthSector {
        m,
        lo,
        hi,
        rep: 0.5 * (lo + hi),
    }
}

/// Largest level range inside each sector on a dense grid of `points_per_sector`
/// azimuths, evaluated at `condition`.
pub fn sector_variation(
    partition: &Partition,
    oracle: &dyn NoiseOracle,
    condition: SweepCondition,
    points_per_sector: usize,
) -> Result<Vec<f64>, PartitionError> {
    let points = points_per_sector.max(2);
    partition
        .sectors()
        .iter()
        .map(|s| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..points {
                // Right end is excluded from the half-open sector.
                let phi = s.lo + s.width() * (i as f64 / points as f64);
                let l = oracle.eval(&condition.at(phi))?.value();
                lo = lo.min(l);
                hi = hi.max(l);
            }
            Ok(hi - lo)
        })
        .collect()
}

/// On-disk layout; radians are authoritative, degrees are for reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub mu_phi: f64,
    pub sectors: Vec<SectorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorRecord {
    pub m: usize,
    pub lo_deg: f64,
    pub hi_deg: f64,
    pub rep_deg: f64,
    pub lo: f64,
    pub hi: f64,
    pub rep: f64,
}

impl From<&Partition> for PartitionFile {
    fn from(p: &Partition) -> Self {
        Self {
            mu_phi: p.mu_phi,
            sectors: p
                .sectors
                .iter()
                .map(|s| SectorRecord {
                    m: s.m,
                    lo_deg: s.lo.to_degrees(),
                    hi_deg: s.hi.to_degrees(),
                    rep_deg: s.rep.to_degrees(),
                    lo: s.lo,
                    hi: s.hi,
                    rep: s.rep,
                })
                .collect(),
        }
    }
}

impl TryFrom<PartitionFile> for Partition {
    type Error = PartitionError;

    fn try_from(f: PartitionFile) -> Result<Self, Self::Error> {
        let sectors = f
            .sectors
            .into_iter()
            .map(|s| AzimuthSector {
                m: s.m,
                lo: s.lo,
                hi: s.hi,
                rep: s.rep,
            })
            .collect();
        Partition::new(f.mu_phi, sectors)
    }
}

impl Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PartitionFile::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = PartitionFile::deserialize(deserializer)?;
        Partition::try_from(file).map_err(serde::de::Error::custom)
    }
}
