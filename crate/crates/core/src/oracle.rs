//! Ground-truth noise functions.
//!
//! [`SyntheticOracle`] is an analytic stand-in for a high-fidelity acoustic
//! simulation; [`RecordedOracle`] replays a table of externally computed levels.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::SoundLevel;
use crate::state::ObserverRelativeState;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state {0:?} is outside the oracle domain")]
    DomainViolation(ObserverRelativeState),
    #[error("noise is undefined at zero slant distance")]
    SingularPoint,
    #[error("oracle is not monotone: {0}")]
    NotMonotone(String),
    #[error("no recorded level for state {0:?}")]
    NotRecorded(ObserverRelativeState),
    #[error("invalid oracle parameters: {0}")]
    InvalidParams(String),
    #[error("reading recorded oracle: {0}")]
    Csv(#[from] csv::Error),
    #[error("reading oracle config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing oracle config: {0}")]
    Json(#[from] serde_json::Error),
}

/// Axis-aligned bounds on `(v, ρ, h, r)`; the azimuth always spans `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub v: [f64; 2],
    pub rho: [f64; 2],
    pub h: [f64; 2],
    pub r: [f64; 2],
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            v: [20.0, 60.0],
            rho: [500.0, 700.0],
            h: [50.0, 450.0],
            r: [0.0, 3200.0],
        }
    }
}

const DOMAIN_SLACK: f64 = 1e-9;

impl Domain {
    pub fn contains(&self, s: &ObserverRelativeState) -> bool {
        let inside = |x: f64, [lo, hi]: [f64; 2]| {
            let pad = DOMAIN_SLACK * (1.0 + hi.abs().max(lo.abs()));
            x >= lo - pad && x <= hi + pad
        };
        inside(s.v, self.v)
            && inside(s.rho, self.rho)
            && inside(s.h, self.h)
            && inside(s.r, self.r)
            && s.phi.is_finite()
            && (-PI..PI).contains(&s.phi)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        for (name, [lo, hi]) in [("v", self.v), ("rho", self.rho), ("h", self.h), ("r", self.r)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(OracleError::InvalidParams(format!("{name} bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ObserverRelativeState {
        let u = |rng: &mut R, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.gen::<f64>();
        ObserverRelativeState {
            v: u(rng, self.v),
            rho: u(rng, self.rho),
            h: u(rng, self.h),
            r: u(rng, self.r),
            phi: -PI + 2.0 * PI * rng.gen::<f64>(),
        }
    }
}

/// A ground-truth noise function `η(ξ_O)`.
///
/// Implementations must be non-decreasing in `v` and `ρ` and non-increasing
/// in `h` and `r`.
pub trait NoiseOracle: Send + Sync {
    fn domain(&self) -> &Domain;

    /// Evaluates without the domain check or the counter.
    fn raw(&self, s: &ObserverRelativeState) -> Result<SoundLevel, OracleError>;

    fn counter(&self) -> &AtomicU64;

    fn eval(&self, s: &ObserverRelativeState) -> Result<SoundLevel, OracleError> {
        if !self.domain().contains(s) {
            return Err(OracleError::DomainViolation(*s));
        }
        self.counter().fetch_add(1, Ordering::Relaxed);
        self.raw(s)
    }

    fn evaluations(&self) -> u64 {
        self.counter().load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    /// Integer so the lobe term is continuous across ±π.
    pub order: u32,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    #[serde(rename = "L0")]
    pub l0: f64,
    pub a_v: f64,
    pub a_rho: f64,
    pub k: f64,
    /// Source size: slant distance is `sqrt(h² + r² + d0²)`.
    pub d0: f64,
    pub v_ref: f64,
    pub rho_ref: f64,
    pub d_ref: f64,
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
    #[serde(default)]
    pub domain: Domain,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            l0: 32.0,
            a_v: 6.0,
            a_rho: 4.0,
            k: 20.0,
            d0: 100.0,
            v_ref: 40.0,
            rho_ref: 600.0,
            d_ref: 100.0,
            harmonics: vec![
                Harmonic { amplitude: 1.0, order: 1, phase: 0.0 },
                Harmonic { amplitude: 0.5, order: 2, phase: 0.6 },
                Harmonic { amplitude: 0.25, order: 3, phase: 1.9 },
            ],
            domain: Domain::default(),
        }
    }
}

impl SyntheticParams {
    /// Azimuth-independent, distance-independent oracle at `level`.
    pub fn constant(level: f64) -> Self {
        Self {
            l0: level,
            a_v: 0.0,
            a_rho: 0.0,
            k: 0.0,
            harmonics: Vec::new(),
            ..Self::default()
        }
    }

    pub fn lobe(&self, phi: f64) -> f64 {
        self.harmonics
            .iter()
            .map(|h| h.amplitude * (h.order as f64 * phi + h.phase).cos())
            .sum()
    }

    pub fn level(&self, s: &ObserverRelativeState) -> Result<f64, OracleError> {
        let d2 = s.h * s.h + s.r * s.r + self.d0 * self.d0;
        if d2 <= 0.0 {
            return Err(OracleError::SingularPoint);
        }
        Ok(self.l0 + self.a_v * (s.v / self.v_ref).log10() + self.a_rho * (s.rho / self.rho_ref).log10()
            - self.k * 0.5 * (d2 / (self.d_ref * self.d_ref)).log10()
            + self.lobe(s.phi))
    }
}

#[derive(Debug)]
pub struct SyntheticOracle {
    params: SyntheticParams,
    evals: AtomicU64,
}

/// Grid points per axis in the construction-time finite-difference sweep.
const SWEEP_POINTS: usize = 7;

impl SyntheticOracle {
    /// Builds the oracle after checking monotonicity by a finite-difference sweep.
    pub fn new(params: SyntheticParams) -> Result<Self, OracleError> {
        let oracle = Self::unchecked(params)?;
        oracle.check_monotone()?;
        Ok(oracle)
    }

    /// Skips the monotonicity sweep. Used to build deliberately corrupted oracles.
    pub fn unchecked(params: SyntheticParams) -> Result<Self, OracleError> {
        params.domain.validate()?;
        let positive = [params.v_ref, params.rho_ref, params.d_ref];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(OracleError::InvalidParams("reference values must be positive".into()));
        }
        if params.domain.v[0] <= 0.0 || params.domain.rho[0] <= 0.0 {
            return Err(OracleError::InvalidParams("v and rho must be positive on the domain".into()));
        }
        Ok(Self {
            params,
            evals: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }

    fn check_monotone(&self) -> Result<(), OracleError> {
        let d = self.params.domain;
        let grid = |[lo, hi]: [f64; 2]| -> Vec<f64> {
            (0..SWEEP_POINTS)
                .map(|i| lo + (hi - lo) * i as f64 / (SWEEP_POINTS - 1) as f64)
                .collect()
        };
        let (vs, rhos, hs, rs) = (grid(d.v), grid(d.rho), grid(d.h), grid(d.r));
        let phis: Vec<f64> = (0..8).map(|i| -PI + PI * i as f64 / 4.0).collect();
        let step = |[lo, hi]: [f64; 2]| ((hi - lo) * 1e-4).max(1e-6);
        let steps = [step(d.v), step(d.rho), step(d.h), step(d.r)];
        let signs = [1.0, 1.0, -1.0, -1.0];
        for &v in &vs {
            for &rho in &rhos {
                for &h in &hs {
                    for &r in &rs {
                        for &phi in &phis {
                            let base = ObserverRelativeState { v, rho, h, r, phi };
                            let l = match self.params.level(&base) {
                                Ok(l) => l,
                                Err(OracleError::SingularPoint) => continue,
                                Err(e) => return Err(e),
                            };
                            for axis in 0..4 {
                                let mut probe = base;
                                let slot = match axis {
                                    0 => &mut probe.v,
                                    1 => &mut probe.rho,
                                    2 => &mut probe.h,
                                    _ => &mut probe.r,
                                };
                                *slot += steps[axis];
                                let diff = self.params.level(&probe)? - l;
                                if signs[axis] * diff < -1e-12 {
                                    return Err(OracleError::NotMonotone(format!(
                                        "axis {axis} has the wrong sign at {base:?}"
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl NoiseOracle for SyntheticOracle {
    fn domain(&self) -> &Domain {
        &self.params.domain
    }

    fn raw(&self, s: &ObserverRelativeState) -> Result<SoundLevel, OracleError> {
        Ok(SoundLevel::db(self.params.level(s)?))
    }

    fn counter(&self) -> &AtomicU64 {
        &self.evals
    }
}

/// One row of a recorded-levels table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub v: f64,
    pub rho: f64,
    pub h: f64,
    pub r: f64,
    pub phi: f64,
    #[serde(rename = "L")]
    pub level: f64,
}

type RecordKey = [i64; 5];

fn record_key(s: &ObserverRelativeState) -> RecordKey {
    let q = |x: f64| (x * 1e6).round() as i64;
    [q(s.v), q(s.rho), q(s.h), q(s.r), q(s.phi)]
}

/// Replays levels recorded at discrete states; any other state is an error.
#[derive(Debug)]
pub struct RecordedOracle {
    table: HashMap<RecordKey, f64>,
    domain: Domain,
    evals: AtomicU64,
}

impl RecordedOracle {
    pub fn from_records(records: &[LevelRecord]) -> Result<Self, OracleError> {
        let first = records
            .first()
            .ok_or_else(|| OracleError::InvalidParams("recorded oracle has no rows".into()))?;
        let mut domain = Domain {
            v: [first.v; 2],
            rho: [first.rho; 2],
            h: [first.h; 2],
            r: [first.r; 2],
        };
        let widen = |b: &mut [f64; 2], x: f64| {
            b[0] = b[0].min(x);
            b[1] = b[1].max(x);
        };
        let mut table = HashMap::with_capacity(records.len());
        for rec in records {
            if !rec.level.is_finite() {
                return Err(OracleError::InvalidParams(format!("non-finite level in {rec:?}")));
            }
            widen(&mut domain.v, rec.v);
            widen(&mut domain.rho, rec.rho);
            widen(&mut domain.h, rec.h);
            widen(&mut domain.r, rec.r);
            let s = ObserverRelativeState::new(rec.v, rec.rho, rec.h, rec.r, rec.phi);
            table.insert(record_key(&s), rec.level);
        }
        Ok(Self {
            table,
            domain,
            evals: AtomicU64::new(0),
        })
    }

    pub fn from_csv(path: &Path) -> Result<Self, OracleError> {
        let mut reader = csv::Reader::from_path(path)?;
        let records = reader.deserialize().collect::<Result<Vec<LevelRecord>, _>>()?;
        Self::from_records(&records)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl NoiseOracle for RecordedOracle {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn raw(&self, s: &ObserverRelativeState) -> Result<SoundLevel, OracleError> {
        self.table
            .get(&record_key(s))
            .map(|&l| SoundLevel::db(l))
            .ok_or(OracleError::NotRecorded(*s))
    }

    fn counter(&self) -> &AtomicU64 {
        &self.evals
    }
}

/// Oracle configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleConfig {
    Synthetic(SyntheticParams),
    /// Like `synthetic` but skips the monotonicity check.
    Corrupted(SyntheticParams),
    Recorded { path: std::path::PathBuf },
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig::Synthetic(SyntheticParams::default())
    }
}

impl OracleConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, OracleError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn build(&self) -> Result<Box<dyn NoiseOracle>, OracleError> {
        Ok(match self {
            OracleConfig::Synthetic(p) => Box::new(SyntheticOracle::new(p.clone())?),
            OracleConfig::Corrupted(p) => Box::new(SyntheticOracle::unchecked(p.clone())?),
            OracleConfig::Recorded { path } => Box::new(RecordedOracle::from_csv(path)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub pairs: usize,
    pub holding: usize,
    pub fraction: f64,
    /// Largest amount by which a dominated state was louder than its dominator.
    pub worst_violation: f64,
}

/// Samples pairs where the first state dominates the second in the monotone
/// order (`v`, `ρ` no lower; `h`, `r` no higher; same `φ`) and counts how
/// often the oracle agrees.
pub fn verify_monotone(oracle: &dyn NoiseOracle, n_pairs: usize, seed: u64) -> Result<MonotoneReport, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = *oracle.domain();
    let between = |rng: &mut ChaCha8Rng, a: f64, b: f64| a + (b - a) * rng.gen::<f64>();
    let mut holding = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let low = d.sample(&mut rng);
        let high = ObserverRelativeState {
            v: between(&mut rng, low.v, d.v[1]),
            rho: between(&mut rng, low.rho, d.rho[1]),
            h: between(&mut rng, d.h[0], low.h),
            r: between(&mut rng, d.r[0], low.r),
            phi: low.phi,
        };
        let gap = oracle.eval(&high)?.value() - oracle.eval(&low)?.value();
        if gap >= -1e-9 {
            holding += 1;
        } else {
            worst = worst.max(-gap);
        }
    }
    Ok(MonotoneReport {
        pairs: n_pairs,
        holding,
        fraction: if n_pairs == 0 { 1.0 } else { holding as f64 / n_pairs as f64 },
        worst_violation: worst,
    })
}
