//! Monotone sector networks, the composite noise model, and its certified
//! worst-case error bound.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::SoundLevel;
use crate::oracle::{Domain, NoiseOracle, OracleError};
use crate::partition::Partition;
use crate::sampling::{AcceptedCube, CertifiedDataset, Sample};
use crate::state::ObserverRelativeState;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    NonFiniteLoss { epoch: usize },
    #[error("sector {m} has {n} training samples; at least 2 are needed")]
    TooFewSamples { m: usize, n: usize },
    #[error("no cubes to certify for sector {m}")]
    EmptyDataset { m: usize },
    #[error("state {0:?} is outside the model domain")]
    DomainViolation(ObserverRelativeState),
    #[error("validation needs at least one point")]
    EmptyRequest,
    #[error("certified bound violated in sectors {:?}", .0.violated_sectors())]
    BoundViolated(Box<ValidationReport>),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputScale {
    Linear,
    /// Logarithmic before min-max normalization; `r` is shifted by
    /// [`R_LOG_SHIFT`] so that `r = 0` is finite.
    #[default]
    Log,
}

pub const R_LOG_SHIFT: f64 = 100.0;

/// Maps one raw input to `[0, 1]`, flipped for inputs the level decreases in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisScale {
    pub lo: f64,
    pub hi: f64,
    pub log: bool,
    pub shift: f64,
    pub decreasing: bool,
}

impl AxisScale {
    fn warp(&self, x: f64) -> f64 {
        if self.log {
            (x + self.shift).ln()
        } else {
            x
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let (a, b) = (self.warp(self.lo), self.warp(self.hi));
        let t = if b > a { (self.warp(x) - a) / (b - a) } else { 0.0 };
        if self.decreasing {
            1.0 - t
        } else {
            t
        }
    }
}

fn axis_scales(domain: &Domain, scale: InputScale) -> [AxisScale; 4] {
    let log = scale == InputScale::Log;
    let axis = |[lo, hi]: [f64; 2], shift: f64, decreasing: bool| AxisScale {
        lo,
        hi,
        log,
        shift,
        decreasing,
    };
    [
        axis(domain.v, 0.0, false),
        axis(domain.rho, 0.0, false),
        axis(domain.h, 0.0, true),
        axis(domain.r, R_LOG_SHIFT, true),
    ]
}

/// Floor on the target standard deviation used for output scaling.
const MIN_TARGET_SCALE: f64 = 1e-6;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense layer whose effective weights are `softplus(raw) ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub raw: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serialized form of [`MonotonicNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub scales: [AxisScale; 4],
    pub layers: Vec<Layer>,
    pub y_offset: f64,
    pub y_scale: f64,
}

/// Multilayer perceptron that is non-decreasing in `v`, `ρ` and
/// non-increasing in `h`, `r` for every parameter value: weights are
/// nonnegative, hidden activations are `tanh`, and `h`, `r` enter flipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkParams", into = "NetworkParams")]
pub struct MonotonicNetwork {
    params: NetworkParams,
    /// `softplus(raw)` per layer.
    weights: Vec<Vec<f64>>,
}

impl TryFrom<NetworkParams> for MonotonicNetwork {
    type Error = ModelError;

    fn try_from(params: NetworkParams) -> Result<Self, ModelError> {
        let mut inputs = 4;
        for l in &params.layers {
            if l.inputs != inputs || l.raw.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(ModelError::Invalid("layer shapes do not chain".into()));
            }
            if l.raw.iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(ModelError::Invalid("non-finite parameter".into()));
            }
            inputs = l.outputs;
        }
        if inputs != 1 {
            return Err(ModelError::Invalid("network must have one output".into()));
        }
        if !(params.y_scale.is_finite() && params.y_scale > 0.0 && params.y_offset.is_finite()) {
            return Err(ModelError::Invalid("output scale must be positive".into()));
        }
        Ok(Self::from_params(params))
    }
}

impl From<MonotonicNetwork> for NetworkParams {
    fn from(n: MonotonicNetwork) -> Self {
        n.params
    }
}

impl MonotonicNetwork {
    fn from_params(params: NetworkParams) -> Self {
        let weights = params.layers.iter().map(|l| l.raw.iter().map(|&w| softplus(w)).collect()).collect();
        Self { params, weights }
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn features(&self, s: &ObserverRelativeState) -> [f64; 4] {
        let sc = &self.params.scales;
        [sc[0].apply(s.v), sc[1].apply(s.rho), sc[2].apply(s.h), sc[3].apply(s.r)]
    }

    /// Network output in dBA at `(v, ρ, h, r)`; the azimuth is ignored.
    pub fn eval(&self, s: &ObserverRelativeState) -> f64 {
        self.eval_features(&self.features(s))
    }

    pub fn eval_features(&self, x: &[f64; 4]) -> f64 {
        let mut cur: Vec<f64> = x.to_vec();
        let last = self.params.layers.len() - 1;
        for (i, (layer, w)) in self.params.layers.iter().zip(&self.weights).enumerate() {
            let mut next = layer.bias.clone();
            for (o, acc) in next.iter_mut().enumerate() {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                *acc += row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
                if i < last {
                    *acc = acc.tanh();
                }
            }
            cur = next;
        }
        self.params.y_offset + self.params.y_scale * cur[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    /// Adam step size, decayed geometrically to `final_learning_rate`.
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    /// Training uses a seeded subsample of at most this many samples.
    pub max_samples: usize,
    pub input_scale: InputScale,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            epochs: 2000,
            learning_rate: 0.02,
            final_learning_rate: 0.001,
            max_samples: 2048,
            input_scale: InputScale::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub samples: usize,
    pub epochs: usize,
    /// Mean squared error in dB² on the training subsample.
    pub mse: f64,
    pub max_abs_error: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Flat parameter vector: per layer, raw weights then biases.
fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.raw.iter().chain(&l.bias).copied()).collect()
}

fn unflatten(layers: &mut [Layer], flat: &[f64]) {
    let mut i = 0;
    for l in layers {
        let nw = l.raw.len();
        l.raw.copy_from_slice(&flat[i..i + nw]);
        i += nw;
        let nb = l.bias.len();
        l.bias.copy_from_slice(&flat[i..i + nb]);
        i += nb;
    }
}

/// Fits a monotone network to `samples` by full-batch Adam on mean squared error.
pub fn train_sector(
    samples: &[Sample],
    domain: &Domain,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MonotonicNetwork, TrainReport), ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::TooFewSamples { m: 0, n: samples.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<&Sample> = samples.iter().collect();
    if chosen.len() > cfg.max_samples {
        chosen.shuffle(&mut rng);
        chosen.truncate(cfg.max_samples.max(2));
    }

    let scales = axis_scales(domain, cfg.input_scale);
    let feat = |s: &ObserverRelativeState| [scales[0].apply(s.v), scales[1].apply(s.rho), scales[2].apply(s.h), scales[3].apply(s.r)];
    let xs: Vec<[f64; 4]> = chosen.iter().map(|s| feat(&s.state)).collect();
    let ys: Vec<f64> = chosen.iter().map(|s| s.level.value()).collect();
    let n = xs.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = var.sqrt().max(MIN_TARGET_SCALE);
    let targets: Vec<f64> = ys.iter().map(|y| (y - mean) / y_scale).collect();

    // Raw weights start near softplus⁻¹ of a fan-in-scaled positive value;
    // biases centre each unit on the midpoint of its input range.
    let mut sizes = vec![4];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    for (li, pair) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let target = 1.5 / fan_in as f64;
        let base = target.exp_m1().ln();
        let raw: Vec<f64> = (0..fan_in * fan_out).map(|_| base + rng.gen_range(-1.0..1.0)).collect();
        let input_mid = if li == 0 { 0.5 } else { 0.0 };
        let bias = (0..fan_out)
            .map(|o| {
                let row = &raw[o * fan_in..(o + 1) * fan_in];
                -input_mid * row.iter().map(|&w| softplus(w)).sum::<f64>() + rng.gen_range(-0.5..0.5)
            })
            .collect();
        layers.push(Layer {
            inputs: fan_in,
            outputs: fan_out,
            raw,
            bias,
        });
    }

    let mut flat = flatten(&layers);
    let mut grads = vec![0.0; flat.len()];
    let mut adam = Adam::new(flat.len());
    let n_layers = layers.len();
    // Activations per layer for the whole batch, row-major `n × width`.
    let mut acts: Vec<Vec<f64>> = sizes.iter().map(|&w| vec![0.0; n * w]).collect();
    for (i, x) in xs.iter().enumerate() {
        acts[0][i * 4..i * 4 + 4].copy_from_slice(x);
    }
    let mut deltas: Vec<Vec<f64>> = sizes.iter().map(|&w| vec![0.0; n * w]).collect();
    let mut eff: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.raw.len()]).collect();
    let decay = if cfg.epochs > 1 && cfg.final_learning_rate > 0.0 {
        (cfg.final_learning_rate / cfg.learning_rate).ln() / (cfg.epochs - 1) as f64
    } else {
        0.0
    };
    let mut loss = f64::NAN;

    for epoch in 0..=cfg.epochs {
        unflatten(&mut layers, &flat);
        for (e, l) in eff.iter_mut().zip(&layers) {
            for (w, &r) in e.iter_mut().zip(&l.raw) {
                *w = softplus(r);
            }
        }
        // Forward.
        for (li, l) in layers.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(li + 1);
            let input = &prev[li];
            let out = &mut rest[0];
            let w = &eff[li];
            let hidden = li + 1 < n_layers;
            for s in 0..n {
                let x = &input[s * l.inputs..(s + 1) * l.inputs];
                for o in 0..l.outputs {
                    let row = &w[o * l.inputs..(o + 1) * l.inputs];
                    let mut z = l.bias[o];
                    for k in 0..l.inputs {
                        z += row[k] * x[k];
                    }
                    out[s * l.outputs + o] = if hidden { z.tanh() } else { z };
                }
            }
        }
        let pred = &acts[n_layers];
        loss = pred.iter().zip(&targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        if epoch == cfg.epochs {
            break;
        }

        // Backward.
        for s in 0..n {
            deltas[n_layers][s] = 2.0 * (pred[s] - targets[s]) / n as f64;
        }
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut offset = flat.len();
        for li in (0..n_layers).rev() {
            let l = &layers[li];
            let nw = l.raw.len();
            offset -= nw + l.outputs;
            let (gw, gb) = grads[offset..offset + nw + l.outputs].split_at_mut(nw);
            let w = &eff[li];
            let (dprev, dcur) = deltas.split_at_mut(li + 1);
            let dout = &dcur[0];
            let input = &acts[li];
            let din = &mut dprev[li];
            din.iter_mut().for_each(|d| *d = 0.0);
            for s in 0..n {
                let x = &input[s * l.inputs..(s + 1) * l.inputs];
                let dx = &mut din[s * l.inputs..(s + 1) * l.inputs];
                for o in 0..l.outputs {
                    let d = dout[s * l.outputs + o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &w[o * l.inputs..(o + 1) * l.inputs];
                    let grow = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                    for k in 0..l.inputs {
                        grow[k] += d * x[k];
                        dx[k] += d * row[k];
                    }
                }
            }
            if li > 0 {
                // Through tanh of the previous layer.
                for (d, a) in din.iter_mut().zip(input.iter()) {
                    *d *= 1.0 - a * a;
                }
            }
            // Through softplus.
            for (g, &r) in gw.iter_mut().zip(&l.raw) {
                *g *= sigmoid(r);
            }
        }
        let lr = cfg.learning_rate * (decay * epoch as f64).exp();
        adam.step(&mut flat, &grads, lr);
    }

    let net = MonotonicNetwork::from_params(NetworkParams {
        scales,
        layers,
        y_offset: mean,
        y_scale,
    });
    let max_abs_error = chosen
        .iter()
        .map(|s| (net.eval(&s.state) - s.level.value()).abs())
        .fold(0.0, f64::max);
    Ok((
        net,
        TrainReport {
            samples: n,
            epochs: cfg.epochs,
            mse: loss * y_scale * y_scale,
            max_abs_error,
        },
    ))
}

/// Bound terms for one certification cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeBound {
    /// Half the oracle corner gap.
    pub t1: f64,
    /// Half the network corner gap.
    pub t2: f64,
    /// Distance between the oracle and network corner midpoints.
    pub t3: f64,
    pub bound: f64,
}

impl CubeBound {
    /// `μ_φ + T1 + T2 + T3` for a cube with oracle corners `(l_max, l_min)` and
    /// network corners `(nn_max, nn_min)`.
    pub fn new(mu_phi: f64, l_max: f64, l_min: f64, nn_max: f64, nn_min: f64) -> Self {
        let c = 0.5 * (l_max + l_min);
        let d = 0.5 * (nn_max + nn_min);
        let t1 = (l_max - c).abs().max((l_min - c).abs());
        let t2 = (nn_max - d).abs().max((nn_min - d).abs());
        let t3 = (c - d).abs();
        Self {
            t1,
            t2,
            t3,
            bound: mu_phi + t1 + t2 + t3,
        }
    }
}

/// One sector's certificate: the largest cube bound and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub m: usize,
    pub delta: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Index of the cube attaining `delta` in the certified slice.
    pub argmax: usize,
    pub cubes: usize,
}

pub fn cube_bounds(net: &MonotonicNetwork, cubes: &[AcceptedCube], mu_phi: f64) -> Vec<CubeBound> {
    cubes
        .iter()
        .map(|c| {
            let nn_max = net.eval(&c.cube.max_corner());
            let nn_min = net.eval(&c.cube.min_corner());
            CubeBound::new(mu_phi, c.l_max, c.l_min, nn_max, nn_min)
        })
        .collect()
}

/// Certified bound `δ_m = max over cubes of μ_φ + T1 + T2 + T3`.
pub fn certify(net: &MonotonicNetwork, m: usize, cubes: &[AcceptedCube], mu_phi: f64) -> Result<Certification, ModelError> {
    let bounds = cube_bounds(net, cubes, mu_phi);
    let (argmax, worst) = bounds
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.bound.total_cmp(&b.1.bound))
        .ok_or(ModelError::EmptyDataset { m })?;
    Ok(Certification {
        m,
        delta: worst.bound,
        t1: worst.t1,
        t2: worst.t2,
        t3: worst.t3,
        argmax,
        cubes: cubes.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorModel {
    pub m: usize,
    pub net: MonotonicNetwork,
    pub certification: Certification,
    pub training: TrainReport,
}

/// Sector-dispatched noise model with a certified bound per sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CompositeFile", into = "CompositeFile")]
pub struct CompositeNoiseModel {
    partition: Partition,
    domain: Domain,
    models: Vec<SectorModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeFile {
    pub partition: Partition,
    pub domain: Domain,
    pub delta: f64,
    pub sectors: Vec<SectorModel>,
}

impl TryFrom<CompositeFile> for CompositeNoiseModel {
    type Error = ModelError;

    fn try_from(f: CompositeFile) -> Result<Self, ModelError> {
        CompositeNoiseModel::new(f.partition, f.domain, f.sectors)
    }
}

impl From<CompositeNoiseModel> for CompositeFile {
    fn from(m: CompositeNoiseModel) -> Self {
        Self {
            delta: m.delta(),
            partition: m.partition,
            domain: m.domain,
            sectors: m.models,
        }
    }
}

impl CompositeNoiseModel {
    pub fn new(partition: Partition, domain: Domain, mut models: Vec<SectorModel>) -> Result<Self, ModelError> {
        models.sort_by_key(|s| s.m);
        if models.len() != partition.len() || models.iter().enumerate().any(|(i, s)| s.m != i + 1) {
            return Err(ModelError::Invalid("need exactly one model per sector".into()));
        }
        if models.iter().any(|s| !(s.certification.delta >= partition.mu_phi())) {
            return Err(ModelError::Invalid("sector bound is below mu_phi".into()));
        }
        Ok(Self {
            partition,
            domain,
            models,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn sectors(&self) -> &[SectorModel] {
        &self.models
    }

    pub fn sector_model(&self, phi: f64) -> &SectorModel {
        &self.models[self.partition.sector_of(phi).m - 1]
    }

    /// Global bound `δ = max_m δ_m`.
    pub fn delta(&self) -> f64 {
        self.models.iter().map(|s| s.certification.delta).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn predict(&self, s: &ObserverRelativeState) -> Result<SoundLevel, ModelError> {
        if !self.domain.contains(s) {
            return Err(ModelError::DomainViolation(*s));
        }
        Ok(SoundLevel::db(self.sector_model(s.phi).net.eval(s)))
    }

    /// Certification report rows, one per sector.
    pub fn report(&self) -> Vec<Certification> {
        self.models.iter().map(|s| s.certification).collect()
    }
}


fn sector_seed(seed: u64, m: usize) -> u64 {
    // splitmix64 finalizer over the sector number.
    let mut z = seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains one network per sector on `train` and certifies it on the cubes of
/// `certify_on`.
pub fn fit_composite(
    partition: &Partition,
    domain: &Domain,
    train: &CertifiedDataset,
    certify_on: &CertifiedDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CompositeNoiseModel, ModelError> {
    let k = partition.len();
    let mut samples: Vec<Vec<Sample>> = vec![Vec::new(); k];
    for s in &train.samples {
        samples[partition.sector_of(s.state.phi).m - 1].push(*s);
    }
    let mut cubes: Vec<Vec<AcceptedCube>> = vec![Vec::new(); k];
    for c in &certify_on.cubes {
        cubes[partition.sector_of(c.cube.phi).m - 1].push(*c);
    }
    let mut models = Vec::with_capacity(k);
    for sector in partition.sectors() {
        let m = sector.m;
        let data = &samples[m - 1];
        let (net, training) = train_sector(data, domain, cfg, sector_seed(seed, m)).map_err(|e| match e {
            ModelError::TooFewSamples { n, .. } => ModelError::TooFewSamples { m, n },
            e => e,
        })?;
        let certification = certify(&net, m, &cubes[m - 1], partition.mu_phi())?;
        models.push(SectorModel {
            m,
            net,
            certification,
            training,
        });
    }
    CompositeNoiseModel::new(partition.clone(), *domain, models)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorValidation {
    pub m: usize,
    pub points: usize,
    pub delta: f64,
    pub max_error: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub points: usize,
    pub sectors: Vec<SectorValidation>,
}

impl ValidationReport {
    pub fn violations(&self) -> usize {
        self.sectors.iter().map(|s| s.violations).sum()
    }

    pub fn violated_sectors(&self) -> Vec<usize> {
        self.sectors.iter().filter(|s| s.violations > 0).map(|s| s.m).collect()
    }
}

/// Checks `|η − f̂| ≤ δ_m` at `n` uniform random states of the model domain.
pub fn validate_bound(
    model: &CompositeNoiseModel,
    oracle: &dyn NoiseOracle,
    n: usize,
    seed: u64,
) -> Result<ValidationReport, ModelError> {
    if n == 0 {
        return Err(ModelError::EmptyRequest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sectors: Vec<SectorValidation> = model
        .sectors()
        .iter()
        .map(|s| SectorValidation {
            m: s.m,
            points: 0,
            delta: s.certification.delta,
            max_error: 0.0,
            violations: 0,
        })
        .collect();
    for _ in 0..n {
        let s = model.domain().sample(&mut rng);
        let truth = oracle.eval(&s)?;
        let sm = model.sector_model(s.phi);
        let err = (truth.value() - sm.net.eval(&s)).abs();
        let row = &mut sectors[sm.m - 1];
        row.points += 1;
        row.max_error = row.max_error.max(if err.is_nan() { f64::INFINITY } else { err });
        if !(err <= row.delta) {
            row.violations += 1;
        }
    }
    let report = ValidationReport { points: n, sectors };
    if report.violations() > 0 {
        return Err(ModelError::BoundViolated(Box::new(report)));
    }
    Ok(report)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::oracle::{SyntheticOracle, SyntheticParams};
    use crate::partition::{default_step, partition_azimuth, SweepCondition};
    use crate::sampling::{sample_domain, ActiveConfig, Hypercube};
    use proptest::prelude::*;
    use rand::Rng;

    fn rel(v: f64, rho: f64, h: f64, r: f64) -> ObserverRelativeState {
        ObserverRelativeState::new(v, rho, h, r, 0.0)
    }

    fn grid_samples(domain: &Domain, f: impl Fn(&ObserverRelativeState) -> f64) -> Vec<Sample> {
        let mut out = Vec::new();
        let steps = 7;
        let at = |[lo, hi]: [f64; 2], i: usize| lo + (hi - lo) * i as f64 / (steps - 1) as f64;
        for a in 0..steps {
            for b in 0..3 {
                for c in 0..steps {
                    for d in 0..steps {
                        let s = rel(at(domain.v, a), at(domain.rho, b * 3), at(domain.h, c), at(domain.r, d));
                        out.push(Sample {
                            state: s,
                            level: SoundLevel::db(f(&s)),
                        });
                    }
                }
            }
        }
        out
    }

    pub(crate) fn random_network(seed: u64) -> MonotonicNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [4, 8, 8, 1];
        let layers = sizes
            .windows(2)
            .map(|p| Layer {
                inputs: p[0],
                outputs: p[1],
                raw: (0..p[0] * p[1]).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                bias: (0..p[1]).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            })
            .collect();
        MonotonicNetwork::try_from(NetworkParams {
            scales: axis_scales(&Domain::default(), InputScale::Log),
            layers,
            y_offset: 30.0,
            y_scale: 4.0,
        })
        .unwrap()
    }

    #[test]
    fn hand_built_cube_bound() {
        let b = CubeBound::new(1.0, 32.0, 30.0, 31.5, 30.5);
        assert_eq!((b.t1, b.t2, b.t3), (1.0, 0.5, 0.0));
        assert_eq!(b.bound, 2.5);
        let b = CubeBound::new(0.5, 32.0, 30.0, 33.0, 32.0);
        assert_eq!(b.t3, 1.5);
        assert_eq!(b.bound, 0.5 + 1.0 + 0.5 + 1.5);
    }

    #[test]
    fn constant_target_is_fit_exactly() {
        let domain = Domain::default();
        let data = grid_samples(&domain, |_| 37.25);
        let (net, report) = train_sector(&data, &domain, &TrainConfig::default(), 1).unwrap();
        assert!(report.max_abs_error < 1e-3, "{report:?}");
        for s in [rel(20.0, 500.0, 450.0, 3200.0), rel(60.0, 700.0, 50.0, 0.0), rel(41.0, 612.0, 212.0, 777.0)] {
            assert!((net.eval(&s) - 37.25).abs() < 1e-3);
        }
    }

    #[test]
    fn affine_target_is_fit_closely() {
        let domain = Domain::default();
        let f = |s: &ObserverRelativeState| 30.0 + 0.2 * s.v + 0.01 * s.rho - 0.02 * s.h - 0.002 * s.r;
        let data = grid_samples(&domain, f);
        let cfg = TrainConfig {
            input_scale: InputScale::Linear,
            ..TrainConfig::default()
        };
        let (_, report) = train_sector(&data, &domain, &cfg, 2).unwrap();
        assert!(report.mse < 0.01, "{report:?}");
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let one = [Sample {
            state: rel(30.0, 600.0, 100.0, 10.0),
            level: SoundLevel::db(30.0),
        }];
        assert!(matches!(
            train_sector(&one, &Domain::default(), &TrainConfig::default(), 0),
            Err(ModelError::TooFewSamples { n: 1, .. })
        ));
    }

    #[test]
    fn divergent_training_reports_non_finite_loss() {
        let domain = Domain::default();
        let data = grid_samples(&domain, |_| 30.0);
        let cfg = TrainConfig {
            learning_rate: f64::INFINITY,
            final_learning_rate: 0.0,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_sector(&data, &domain, &cfg, 0),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn params_with_bad_shapes_are_rejected() {
        let mut p = random_network(3).params().clone();
        p.layers[1].inputs = 7;
        assert!(MonotonicNetwork::try_from(p).is_err());
        let mut p = random_network(3).params().clone();
        p.y_scale = -1.0;
        assert!(MonotonicNetwork::try_from(p).is_err());
    }

    // A small composite over a narrow slice of the domain, shared by the
    // certification tests below.
    struct Fixture {
        oracle: SyntheticOracle,
        model: CompositeNoiseModel,
        data: CertifiedDataset,
    }

    fn fixture() -> &'static Fixture {
        static F: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
        F.get_or_init(|| {
            let domain = Domain {
                v: [30.0, 50.0],
                rho: [550.0, 650.0],
                h: [200.0, 400.0],
                r: [500.0, 1500.0],
            };
            let oracle = SyntheticOracle::new(SyntheticParams {
                domain,
                ..SyntheticParams::default()
            })
            .unwrap();
            let partition = partition_azimuth(&oracle, 1.0, default_step(), SweepCondition::worst_case(&oracle)).unwrap();
            let cfg = ActiveConfig {
                mu_act: 0.5,
                ..ActiveConfig::default()
            };
            let data = sample_domain(&oracle, &partition, &cfg).unwrap();
            let train = TrainConfig {
                epochs: 800,
                ..TrainConfig::default()
            };
            let model = fit_composite(&partition, &domain, &data, &data, &train, 9).unwrap();
            Fixture { oracle, model, data }
        })
    }


    #[test]
    fn certificate_matches_recomputation() {
        let f = fixture();
        for sm in f.model.sectors() {
            let rep = f.model.partition().sectors()[sm.m - 1].rep;
            let mut worst = f64::NEG_INFINITY;
            for c in f.data.cubes.iter().filter(|c| c.cube.phi == rep) {
                let a = sm.net.eval(&c.cube.max_corner());
                let b = sm.net.eval(&c.cube.min_corner());
                let bound = 1.0 + (c.l_max - c.l_min) / 2.0 + (a - b).abs() / 2.0 + ((c.l_max + c.l_min) / 2.0 - (a + b) / 2.0).abs();
                worst = worst.max(bound);
            }
            assert!((worst - sm.certification.delta).abs() < 1e-12);
        }
    }

    #[test]
    fn certified_bound_holds_on_random_states() {
        let f = fixture();
        let report = validate_bound(&f.model, &f.oracle, 20_000, 4).unwrap();
        assert_eq!(report.violations(), 0);
        assert_eq!(report.sectors.iter().map(|s| s.points).sum::<usize>(), 20_000);
        assert!(matches!(validate_bound(&f.model, &f.oracle, 0, 4), Err(ModelError::EmptyRequest)));
    }

    #[test]
    fn shifted_oracle_violates_the_bound() {
        let f = fixture();
        let shifted = SyntheticOracle::unchecked(SyntheticParams {
            l0: SyntheticParams::default().l0 + f.model.delta() + 1.0,
            domain: *f.model.domain(),
            ..SyntheticParams::default()
        })
        .unwrap();
        match validate_bound(&f.model, &shifted, 1000, 4) {
            Err(ModelError::BoundViolated(r)) => assert!(r.violations() > 900),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predict_rejects_states_outside_the_domain() {
        let f = fixture();
        assert!(matches!(
            f.model.predict(&rel(20.0, 600.0, 300.0, 1000.0)),
            Err(ModelError::DomainViolation(_))
        ));
        assert!(f.model.predict(&rel(40.0, 600.0, 300.0, 1000.0)).is_ok());
    }

    #[test]
    fn model_json_round_trips() {
        let f = fixture();
        let json = serde_json::to_string(&f.model).unwrap();
        let back: CompositeNoiseModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f.model);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn network_is_monotone_for_any_weights(
            seed in any::<u64>(),
            v in 20.0..60.0f64, dv in 0.0..40.0f64,
            rho in 500.0..700.0f64, drho in 0.0..200.0f64,
            h in 50.0..450.0f64, dh in 0.0..400.0f64,
            r in 0.0..3200.0f64, dr in 0.0..3200.0f64,
        ) {
            let net = random_network(seed);
            let low = rel(v, rho, h, r);
            let base = net.eval(&low);
            prop_assert!(net.eval(&rel((v + dv).min(60.0), rho, h, r)) >= base);
            prop_assert!(net.eval(&rel(v, (rho + drho).min(700.0), h, r)) >= base);
            prop_assert!(net.eval(&rel(v, rho, (h - dh).max(50.0), r)) >= base);
            prop_assert!(net.eval(&rel(v, rho, h, (r - dr).max(0.0))) >= base);
        }

        #[test]
        fn cube_bound_covers_every_interior_point(u in prop::array::uniform4(0.0..1.0f64), idx in any::<prop::sample::Index>()) {
            let f = fixture();
            let c = f.data.cubes[idx.index(f.data.cubes.len())];
            let Hypercube { v, rho, h, r, phi } = c.cube;
            let lerp = |[a, b]: [f64; 2], t: f64| a + (b - a) * t;
            let s = ObserverRelativeState::new(lerp(v, u[0]), lerp(rho, u[1]), lerp(h, u[2]), lerp(r, u[3]), phi);
            let sm = f.model.sector_model(phi);
            let bound = CubeBound::new(0.0, c.l_max, c.l_min, sm.net.eval(&c.cube.max_corner()), sm.net.eval(&c.cube.min_corner()));
            let err = (f.oracle.raw(&s).unwrap().value() - sm.net.eval(&s)).abs();
            prop_assert!(err <= bound.bound + 1e-9, "err {} bound {:?}", err, bound);
        }
    }
}
