//! Noise-aware kinodynamic RRT* over δ-tightened abatement zones, with
//! sequential multi-vehicle planning on renewed noise budgets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::{db_subtract, SoundLevel};
use crate::model::{CompositeNoiseModel, ModelError};
use crate::oracle::{NoiseOracle, OracleError};
use crate::state::{
    kino_dist, relative_state, simulate_step, wrap_angle, Airspace, ControlBounds, EvtolState, NoiseAbatementZone,
    ObserverRelativeState, StateError,
};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("tightening zone {zone} by delta leaves no noise budget")]
    InfeasibleTightening { zone: String },
    #[error("no path found after {} iterations", .0.iterations)]
    NoPath(Box<PlanStats>),
    #[error("noise budget of zone {zone} exhausted at step {t}")]
    BudgetExhausted { zone: String, t: usize },
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Anything that predicts the instantaneous level at an observer.
pub trait NoisePredictor: Sync {
    fn predict(&self, s: &ObserverRelativeState) -> Result<SoundLevel, ModelError>;
}

impl NoisePredictor for CompositeNoiseModel {
    fn predict(&self, s: &ObserverRelativeState) -> Result<SoundLevel, ModelError> {
        CompositeNoiseModel::predict(self, s)
    }
}

/// Uses the oracle itself as the predictor; its error bound is zero.
pub struct OraclePredictor<'a>(pub &'a dyn NoiseOracle);

impl NoisePredictor for OraclePredictor<'_> {
    fn predict(&self, s: &ObserverRelativeState) -> Result<SoundLevel, ModelError> {
        Ok(self.0.eval(s)?)
    }
}

/// How the model error bound shrinks a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Tightening {
    /// `L̄ − δ`; sound for an additive error bound.
    #[default]
    Additive,
    /// `10·log10(10^(L̄/10) − 10^(δ/10))`.
    EnergyDomain,
}

impl Tightening {
    fn apply(self, limit: SoundLevel, delta: SoundLevel) -> Option<SoundLevel> {
        if delta.is_silent() {
            return Some(limit);
        }
        if !(limit.energy() > delta.energy()) {
            return None;
        }
        match self {
            Tightening::Additive => Some(limit.offset(-delta.value())),
            Tightening::EnergyDomain => db_subtract(limit, delta).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightenedZone {
    pub base: NoiseAbatementZone,
    pub delta: SoundLevel,
    pub l_inst: SoundLevel,
    pub l_eq: SoundLevel,
}

pub fn tighten_zones(
    zones: &[NoiseAbatementZone],
    delta: SoundLevel,
    rule: Tightening,
) -> Result<Vec<TightenedZone>, PlannerError> {
    zones
        .iter()
        .map(|z| {
            let bad = || PlannerError::InfeasibleTightening { zone: z.id.clone() };
            Ok(TightenedZone {
                base: z.clone(),
                delta,
                l_inst: rule.apply(z.l_inst, delta).ok_or_else(bad)?,
                l_eq: rule.apply(z.l_eq, delta).ok_or_else(bad)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Radius around the goal inside which the proximity terms act, m.
    pub d0: f64,
    pub w_speed: f64,
    pub w_d: f64,
    pub w_q: f64,
    /// Altitude weight inside the `w_q` group.
    #[serde(rename = "Q_h")]
    pub q_alt: f64,
    pub r_v: f64,
    pub r_vh: f64,
    /// Near-goal altitude weight.
    pub q_h: f64,
    /// Near-goal speed weight.
    pub q_v: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            d0: 300.0,
            w_speed: 0.05,
            w_d: 1.0,
            w_q: 0.01,
            q_alt: 1.0,
            r_v: 1.0,
            r_vh: 1.0,
            q_h: 0.005,
            q_v: 0.01,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let all = [self.d0, self.w_speed, self.w_d, self.w_q, self.q_alt, self.r_v, self.r_vh, self.q_h, self.q_v];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(PlannerError::InvalidConfig("cost weights must be nonnegative".into()))
        }
    }
}

fn dist3(a: &EvtolState, b: &EvtolState) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Accumulated cost `J_parent + c` of the step `a → b`.
pub fn get_cost(a: &EvtolState, b: &EvtolState, goal: &EvtolState, w: &CostWeights, j_parent: f64, dt: f64) -> f64 {
    let v_h = (b.z - a.z) / dt;
    let d_goal = dist3(b, goal);
    let c = w.w_d * kino_dist(a, b) + w.w_q * (w.q_alt * b.z + w.r_v * (b.v - a.v).abs() + w.r_vh * v_h.abs())
        - w.w_speed * b.v
        + (w.d0 - d_goal).max(0.0) * (w.q_h * b.z + w.q_v * b.v);
    j_parent + c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Steering {
    /// Uniform random sampling of the control box.
    #[default]
    Urs,
    /// Physics-based sampling: a noise failure at `(v, h)` removes all
    /// faster and lower commands for the rest of the call.
    Pbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub n_iter: usize,
    pub n_attempts: usize,
    /// Euclidean goal tolerance, m.
    pub goal_tolerance: f64,
    pub step_seconds: f64,
    pub goal_bias: f64,
    pub collision_radius: f64,
    pub seed: u64,
    pub steering: Steering,
    /// Only nodes within this distance of a new node are rewire candidates;
    /// `None` scans the whole tree.
    pub rewire_radius: Option<f64>,
    /// A rewired leaf must land within this kinodynamic distance of its old state.
    pub rewire_tolerance: f64,
    /// Weight of the distance to the steering target when choosing among
    /// admissible candidates.
    pub target_weight: f64,
    /// Longest plan, in steps.
    pub max_steps: usize,
    /// Stop at the first node inside the goal tolerance instead of running
    /// all iterations.
    pub stop_at_goal: bool,
    /// Also try the exact one-step connection to the steering target when it
    /// is admissible. It draws no random numbers and never prunes.
    pub direct_connect: bool,
    pub tightening: Tightening,
    pub bounds: ControlBounds,
    pub airspace: Airspace,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n_iter: 3000,
            n_attempts: 20,
            goal_tolerance: 150.0,
            step_seconds: 5.0,
            goal_bias: 0.1,
            collision_radius: 100.0,
            seed: 0,
            steering: Steering::Urs,
            rewire_radius: None,
            rewire_tolerance: 25.0,
            target_weight: 1.0,
            max_steps: 120,
            stop_at_goal: false,
            direct_connect: true,
            tightening: Tightening::Additive,
            bounds: ControlBounds::default(),
            airspace: Airspace::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.into()));
        if self.n_iter == 0 || self.n_attempts == 0 || self.max_steps == 0 {
            return bad("iteration, attempt and step counts must be positive");
        }
        if !(self.goal_tolerance > 0.0 && self.step_seconds > 0.0 && self.collision_radius >= 0.0) {
            return bad("goal tolerance and step must be positive");
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return bad("goal bias must be a probability");
        }
        if !(self.rewire_tolerance >= 0.0 && self.target_weight >= 0.0) {
            return bad("rewire tolerance and target weight must be nonnegative");
        }
        if self.rewire_radius.is_some_and(|r| !(r >= 0.0)) {
            return bad("rewire radius must be nonnegative");
        }
        self.bounds.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub state: EvtolState,
    pub parent: Option<usize>,
    pub cost: f64,
    /// Absolute step index.
    pub time: usize,
    /// Predicted instantaneous level per zone.
    pub levels: Vec<SoundLevel>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub iterations: usize,
    /// Iteration at which a node first came within the goal tolerance.
    pub first_goal_iteration: Option<usize>,
    pub nodes: usize,
    pub steer_calls: usize,
    pub noise_failures: usize,
    pub collision_failures: usize,
    pub domain_failures: usize,
    /// PBS box shrinks.
    pub pruned: usize,
    pub rewires: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrace {
    pub zone: String,
    /// Predicted level per plan step.
    pub inst: Vec<SoundLevel>,
    /// Windowed equivalent level per plan step.
    pub leq: Vec<SoundLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    /// Absolute step of the first state.
    pub t0: usize,
    pub step_seconds: f64,
    pub states: Vec<EvtolState>,
    pub traces: Vec<NoiseTrace>,
    pub stats: PlanStats,
}

impl MotionPlan {
    pub fn t_final(&self) -> usize {
        self.t0 + self.states.len() - 1
    }

    pub fn duration(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.step_seconds
    }

    pub fn state_at(&self, t: usize) -> Option<&EvtolState> {
        t.checked_sub(self.t0).and_then(|i| self.states.get(i))
    }

    pub fn mean_altitude(&self) -> f64 {
        self.states.iter().map(|s| s.z).sum::<f64>() / self.states.len() as f64
    }
}

/// Number of samples in the window ending at absolute step `t`.
fn window_count(t: usize, dt: usize) -> usize {
    t.min(dt) + 1
}

fn window_start(t: usize, dt: usize) -> usize {
    t.saturating_sub(dt)
}

/// Per-zone limits materialized over absolute steps `0..horizon`, plus the
/// energy bookkeeping they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneBudget {
    pub zone: String,
    pub dt: usize,
    /// Energy of the tightened threshold.
    pub base_inst: f64,
    pub base_eq: f64,
    /// Summed energy of already scheduled vehicles, per step.
    pub used_inst: Vec<f64>,
    pub used_eq: Vec<f64>,
    pub limit_inst: Vec<SoundLevel>,
    pub limit_eq: Vec<SoundLevel>,
}

impl ZoneBudget {
    pub fn remaining_inst(&self, t: usize) -> f64 {
        self.limit_inst[t].energy()
    }

    pub fn remaining_eq(&self, t: usize) -> f64 {
        self.limit_eq[t].energy()
    }
}

/// Renews each zone's tightened thresholds by removing, in energy, the
/// predicted contributions of `scheduled` plans at every step below `horizon`.
/// Vehicles contribute silence outside their own plan span.
pub fn renew_budgets(
    zones: &[TightenedZone],
    scheduled: &[MotionPlan],
    horizon: usize,
) -> Result<Vec<ZoneBudget>, PlannerError> {
    zones
        .iter()
        .enumerate()
        .map(|(zi, z)| {
            let dt = z.base.dt;
            let mut used_inst = vec![0.0; horizon];
            for plan in scheduled {
                let trace = plan
                    .traces
                    .iter()
                    .find(|tr| tr.zone == z.base.id)
                    .or_else(|| plan.traces.get(zi))
                    .ok_or_else(|| PlannerError::InvalidConfig(format!("scheduled plan has no trace for zone {}", z.base.id)))?;
                for (i, l) in trace.inst.iter().enumerate() {
                    if let Some(e) = used_inst.get_mut(plan.t0 + i) {
                        *e += l.energy();
                    }
                }
            }
            let used_eq: Vec<f64> = (0..horizon)
                .map(|t| used_inst[window_start(t, dt)..=t].iter().sum::<f64>() / window_count(t, dt) as f64)
                .collect();
            let (base_inst, base_eq) = (z.l_inst.energy(), z.l_eq.energy());
            let mut limit_inst = Vec::with_capacity(horizon);
            let mut limit_eq = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let (ri, re) = (base_inst - used_inst[t], base_eq - used_eq[t]);
                if !(ri > 0.0 && re > 0.0) {
                    return Err(PlannerError::BudgetExhausted {
                        zone: z.base.id.clone(),
                        t,
                    });
                }
                limit_inst.push(if used_inst[t] == 0.0 { z.l_inst } else { SoundLevel::from_energy(ri) });
                limit_eq.push(if used_eq[t] == 0.0 { z.l_eq } else { SoundLevel::from_energy(re) });
            }
            Ok(ZoneBudget {
                zone: z.base.id.clone(),
                dt,
                base_inst,
                base_eq,
                used_inst,
                used_eq,
                limit_inst,
                limit_eq,
            })
        })
        .collect()
}

/// True iff `b` at step `t + 1`, or the midpoint of `a → b`, comes within
/// `radius` of a scheduled vehicle at the same time.
pub fn detect_collision(a: &EvtolState, b: &EvtolState, t: usize, scheduled: &[MotionPlan], radius: f64) -> bool {
    let close = |p: [f64; 3], q: [f64; 3]| {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        d2 < radius * radius
    };
    let pos = |s: &EvtolState| [s.x, s.y, s.z];
    let mid = |s: &EvtolState, u: &EvtolState| [(s.x + u.x) / 2.0, (s.y + u.y) / 2.0, (s.z + u.z) / 2.0];
    scheduled.iter().any(|p| {
        let end = p.state_at(t + 1);
        if end.is_some_and(|o| close(pos(b), pos(o))) {
            return true;
        }
        match (p.state_at(t), end) {
            (Some(o0), Some(o1)) => close(mid(a, b), mid(o0, o1)),
            _ => false,
        }
    })
}

/// Command that lands exactly on `target`'s horizontal position in one step,
/// if one is admissible.
fn direct_command(from: &EvtolState, target: &EvtolState, dt: f64, b: &ControlBounds) -> Option<(f64, f64, f64)> {
    let (dx, dy) = (target.x - from.x, target.y - from.y);
    let v = dx.hypot(dy) / dt;
    let dtheta = wrap_angle(dy.atan2(dx) - from.theta);
    let dv = b.dv_max * dt;
    let v_lo = b.v_range[0].max(from.v - dv);
    let v_hi = b.v_range[1].min(from.v + dv);
    (dtheta.abs() <= b.dtheta_rate_max * dt && v >= v_lo && v <= v_hi).then_some((v, target.z, dtheta))
}

/// Tree built by one planner call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub t0: usize,
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn path_to(&self, mut i: usize) -> Vec<usize> {
        let mut path = vec![i];
        while let Some(p) = self.nodes[i].parent {
            path.push(p);
            i = p;
        }
        path.reverse();
        path
    }
}

struct Candidate {
    state: EvtolState,
    cost: f64,
    levels: Vec<SoundLevel>,
}

struct Planner<'a> {
    goal: EvtolState,
    zones: &'a [TightenedZone],
    budgets: Vec<ZoneBudget>,
    model: &'a dyn NoisePredictor,
    w: &'a CostWeights,
    cfg: &'a PlannerConfig,
    scheduled: &'a [MotionPlan],
    tree: Tree,
    stats: PlanStats,
}

impl Planner<'_> {
    fn predict_levels(&self, s: &EvtolState) -> Result<Vec<SoundLevel>, ModelError> {
        self.zones
            .iter()
            .map(|z| self.model.predict(&relative_state(s, &z.base.observer)))
            .collect()
    }

    /// Windowed level at step `t` for zone `zi`, given the level at `t` and
    /// the chain ending at `parent`.
    fn leq_at(&self, zi: usize, t: usize, level: SoundLevel, parent: Option<usize>) -> SoundLevel {
        let dt = self.zones[zi].base.dt;
        let lo = window_start(t, dt);
        let mut energy = level.energy();
        let mut cur = parent;
        while let Some(i) = cur {
            let n = &self.tree.nodes[i];
            if n.time < lo {
                break;
            }
            energy += n.levels[zi].energy();
            cur = n.parent;
        }
        SoundLevel::from_energy(energy / window_count(t, dt) as f64)
    }

    fn noise_ok(&self, t: usize, levels: &[SoundLevel], parent: Option<usize>) -> bool {
        levels.iter().enumerate().all(|(zi, &l)| {
            let b = &self.budgets[zi];
            l <= b.limit_inst[t] && self.leq_at(zi, t, l, parent) <= b.limit_eq[t]
        })
    }

    fn steer(&mut self, from: usize, target: &EvtolState, rng: &mut ChaCha8Rng) -> Option<Candidate> {
        self.stats.steer_calls += 1;
        let cfg = self.cfg;
        let dt = cfg.step_seconds;
        let max_turn = cfg.bounds.dtheta_rate_max * dt;
        let mut v_box = cfg.bounds.v_range;
        let mut h_box = cfg.bounds.h_range;
        let node = &self.tree.nodes[from];
        let (origin, t, j_parent) = (node.state, node.time + 1, node.cost);
        if t > self.tree.t0 + cfg.max_steps {
            return None;
        }
        let mut best: Option<(f64, Candidate)> = None;
        let direct = if cfg.direct_connect { direct_command(&origin, target, dt, &cfg.bounds) } else { None };
        for attempt in 0..cfg.n_attempts + usize::from(direct.is_some()) {
            let sampled = attempt < cfg.n_attempts;
            let (v_cmd, h_cmd, dtheta) = if sampled {
                let u: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
                (
                    v_box[0] + u[0] * (v_box[1] - v_box[0]),
                    h_box[0] + u[1] * (h_box[1] - h_box[0]),
                    (2.0 * u[2] - 1.0) * max_turn,
                )
            } else {
                direct.expect("direct attempt only when a command exists")
            };
            let Ok((next, _)) = simulate_step(&origin, v_cmd, h_cmd, dtheta, dt, &cfg.bounds, &cfg.airspace) else {
                self.stats.domain_failures += 1;
                continue;
            };
            let Ok(levels) = self.predict_levels(&next) else {
                self.stats.domain_failures += 1;
                continue;
            };
            if !self.noise_ok(t, &levels, Some(from)) {
                self.stats.noise_failures += 1;
                if sampled && cfg.steering == Steering::Pbs {
                    v_box[1] = v_cmd;
                    h_box[0] = h_cmd;
                    self.stats.pruned += 1;
                }
                continue;
            }
            if detect_collision(&origin, &next, t - 1, self.scheduled, cfg.collision_radius) {
                self.stats.collision_failures += 1;
                continue;
            }
            let cost = get_cost(&origin, &next, &self.goal, self.w, j_parent, dt);
            let score = cost + cfg.target_weight * kino_dist(&next, target);
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((
                    score,
                    Candidate {
                        state: next,
                        cost,
                        levels,
                    },
                ));
            }
        }
        best.map(|(_, c)| c)
    }

    fn insert(&mut self, parent: usize, c: Candidate) -> usize {
        let id = self.tree.nodes.len();
        let time = self.tree.nodes[parent].time + 1;
        self.tree.nodes.push(TreeNode {
            state: c.state,
            parent: Some(parent),
            cost: c.cost,
            time,
            levels: c.levels,
            children: Vec::new(),
        });
        self.tree.nodes[parent].children.push(id);
        id
    }

    /// Replaces cheaper-reachable leaves in place with a child of `new`.
    fn rewire(&mut self, new: usize, rng: &mut ChaCha8Rng) {
        let cfg = self.cfg;
        let dt = cfg.step_seconds;
        let tol = cfg.rewire_tolerance;
        let src = self.tree.nodes[new].state;
        let src_cost = self.tree.nodes[new].cost;
        let reach = (src.v + cfg.bounds.dv_max * dt).min(cfg.bounds.v_range[1]) * dt + tol;
        let climb = cfg.bounds.dh_rate_max * dt + tol;
        for q in 1..self.tree.nodes.len() {
            let node = &self.tree.nodes[q];
            if q == new || !node.children.is_empty() || node.cost <= src_cost {
                continue;
            }
            let planar = (node.state.x - src.x).hypot(node.state.y - src.y);
            if planar > reach || (node.state.z - src.z).abs() > climb {
                continue;
            }
            if cfg.rewire_radius.is_some_and(|r| dist3(&node.state, &src) > r) {
                continue;
            }
            let target = node.state;
            let old_cost = node.cost;
            let Some(c) = self.steer(new, &target, rng) else {
                continue;
            };
            if kino_dist(&c.state, &target) > tol || c.cost >= old_cost {
                continue;
            }
            let old_parent = self.tree.nodes[q].parent.expect("non-root node has a parent");
            self.tree.nodes[old_parent].children.retain(|&k| k != q);
            let time = self.tree.nodes[new].time + 1;
            let n = &mut self.tree.nodes[q];
            n.state = c.state;
            n.cost = c.cost;
            n.levels = c.levels;
            n.parent = Some(new);
            n.time = time;
            self.tree.nodes[new].children.push(q);
            self.stats.rewires += 1;
        }
    }

    fn sample_state(&self, rng: &mut ChaCha8Rng) -> EvtolState {
        let a = &self.cfg.airspace;
        let b = &self.cfg.bounds;
        let u = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.gen::<f64>();
        let x = u(rng, a.x);
        let y = u(rng, a.y);
        let z = u(rng, [b.h_range[0].max(a.z[0]), b.h_range[1].min(a.z[1])]);
        let theta = u(rng, [-std::f64::consts::PI, std::f64::consts::PI]);
        let v = u(rng, b.v_range);
        EvtolState::new(v, b.rotor_speed(v), x, y, z, theta)
    }

    fn extract(&self, best: usize) -> MotionPlan {
        let path = self.tree.path_to(best);
        let states: Vec<EvtolState> = path.iter().map(|&i| self.tree.nodes[i].state).collect();
        let traces = self
            .zones
            .iter()
            .enumerate()
            .map(|(zi, z)| {
                let inst: Vec<SoundLevel> = path.iter().map(|&i| self.tree.nodes[i].levels[zi]).collect();
                NoiseTrace {
                    zone: z.base.id.clone(),
                    leq: leq_series(&inst, self.tree.t0, z.base.dt),
                    inst,
                }
            })
            .collect();
        MotionPlan {
            t0: self.tree.t0,
            step_seconds: self.cfg.step_seconds,
            states,
            traces,
            stats: self.stats.clone(),
        }
    }

    fn run(&mut self, rng: &mut ChaCha8Rng) -> Result<MotionPlan, PlannerError> {
        let cfg = self.cfg;
        let root = self.tree.nodes[0].clone();
        if !self.noise_ok(root.time, &root.levels, None) {
            self.stats.nodes = 1;
            return Err(PlannerError::NoPath(Box::new(self.stats.clone())));
        }
        if dist3(&root.state, &self.goal) < cfg.goal_tolerance {
            self.stats.first_goal_iteration = Some(0);
            self.stats.nodes = 1;
            return Ok(self.extract(0));
        }
        for it in 1..=cfg.n_iter {
            self.stats.iterations = it;
            let bias: f64 = rng.gen();
            let random = self.sample_state(rng);
            let target = if bias < cfg.goal_bias { self.goal } else { random };
            let near = self
                .tree
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (kino_dist(&n.state, &target), i))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, i)| i)
                .expect("tree has a root");
            let Some(c) = self.steer(near, &target, rng) else {
                continue;
            };
            let new = self.insert(near, c);
            self.rewire(new, rng);
            if self.stats.first_goal_iteration.is_none() && dist3(&self.tree.nodes[new].state, &self.goal) < cfg.goal_tolerance {
                self.stats.first_goal_iteration = Some(it);
                if cfg.stop_at_goal {
                    break;
                }
            }
        }
        self.stats.nodes = self.tree.nodes.len();
        let best = self
            .tree
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| dist3(&n.state, &self.goal) < cfg.goal_tolerance)
            .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))
            .map(|(i, _)| i);
        match best {
            Some(b) => Ok(self.extract(b)),
            None => Err(PlannerError::NoPath(Box::new(self.stats.clone()))),
        }
    }
}

/// Windowed levels for a per-step series that starts at absolute step `t0`,
/// with silence before `t0`.
pub fn leq_series(inst: &[SoundLevel], t0: usize, dt: usize) -> Vec<SoundLevel> {
    (0..inst.len())
        .map(|i| {
            let t = t0 + i;
            let lo = window_start(t, dt).max(t0) - t0;
            let e: f64 = inst[lo..=i].iter().map(|l| l.energy()).sum();
            SoundLevel::from_energy(e / window_count(t, dt) as f64)
        })
        .collect()
}

/// Result of a planner call together with the tree it built.
pub struct PlanOutcome {
    pub result: Result<MotionPlan, PlannerError>,
    pub tree: Tree,
}

/// Plans from `start` at absolute step `t0`, renewing budgets against
/// `scheduled` and avoiding them.
#[allow(clippy::too_many_arguments)]
pub fn plan_at(
    start: &EvtolState,
    t0: usize,
    goal: &EvtolState,
    zones: &[TightenedZone],
    model: &dyn NoisePredictor,
    w: &CostWeights,
    cfg: &PlannerConfig,
    scheduled: &[MotionPlan],
) -> Result<PlanOutcome, PlannerError> {
    cfg.validate()?;
    w.validate()?;
    for s in [start, goal] {
        if !cfg.airspace.contains(s) {
            return Err(StateError::OutOfDomain { x: s.x, y: s.y, z: s.z }.into());
        }
    }
    let budgets = renew_budgets(zones, scheduled, t0 + cfg.max_steps + 1)?;
    let mut planner = Planner {
        goal: *goal,
        zones,
        budgets,
        model,
        w,
        cfg,
        scheduled,
        tree: Tree { t0, nodes: Vec::new() },
        stats: PlanStats::default(),
    };
    let levels = planner.predict_levels(start)?;
    planner.tree.nodes.push(TreeNode {
        state: *start,
        parent: None,
        cost: 0.0,
        time: t0,
        levels,
        children: Vec::new(),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let result = planner.run(&mut rng);
    Ok(PlanOutcome {
        result,
        tree: planner.tree,
    })
}

pub fn plan(
    start: &EvtolState,
    goal: &EvtolState,
    zones: &[TightenedZone],
    model: &dyn NoisePredictor,
    w: &CostWeights,
    cfg: &PlannerConfig,
    scheduled: &[MotionPlan],
) -> Result<MotionPlan, PlannerError> {
    plan_at(start, 0, goal, zones, model, w, cfg, scheduled)?.result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightRequest {
    pub origin: EvtolState,
    pub destination: EvtolState,
    pub t_o: usize,
}

/// Plans requests in order; each later request sees the earlier plans as
/// collision obstacles and as consumed noise budget.
pub fn plan_multi(
    requests: &[FlightRequest],
    zones: &[TightenedZone],
    model: &dyn NoisePredictor,
    w: &CostWeights,
    cfg: &PlannerConfig,
) -> Result<Vec<MotionPlan>, PlannerError> {
    let mut plans: Vec<MotionPlan> = Vec::with_capacity(requests.len());
    for (i, r) in requests.iter().enumerate() {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        let p = plan_at(&r.origin, r.t_o, &r.destination, zones, model, w, &c, &plans)?.result?;
        plans.push(p);
    }
    Ok(plans)
}

/// Re-derives a command for every consecutive state pair and checks that
/// `simulate_step` reproduces the second state. Returns the first bad index.
pub fn check_continuity(plan: &MotionPlan, bounds: &ControlBounds, airspace: &Airspace) -> Result<(), usize> {
    for (i, pair) in plan.states.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let dtheta = wrap_angle(b.theta - a.theta);
        let ok = simulate_step(a, b.v, b.z, dtheta, plan.step_seconds, bounds, airspace).is_ok_and(|(s, _)| {
            let tol = 1e-6;
            (s.v - b.v).abs() < tol
                && (s.rho - b.rho).abs() < tol
                && (s.x - b.x).abs() < tol
                && (s.y - b.y).abs() < tol
                && (s.z - b.z).abs() < tol
                && wrap_angle(s.theta - b.theta).abs() < tol
        });
        if !ok {
            return Err(i + 1);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Inst,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub zone: String,
    pub t: usize,
    pub kind: LimitKind,
    pub level: SoundLevel,
    pub limit: SoundLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: usize,
    pub violations: Vec<AuditViolation>,
    /// Smallest `limit − level` over all checks, dB.
    pub min_margin: f64,
    /// Largest ratio of combined oracle energy to threshold energy.
    pub max_energy_ratio: f64,
}

/// Checks the combined oracle levels of `plans` against the original zone
/// thresholds at every step any plan is airborne.
pub fn audit_plans(
    plans: &[MotionPlan],
    zones: &[NoiseAbatementZone],
    oracle: &dyn NoiseOracle,
) -> Result<AuditReport, PlannerError> {
    let end = plans.iter().map(|p| p.t_final() + 1).max().unwrap_or(0);
    let mut report = AuditReport {
        checks: 0,
        violations: Vec::new(),
        min_margin: f64::INFINITY,
        max_energy_ratio: 0.0,
    };
    for z in zones {
        let mut energy = vec![0.0; end];
        let mut active = vec![false; end];
        for p in plans {
            for (i, s) in p.states.iter().enumerate() {
                energy[p.t0 + i] += oracle.eval(&relative_state(s, &z.observer))?.energy();
                active[p.t0 + i] = true;
            }
        }
        for t in (0..end).filter(|&t| active[t]) {
            let inst = SoundLevel::from_energy(energy[t]);
            let eq_e = energy[window_start(t, z.dt)..=t].iter().sum::<f64>() / window_count(t, z.dt) as f64;
            let eq = SoundLevel::from_energy(eq_e);
            for (kind, level, limit, e) in [
                (LimitKind::Inst, inst, z.l_inst, energy[t]),
                (LimitKind::Eq, eq, z.l_eq, eq_e),
            ] {
                report.checks += 1;
                report.min_margin = report.min_margin.min(limit.value() - level.value());
                report.max_energy_ratio = report.max_energy_ratio.max(e / limit.energy());
                if !(level <= limit) {
                    report.violations.push(AuditViolation {
                        zone: z.id.clone(),
                        t,
                        kind,
                        level,
                        limit,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{SyntheticOracle, SyntheticParams};
    use crate::scenario::{preset_zones, route, Strictness};
    use proptest::prelude::*;

    fn oracle() -> SyntheticOracle {
        SyntheticOracle::new(SyntheticParams::default()).unwrap()
    }

    fn zone(id: &str, x: f64, y: f64, l_inst: f64, l_eq: f64) -> NoiseAbatementZone {
        NoiseAbatementZone {
            id: id.into(),
            observer: crate::state::Observer { x, y, z: 0.0 },
            l_inst: SoundLevel::db(l_inst),
            l_eq: SoundLevel::db(l_eq),
            dt: 6,
        }
    }

    fn preset(level: Strictness, delta: f64) -> Vec<TightenedZone> {
        tighten_zones(&preset_zones(level).zones().unwrap(), SoundLevel::db(delta), Tightening::Additive).unwrap()
    }

    fn short_route() -> (EvtolState, EvtolState) {
        route((200.0, 1000.0), (1000.0, 200.0))
    }

    fn cfg(seed: u64, steering: Steering) -> PlannerConfig {
        PlannerConfig {
            n_iter: 3000,
            seed,
            steering,
            ..PlannerConfig::default()
        }
    }

    fn state_at(x: f64, y: f64, z: f64) -> EvtolState {
        EvtolState::new(30.0, 550.0, x, y, z, 0.0)
    }

    fn parked(states: Vec<EvtolState>, t0: usize) -> MotionPlan {
        MotionPlan {
            t0,
            step_seconds: 5.0,
            states,
            traces: Vec::new(),
            stats: PlanStats::default(),
        }
    }

    #[test]
    fn silent_delta_leaves_thresholds_alone() {
        let z = [zone("a", 0.0, 0.0, 45.0, 43.0)];
        for rule in [Tightening::Additive, Tightening::EnergyDomain] {
            let t = tighten_zones(&z, SoundLevel::SILENT, rule).unwrap();
            assert_eq!((t[0].l_inst, t[0].l_eq), (z[0].l_inst, z[0].l_eq));
        }
    }

    #[test]
    fn tightening_rules() {
        let z = [zone("a", 0.0, 0.0, 45.0, 45.0)];
        let e = tighten_zones(&z, SoundLevel::db(40.0), Tightening::EnergyDomain).unwrap();
        assert!((e[0].l_inst.value() - 43.349114613732304).abs() < 1e-9);
        let a = tighten_zones(&z, SoundLevel::db(40.0), Tightening::Additive).unwrap();
        assert_eq!(a[0].l_inst.value(), 5.0);
    }

    #[test]
    fn delta_above_threshold_is_infeasible() {
        let z = [zone("quiet", 0.0, 0.0, 22.0, 20.0)];
        for rule in [Tightening::Additive, Tightening::EnergyDomain] {
            match tighten_zones(&z, SoundLevel::db(25.0), rule) {
                Err(PlannerError::InfeasibleTightening { zone }) => assert_eq!(zone, "quiet"),
                other => panic!("expected infeasible, got {other:?}"),
            }
        }
    }

    #[test]
    fn zero_motion_cost_is_the_standing_terms() {
        let w = CostWeights::default();
        let a = state_at(100.0, 100.0, 200.0);
        let goal = state_at(2000.0, 2000.0, 100.0);
        let c = get_cost(&a, &a, &goal, &w, 0.0, 5.0);
        assert!((c - (-w.w_speed * a.v + w.w_q * w.q_alt * a.z)).abs() < 1e-12);
    }

    #[test]
    fn distance_weight_scales_only_the_distance_term() {
        let a = state_at(0.0, 0.0, 100.0);
        let mut b = state_at(120.0, 40.0, 130.0);
        b.v = 35.0;
        b.theta = 0.2;
        let goal = state_at(150.0, 0.0, 100.0);
        let w = CostWeights::default();
        let w2 = CostWeights { w_d: 2.0 * w.w_d, ..w };
        let diff = get_cost(&a, &b, &goal, &w2, 0.0, 5.0) - get_cost(&a, &b, &goal, &w, 0.0, 5.0);
        assert!((diff - w.w_d * kino_dist(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn worked_cost_with_unit_weights() {
        let w = CostWeights {
            d0: 0.0,
            w_speed: 1.0,
            w_d: 1.0,
            w_q: 1.0,
            q_alt: 1.0,
            r_v: 1.0,
            r_vh: 1.0,
            q_h: 1.0,
            q_v: 1.0,
        };
        let a = EvtolState::new(20.0, 500.0, 0.0, 0.0, 100.0, 0.0);
        let b = EvtolState::new(25.0, 525.0, 100.0, 0.0, 110.0, 0.1);
        let goal = state_at(2000.0, 2000.0, 100.0);
        let c = get_cost(&a, &b, &goal, &w, 7.0, 5.0);
        assert!((c - 199.49876412946296).abs() < 1e-9, "{c}");
    }

    #[test]
    fn near_goal_terms_switch_on_inside_d0() {
        let w = CostWeights::default();
        let a = state_at(0.0, 0.0, 100.0);
        let goal = state_at(0.0, 0.0, 100.0);
        let far = state_at(1000.0, 1000.0, 100.0);
        let c_near = get_cost(&a, &a, &goal, &w, 0.0, 5.0);
        let c_far = get_cost(&a, &a, &far, &w, 0.0, 5.0);
        assert!((c_near - c_far - w.d0 * (w.q_h * a.z + w.q_v * a.v)).abs() < 1e-9);
    }

    #[test]
    fn collision_threshold() {
        let other = parked(vec![state_at(0.0, 0.0, 100.0); 4], 0);
        let me = |d: f64| state_at(d, 0.0, 100.0);
        assert!(detect_collision(&me(99.0), &me(99.0), 1, std::slice::from_ref(&other), 100.0));
        assert!(!detect_collision(&me(101.0), &me(101.0), 1, std::slice::from_ref(&other), 100.0));
        assert!(!detect_collision(&me(0.0), &me(0.0), 1, &[], 100.0));
    }

    #[test]
    fn finished_plans_do_not_collide() {
        let other = parked(vec![state_at(0.0, 0.0, 100.0); 3], 0);
        let here = state_at(0.0, 0.0, 100.0);
        assert!(detect_collision(&here, &here, 1, std::slice::from_ref(&other), 100.0));
        assert!(!detect_collision(&here, &here, 2, std::slice::from_ref(&other), 100.0));
    }

    #[test]
    fn midpoint_catches_crossing_vehicles() {
        let other = parked(vec![state_at(0.0, 0.0, 100.0), state_at(300.0, 0.0, 100.0)], 0);
        let (a, b) = (state_at(300.0, 0.0, 100.0), state_at(0.0, 0.0, 100.0));
        assert!(detect_collision(&a, &b, 0, &[other], 100.0));
    }

    #[test]
    fn start_at_goal_is_a_single_state() {
        let o = oracle();
        let (s, _) = short_route();
        let p = plan(&s, &s, &preset(Strictness::Relaxed, 1.0), &OraclePredictor(&o), &CostWeights::default(), &cfg(0, Steering::Urs), &[]).unwrap();
        assert_eq!(p.states, vec![s]);
        assert_eq!(p.stats.first_goal_iteration, Some(0));
    }

    #[test]
    fn threshold_equality_passes() {
        let o = oracle();
        let (s, _) = short_route();
        let z = zone("c", 1100.0, 1100.0, 45.0, 45.0);
        let level = o.eval(&relative_state(&s, &z.observer)).unwrap();
        let at = |l: SoundLevel| TightenedZone {
            base: z.clone(),
            delta: SoundLevel::SILENT,
            l_inst: l,
            l_eq: l,
        };
        let run = |l| plan(&s, &s, &[at(l)], &OraclePredictor(&o), &CostWeights::default(), &cfg(0, Steering::Urs), &[]);
        assert!(run(level).is_ok());
        assert!(matches!(run(level.offset(-1e-9)), Err(PlannerError::NoPath(_))));
    }

    #[test]
    fn unreachable_thresholds_give_no_path() {
        let o = oracle();
        let (s, g) = short_route();
        let zones = preset(Strictness::Strict, 12.0);
        let r = plan(&s, &g, &zones, &OraclePredictor(&o), &CostWeights::default(), &cfg(0, Steering::Pbs), &[]);
        assert!(matches!(r, Err(PlannerError::NoPath(_))), "{r:?}");
    }

    #[test]
    fn tree_is_consistent_and_plan_is_compliant() {
        let o = oracle();
        let (s, g) = short_route();
        let zones = preset(Strictness::Strict, 0.5);
        let w = CostWeights::default();
        let c = cfg(3, Steering::Pbs);
        let out = plan_at(&s, 0, &g, &zones, &OraclePredictor(&o), &w, &c, &[]).unwrap();
        let p = out.result.expect("strict short route is plannable");
        let tree = &out.tree;
        assert!(p.stats.rewires > 0);
        for (i, n) in tree.nodes.iter().enumerate() {
            let Some(par) = n.parent else {
                assert_eq!(i, 0);
                continue;
            };
            let pn = &tree.nodes[par];
            assert_eq!(n.time, pn.time + 1);
            assert!(pn.children.contains(&i));
            assert_eq!(n.cost, get_cost(&pn.state, &n.state, &g, &w, pn.cost, c.step_seconds));
        }
        for (i, n) in tree.nodes.iter().enumerate() {
            for &k in &n.children {
                assert_eq!(tree.nodes[k].parent, Some(i));
            }
        }
        assert_eq!(check_continuity(&p, &c.bounds, &c.airspace), Ok(()));
        assert!(dist3(p.states.last().unwrap(), &g) < c.goal_tolerance);
        for (tr, z) in p.traces.iter().zip(&zones) {
            assert!(tr.inst.iter().all(|l| *l <= z.l_inst));
            assert!(tr.leq.iter().all(|l| *l <= z.l_eq));
        }
        let report = audit_plans(std::slice::from_ref(&p), &preset_zones(Strictness::Strict).zones().unwrap(), &o).unwrap();
        assert!(report.violations.is_empty());
        assert!(report.max_energy_ratio <= 1.0);
    }

    #[test]
    fn audit_flags_loud_plans() {
        let o = oracle();
        let (s, g) = short_route();
        let p = plan(&s, &g, &preset(Strictness::Relaxed, 0.0), &OraclePredictor(&o), &CostWeights::default(), &cfg(1, Steering::Urs), &[]).unwrap();
        let on_route = [zone("mid", 600.0, 600.0, 15.0, 15.0)];
        let report = audit_plans(&[p], &on_route, &o).unwrap();
        assert!(!report.violations.is_empty());
        assert!(report.min_margin < 0.0);
    }

    #[test]
    fn pbs_matches_urs_without_noise_failures() {
        let o = oracle();
        let (s, g) = short_route();
        let zones = preset(Strictness::Relaxed, 1.0);
        let w = CostWeights::default();
        let u = plan(&s, &g, &zones, &OraclePredictor(&o), &w, &cfg(5, Steering::Urs), &[]).unwrap();
        let p = plan(&s, &g, &zones, &OraclePredictor(&o), &w, &cfg(5, Steering::Pbs), &[]).unwrap();
        assert_eq!(u.stats.noise_failures, 0);
        assert_eq!(p.stats.pruned, 0);
        assert_eq!(u.states, p.states);
    }

    #[test]
    fn single_request_matches_plan() {
        let o = oracle();
        let (s, g) = short_route();
        let zones = preset(Strictness::Moderate, 1.0);
        let w = CostWeights::default();
        let c = cfg(9, Steering::Pbs);
        let single = plan(&s, &g, &zones, &OraclePredictor(&o), &w, &c, &[]).unwrap();
        let multi = plan_multi(&[FlightRequest { origin: s, destination: g, t_o: 0 }], &zones, &OraclePredictor(&o), &w, &c).unwrap();
        assert_eq!(multi, vec![single]);
    }

    #[test]
    fn budgets_conserve_energy() {
        let o = oracle();
        let zones = preset(Strictness::Moderate, 1.0);
        let w = CostWeights::default();
        let (s1, g1) = short_route();
        let (s2, g2) = route((1000.0, 1000.0), (200.0, 200.0));
        let c = cfg(2, Steering::Pbs);
        let p1 = plan(&s1, &g1, &zones, &OraclePredictor(&o), &w, &c, &[]).unwrap();
        let p2 = plan_at(&s2, 1, &g2, &zones, &OraclePredictor(&o), &w, &c, std::slice::from_ref(&p1)).unwrap().result.unwrap();
        let scheduled = [p1, p2];
        let budgets = renew_budgets(&zones, &scheduled, 40).unwrap();
        for (b, z) in budgets.iter().zip(&zones) {
            for t in 0..40 {
                let used: f64 = scheduled
                    .iter()
                    .filter_map(|p| p.state_at(t).map(|_| p.traces.iter().find(|tr| tr.zone == z.base.id).unwrap().inst[t - p.t0].energy()))
                    .sum();
                assert!((used + b.remaining_inst(t) - b.base_inst).abs() <= 1e-9 * b.base_inst);
                assert!((b.used_eq[t] + b.remaining_eq(t) - b.base_eq).abs() <= 1e-9 * b.base_eq);
                if used == 0.0 {
                    assert_eq!(b.limit_inst[t], z.l_inst);
                }
            }
        }
        for pair in scheduled[0].states.iter().enumerate() {
            let t = scheduled[0].t0 + pair.0;
            if let Some(q) = scheduled[1].state_at(t) {
                assert!(dist3(pair.1, q) >= c.collision_radius);
            }
        }
    }

    #[test]
    fn exhausted_budget_is_reported() {
        let zones = preset(Strictness::Moderate, 0.0);
        let loud = MotionPlan {
            traces: zones
                .iter()
                .map(|z| NoiseTrace {
                    zone: z.base.id.clone(),
                    inst: vec![z.l_inst.offset(1.0); 3],
                    leq: Vec::new(),
                })
                .collect(),
            ..parked(vec![state_at(0.0, 0.0, 100.0); 3], 4)
        };
        match renew_budgets(&zones, &[loud], 20) {
            Err(PlannerError::BudgetExhausted { t, .. }) => assert_eq!(t, 4),
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn leq_series_counts_silence_before_start() {
        let l = SoundLevel::db(30.0);
        let from_zero = leq_series(&[l; 10], 0, 4);
        assert!(from_zero.iter().all(|x| (x.value() - 30.0).abs() < 1e-12));
        let late = leq_series(&[l; 3], 10, 4);
        let expect = [1.0, 2.0, 3.0].map(|k: f64| 30.0 + 10.0 * (k / 5.0).log10());
        for (x, e) in late.iter().zip(expect) {
            assert!((x.value() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_command_lands_on_the_target() {
        let b = ControlBounds::default();
        let a = EvtolState::new(30.0, b.rotor_speed(30.0), 0.0, 0.0, 100.0, 0.0);
        let target = EvtolState::new(40.0, b.rotor_speed(40.0), 160.0, 10.0, 120.0, 0.0);
        let (v, h, dth) = direct_command(&a, &target, 5.0, &b).unwrap();
        let (s, _) = simulate_step(&a, v, h, dth, 5.0, &b, &Airspace::default()).unwrap();
        assert!((s.x - target.x).abs() < 1e-9 && (s.y - target.y).abs() < 1e-9);
        let behind = EvtolState { x: -100.0, ..target };
        assert!(direct_command(&a, &behind, 5.0, &b).is_none());
    }

    #[test]
    fn bad_config_is_rejected() {
        let c = PlannerConfig {
            goal_tolerance: 0.0,
            ..PlannerConfig::default()
        };
        assert!(matches!(c.validate(), Err(PlannerError::InvalidConfig(_))));
        let w = CostWeights { w_d: -1.0, ..CostWeights::default() };
        assert!(w.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        // A PBS prune removes commands with higher speed and lower altitude
        // than a noise failure; at the same horizontal offset those can only
        // be louder.
        #[test]
        fn pruned_commands_are_no_quieter(
            v in 20.0..60.0f64, dv in 0.0..40.0f64,
            h in 50.0..450.0f64, dh in 0.0..400.0f64,
            r in 0.0..3200.0f64, phi in -3.14..3.14f64,
            seed in 0u64..8,
        ) {
            let b = ControlBounds::default();
            let v2 = (v + dv).min(60.0);
            let h2 = (h - dh).max(50.0);
            let failed = ObserverRelativeState::new(v, b.rotor_speed(v), h, r, phi);
            let pruned = ObserverRelativeState::new(v2, b.rotor_speed(v2), h2, r, phi);
            let o = oracle();
            prop_assert!(o.eval(&pruned).unwrap() >= o.eval(&failed).unwrap());
            let net = crate::model::tests::random_network(seed);
            prop_assert!(net.eval(&pruned) >= net.eval(&failed) - 1e-12);
        }

        #[test]
        fn rewire_never_raises_cost(seed in 0u64..4) {
            let o = oracle();
            let (s, g) = short_route();
            let zones = preset(Strictness::Moderate, 1.0);
            let w = CostWeights::default();
            let mut c = cfg(seed, Steering::Urs);
            c.n_iter = 300;
            let with = plan_at(&s, 0, &g, &zones, &OraclePredictor(&o), &w, &c, &[]).unwrap();
            c.rewire_tolerance = 0.0;
            let without = plan_at(&s, 0, &g, &zones, &OraclePredictor(&o), &w, &c, &[]).unwrap();
            // The first node is inserted before any rewire can diverge the RNG streams.
            prop_assert!(with.tree.nodes[1].cost <= without.tree.nodes[1].cost);
            for n in &with.tree.nodes {
                if let Some(p) = n.parent {
                    prop_assert!(n.cost.is_finite() && with.tree.nodes[p].time < n.time);
                }
            }
        }
    }
}
