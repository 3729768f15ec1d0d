//! Certified eVTOL noise modelling and noise-aware kinodynamic planning.

pub mod acoustics;
pub mod model;
pub mod numfmt;
pub mod oracle;
pub mod partition;
pub mod planner;
pub mod sampling;
pub mod scenario;
pub mod state;

pub use acoustics::{db_subtract, db_to_energy, energy_sum_db, leq, LevelWindow, SoundLevel};
pub use oracle::{verify_monotone, Domain, NoiseOracle, OracleConfig, RecordedOracle, SyntheticOracle, SyntheticParams};
pub use state::{
    kino_dist, ordinance_satisfied, relative_state, simulate_step, Airspace, ControlBounds, EvtolState,
    NoiseAbatementZone, Observer, ObserverRelativeState,
};
pub use partition::{partition_azimuth, AzimuthSector, Partition, SweepCondition};
pub use sampling::{active_sample, lattice_dataset, AcceptedCube, CertifiedDataset, Hypercube, Sample};
pub use model::{certify, fit_composite, validate_bound, CompositeNoiseModel, MonotonicNetwork, TrainConfig};
pub use planner::{
    audit_plans, detect_collision, get_cost, plan, plan_multi, tighten_zones, CostWeights, MotionPlan, PlannerConfig,
    PlannerError, TightenedZone,
};
pub use scenario::{Scenario, Strictness};
