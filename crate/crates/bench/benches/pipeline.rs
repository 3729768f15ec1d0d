use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use uamnoise_core::partition::{default_step, DEFAULT_MU_PHI};
use uamnoise_core::planner::OraclePredictor;
use uamnoise_core::sampling::{active_sample, Hypercube, MinEdge};
use uamnoise_core::scenario::preset_zones;
use uamnoise_core::{
    energy_sum_db, partition_azimuth, plan, tighten_zones, CostWeights, NoiseOracle, ObserverRelativeState, PlannerConfig,
    Scenario, SoundLevel, Strictness, SweepCondition, SyntheticOracle, SyntheticParams,
};

fn acoustics(c: &mut Criterion) {
    let levels: Vec<SoundLevel> = (0..64).map(|i| SoundLevel::db(20.0 + 0.5 * i as f64)).collect();
    c.bench_function("energy_sum_db/64", |b| b.iter(|| energy_sum_db(black_box(&levels).iter().copied())));
}

fn oracle(c: &mut Criterion) {
    let o = SyntheticOracle::new(SyntheticParams::default()).unwrap();
    let s = ObserverRelativeState::new(45.0, 640.0, 120.0, 300.0, 0.7);
    c.bench_function("oracle_eval", |b| b.iter(|| o.eval(black_box(&s)).unwrap()));
    c.bench_function("partition_azimuth", |b| {
        b.iter(|| partition_azimuth(&o, DEFAULT_MU_PHI, default_step(), SweepCondition::worst_case(&o)).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let o = SyntheticOracle::new(SyntheticParams::default()).unwrap();
    let root = Hypercube::from_domain(o.domain(), [1000.0, 1100.0], 0.3);
    let mut g = c.benchmark_group("sampling");
    g.sample_size(10);
    g.bench_function("active_sample/slab", |b| b.iter(|| active_sample(root, &o, 1.5, MinEdge::default()).unwrap()));
    g.finish();
}

fn planning(c: &mut Criterion) {
    let o = SyntheticOracle::new(SyntheticParams::default()).unwrap();
    let s = Scenario::preset(Strictness::Moderate);
    let zones = tighten_zones(&preset_zones(Strictness::Moderate).zones().unwrap(), SoundLevel::db(3.0), Default::default()).unwrap();
    let cfg = PlannerConfig {
        n_iter: 500,
        ..PlannerConfig::default()
    };
    let mut g = c.benchmark_group("planning");
    g.sample_size(10);
    g.bench_function("plan/500_iterations", |b| {
        b.iter(|| plan(&s.start, &s.goal, &zones, &OraclePredictor(&o), &CostWeights::default(), &cfg, &[]))
    });
    g.finish();
}

criterion_group!(benches, acoustics, oracle, sampling, planning);
criterion_main!(benches);
