//! One function per subcommand. Each writes its outputs and manifest into
//! the run directory and reports whether the result is usable.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use uamnoise_core::model::ModelError;
use uamnoise_core::partition::{sector_variation, SweepCondition};
use uamnoise_core::planner::{check_continuity, plan_at, renew_budgets, FlightRequest, Steering};
use uamnoise_core::sampling::{
    read_samples_csv, sample_domain, uniform_refinement_domain, ActiveConfig, DatasetLog, LatticeGrid,
};
use uamnoise_core::scenario::Strictness;
use uamnoise_core::{
    audit_plans, fit_composite, lattice_dataset, partition_azimuth, plan_multi, tighten_zones, validate_bound,
    CertifiedDataset, CompositeNoiseModel, MotionPlan, NoiseAbatementZone, NoiseOracle, OracleConfig, Partition,
    PlannerError, Scenario, SoundLevel, TrainConfig,
};

use crate::manifest::Run;
use crate::report;

/// How a command that produced its outputs ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Infeasible,
    BoundViolated,
}

pub const SAMPLES_CSV: &str = "samples.csv";
pub const CUBES_JSON: &str = "cubes.json";

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn load_oracle(run: &mut Run, path: Option<&Path>) -> Result<Box<dyn NoiseOracle>> {
    let cfg = match path {
        Some(p) => {
            run.input(p);
            OracleConfig::from_json_file(p).with_context(|| format!("loading oracle config {}", p.display()))?
        }
        None => OracleConfig::default(),
    };
    run.param("oracle", path.map_or("builtin synthetic".to_string(), |p| p.display().to_string()));
    Ok(cfg.build()?)
}

fn load_partition(run: &mut Run, path: &Path) -> Result<Partition> {
    run.input(path);
    read_json(path)
}

fn load_model(run: &mut Run, path: &Path) -> Result<CompositeNoiseModel> {
    run.input(path);
    read_json(path)
}

fn load_dataset(run: &mut Run, dir: &Path) -> Result<CertifiedDataset> {
    let (csv_path, log_path) = (dir.join(SAMPLES_CSV), dir.join(CUBES_JSON));
    run.input(&csv_path);
    run.input(&log_path);
    let f = File::open(&csv_path).with_context(|| format!("opening {}", csv_path.display()))?;
    let samples = read_samples_csv(BufReader::new(f))?;
    let log: DatasetLog = read_json(&log_path)?;
    if log.samples != samples.len() {
        bail!("{} has {} samples but its cube log expects {}", csv_path.display(), samples.len(), log.samples);
    }
    Ok(CertifiedDataset::from_parts(log, samples))
}

pub struct PartitionArgs {
    pub oracle: Option<PathBuf>,
    pub mu_phi: f64,
    pub step_deg: f64,
}

pub fn partition(run: &mut Run, a: &PartitionArgs) -> Result<Outcome> {
    let oracle = load_oracle(run, a.oracle.as_deref())?;
    run.param("mu_phi", a.mu_phi);
    run.param("step_deg", a.step_deg);
    let cond = SweepCondition::worst_case(oracle.as_ref());
    let p = partition_azimuth(oracle.as_ref(), a.mu_phi, a.step_deg.to_radians(), cond)?;
    let variation = sector_variation(&p, oracle.as_ref(), cond, 2000)?;
    run.json("partition.json", &p)?;
    run.text("partition_table.txt", &report::partition_table(&p, &variation))?;
    Ok(Outcome::Ok)
}

pub struct SampleArgs {
    pub oracle: Option<PathBuf>,
    pub partition: PathBuf,
    pub mu_act: f64,
    pub r_share: f64,
    pub r_min_width: f64,
    pub lattice: bool,
    pub lattice_grid: Option<PathBuf>,
    pub compare_uniform: bool,
}

pub fn sample(run: &mut Run, a: &SampleArgs) -> Result<Outcome> {
    let oracle = load_oracle(run, a.oracle.as_deref())?;
    let p = load_partition(run, &a.partition)?;
    let mut text = String::new();
    let ds = if a.lattice || a.lattice_grid.is_some() {
        let grid: LatticeGrid = match &a.lattice_grid {
            Some(g) => {
                run.input(g);
                read_json(g)?
            }
            None => LatticeGrid::default(),
        };
        run.param("lattice_grid", &grid);
        lattice_dataset(&grid, &p, oracle.as_ref())?
    } else {
        let cfg = ActiveConfig {
            mu_act: a.mu_act,
            r_share: a.r_share,
            r_min_width: a.r_min_width,
            ..ActiveConfig::default()
        };
        run.param("active", cfg);
        let ds = sample_domain(oracle.as_ref(), &p, &cfg)?;
        ds.check_reachable()?;
        if a.compare_uniform {
            let u = uniform_refinement_domain(oracle.as_ref(), &p, &cfg, 12)?;
            text.push_str(&format!(
                "uniform refinement: depth {}, cubes {}, oracle evals {}, converged {}\n",
                u.depth, u.cubes, u.samples, u.converged
            ));
            text.push_str(&format!("active / uniform evals: {:.4}\n", ds.oracle_evals as f64 / u.samples as f64));
        }
        ds
    };
    let mut csv = Vec::new();
    ds.write_samples_csv(&mut csv)?;
    run.text(SAMPLES_CSV, std::str::from_utf8(&csv)?)?;
    run.json_compact(CUBES_JSON, &ds.to_log())?;
    let head = format!(
        "kind {:?}\nsectors {}\ncubes {}\nsamples {}\noracle evals {}\nmax corner gap {:.4} dB (mu_act {:.4})\nfloor hits {}\n",
        ds.kind,
        p.len(),
        ds.cubes.len(),
        ds.samples.len(),
        ds.oracle_evals,
        ds.cubes.iter().map(|c| c.gap()).fold(0.0, f64::max),
        ds.mu_act,
        ds.floor_hits().count(),
    );
    run.text("sample_report.txt", &(head + &text))?;
    Ok(Outcome::Ok)
}

pub struct TrainArgs {
    pub oracle: Option<PathBuf>,
    pub partition: PathBuf,
    pub dataset: PathBuf,
    pub lattice: Option<PathBuf>,
    pub train_config: Option<PathBuf>,
    pub epochs: Option<usize>,
}

fn sector_counts(p: &Partition, ds: &CertifiedDataset) -> Vec<usize> {
    let mut n = vec![0; p.len()];
    for s in &ds.samples {
        n[p.sector_of(s.state.phi).m - 1] += 1;
    }
    n
}

pub fn train_certify(run: &mut Run, a: &TrainArgs) -> Result<Outcome> {
    let oracle = load_oracle(run, a.oracle.as_deref())?;
    let p = load_partition(run, &a.partition)?;
    let mut cfg: TrainConfig = match &a.train_config {
        Some(path) => {
            run.input(path);
            read_json(path)?
        }
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    run.param("train", &cfg);
    let ds = load_dataset(run, &a.dataset)?;
    let model = fit_composite(&p, oracle.domain(), &ds, &ds, &cfg, run.seed("train"))?;
    run.json("model.json", &model)?;
    let report = model.report();
    let samples = sector_counts(&p, &ds);
    let baseline = match &a.lattice {
        Some(dir) => {
            let lat = load_dataset(run, dir)?;
            let b = fit_composite(&p, oracle.domain(), &lat, &lat, &cfg, run.seed("train-baseline"))?;
            run.json("baseline_model.json", &b)?;
            Some((b, sector_counts(&p, &lat)))
        }
        None => None,
    };
    let base = baseline.map(|(b, n)| (b.report(), n));
    let base_ref = base.as_ref().map(|(r, s)| (r.as_slice(), s.as_slice()));
    run.text("certification.csv", &report::certification_csv(&report, &samples, base_ref)?)?;
    run.text("certification_table.txt", &report::certification_table(&report, &samples, base_ref))?;
    Ok(Outcome::Ok)
}

pub struct ValidateArgs {
    pub oracle: Option<PathBuf>,
    pub model: PathBuf,
    pub n: usize,
}

pub fn validate(run: &mut Run, a: &ValidateArgs) -> Result<Outcome> {
    let oracle = load_oracle(run, a.oracle.as_deref())?;
    let model = load_model(run, &a.model)?;
    run.param("n", a.n);
    let (report, outcome) = match validate_bound(&model, oracle.as_ref(), a.n, run.seed("validate")) {
        Ok(r) => (r, Outcome::Ok),
        Err(ModelError::BoundViolated(r)) => (*r, Outcome::BoundViolated),
        Err(e) => return Err(e.into()),
    };
    run.json("validation.json", &report)?;
    run.text("validation_table.txt", &report::validation_table(&report))?;
    Ok(outcome)
}

pub struct ScenarioArgs {
    pub preset: String,
}

pub fn scenario(run: &mut Run, a: &ScenarioArgs) -> Result<Outcome> {
    let s = match a.preset.as_str() {
        "relaxed" => Scenario::preset(Strictness::Relaxed),
        "moderate" => Scenario::preset(Strictness::Moderate),
        "strict" => Scenario::preset(Strictness::Strict),
        "multi" => Scenario::multi_preset(),
        other => bail!("unknown preset {other:?}; expected relaxed, moderate, strict or multi"),
    };
    run.param("preset", &a.preset);
    run.json("scenario.json", &s)?;
    Ok(Outcome::Ok)
}

pub struct PlanArgs {
    pub oracle: Option<PathBuf>,
    pub scenario: PathBuf,
    pub model: PathBuf,
    pub steering: Option<Steering>,
    pub compare: Option<usize>,
    pub threads: usize,
}

struct Loaded {
    scenario: Scenario,
    zones: Vec<NoiseAbatementZone>,
    model: CompositeNoiseModel,
    oracle: Box<dyn NoiseOracle>,
}

fn load_planning(run: &mut Run, oracle: Option<&Path>, scenario: &Path, model: &Path) -> Result<Loaded> {
    let oracle = load_oracle(run, oracle)?;
    run.input(scenario);
    let mut s = Scenario::from_json_file(scenario).with_context(|| format!("loading scenario {}", scenario.display()))?;
    if let uamnoise_core::scenario::ZoneSource::Path(p) = &s.zones {
        run.input(&p.clone());
    }
    let zones = s.resolve()?;
    let model = load_model(run, model)?;
    s.config.validate()?;
    s.weights.validate()?;
    Ok(Loaded {
        scenario: s,
        zones,
        model,
        oracle,
    })
}

#[derive(Serialize)]
struct Infeasible<'a> {
    error: String,
    stats: Option<&'a uamnoise_core::planner::PlanStats>,
}

fn infeasible(run: &mut Run, e: &PlannerError) -> Result<Outcome> {
    let stats = match e {
        PlannerError::NoPath(s) => Some(s.as_ref()),
        _ => None,
    };
    run.json("infeasible.json", &Infeasible { error: e.to_string(), stats })?;
    run.text("plan_report.txt", &format!("infeasible: {e}\n"))?;
    Ok(Outcome::Infeasible)
}

fn is_infeasible(e: &PlannerError) -> bool {
    matches!(
        e,
        PlannerError::NoPath(_) | PlannerError::BudgetExhausted { .. } | PlannerError::InfeasibleTightening { .. }
    )
}

#[derive(Serialize)]
struct CompareRow {
    seed_index: usize,
    steering: Steering,
    iterations: usize,
    found: bool,
    duration_s: f64,
    mean_altitude: f64,
    noise_failures: usize,
    pruned: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

pub fn plan(run: &mut Run, a: &PlanArgs) -> Result<Outcome> {
    let l = load_planning(run, a.oracle.as_deref(), &a.scenario, &a.model)?;
    let mut cfg = l.scenario.config.clone();
    if let Some(s) = a.steering {
        cfg.steering = s;
    }
    run.param("planner", &cfg);
    run.param("weights", l.scenario.weights);
    let delta = SoundLevel::db(l.model.delta());
    let tz = match tighten_zones(&l.zones, delta, cfg.tightening) {
        Ok(t) => t,
        Err(e) => return infeasible(run, &e),
    };
    let (start, goal, w) = (&l.scenario.start, &l.scenario.goal, &l.scenario.weights);
    if let Some(n) = a.compare {
        let seeds: Vec<u64> = (0..n).map(|i| run.seed(&format!("plan/{i}"))).collect();
        let jobs: Vec<(usize, Steering)> = (0..n).flat_map(|i| [(i, Steering::Urs), (i, Steering::Pbs)]).collect();
        let threads = a.threads.max(1).min(jobs.len().max(1));
        let mut rows: Vec<Option<CompareRow>> = (0..jobs.len()).map(|_| None).collect();
        let results: Vec<Vec<(usize, Result<CompareRow>)>> = std::thread::scope(|sc| {
            let handles: Vec<_> = (0..threads)
                .map(|k| {
                    let (jobs, seeds, tz, cfg, model) = (&jobs, &seeds, &tz, &cfg, &l.model);
                    sc.spawn(move || {
                        jobs.iter()
                            .enumerate()
                            .skip(k)
                            .step_by(threads)
                            .map(|(j, &(i, steering))| {
                                let c = uamnoise_core::PlannerConfig {
                                    seed: seeds[i],
                                    steering,
                                    ..cfg.clone()
                                };
                                let r = match plan_at(start, 0, goal, tz, model, w, &c, &[]).and_then(|o| match o.result {
                                    Err(PlannerError::NoPath(s)) => Ok((None, *s)),
                                    Err(e) => Err(e),
                                    Ok(p) => {
                                        let s = p.stats.clone();
                                        Ok((Some(p), s))
                                    }
                                }) {
                                    Ok((p, s)) => Ok(CompareRow {
                                        seed_index: i,
                                        steering,
                                        iterations: s.first_goal_iteration.unwrap_or(s.iterations),
                                        found: p.is_some(),
                                        duration_s: p.as_ref().map_or(f64::NAN, |p| p.duration()),
                                        mean_altitude: p.as_ref().map_or(f64::NAN, |p| p.mean_altitude()),
                                        noise_failures: s.noise_failures,
                                        pruned: s.pruned,
                                    }),
                                    Err(e) => Err(e.into()),
                                };
                                (j, r)
                            })
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("planner thread panicked")).collect()
        });
        for (j, r) in results.into_iter().flatten() {
            rows[j] = Some(r?);
        }
        let rows: Vec<CompareRow> = rows.into_iter().map(|r| r.expect("every job ran")).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed_index", "steering", "iterations", "found", "duration_s", "mean_altitude", "noise_failures", "pruned"])?;
        for r in &rows {
            w.write_record([
                r.seed_index.to_string(),
                format!("{:?}", r.steering).to_lowercase(),
                r.iterations.to_string(),
                r.found.to_string(),
                uamnoise_core::numfmt::sig9(r.duration_s),
                uamnoise_core::numfmt::sig9(r.mean_altitude),
                r.noise_failures.to_string(),
                r.pruned.to_string(),
            ])?;
        }
        run.text("compare.csv", std::str::from_utf8(&w.into_inner()?)?)?;
        let med = |s: Steering| median(rows.iter().filter(|r| r.steering == s).map(|r| r.iterations as f64).collect());
        let found = |s: Steering| rows.iter().filter(|r| r.steering == s && r.found).count();
        let text = format!(
            "seeds {n}\n{:<6}{:>10}{:>20}\n{:<6}{:>10}{:>20}\n{:<6}{:>10}{:>20}\n",
            "", "found", "median iterations", "URS", found(Steering::Urs), med(Steering::Urs), "PBS", found(Steering::Pbs), med(Steering::Pbs),
        );
        run.text("compare_report.txt", &text)?;
        return Ok(Outcome::Ok);
    }
    cfg.seed = run.seed("plan");
    let out = plan_at(start, 0, goal, &tz, &l.model, w, &cfg, &[])?;
    let p = match out.result {
        Ok(p) => p,
        Err(e) if is_infeasible(&e) => return infeasible(run, &e),
        Err(e) => return Err(e.into()),
    };
    write_plans(run, std::slice::from_ref(&p), &l, &cfg, "plan.json")?;
    Ok(Outcome::Ok)
}

fn write_plans(run: &mut Run, plans: &[MotionPlan], l: &Loaded, cfg: &uamnoise_core::PlannerConfig, name: &str) -> Result<()> {
    let audit = audit_plans(plans, &l.zones, l.oracle.as_ref())?;
    if plans.len() == 1 {
        run.json(name, &plans[0])?;
    } else {
        run.json(name, &plans)?;
    }
    run.text("trace.csv", &report::trace_csv(plans, &l.zones, l.oracle.as_ref())?)?;
    run.json("audit.json", &audit)?;
    let mut text = format!("delta {:.4} dBA\n", l.model.delta());
    for (k, p) in plans.iter().enumerate() {
        let continuity = match check_continuity(p, &cfg.bounds, &cfg.airspace) {
            Ok(()) => "ok".to_string(),
            Err(i) => format!("broken at state {i}"),
        };
        text.push_str(&format!(
            "vehicle {}\nsteps {}\ndeparture step {}\narrival time {:.1} s\nmean altitude {:.2} m\ncontinuity {continuity}\n",
            k + 1,
            p.states.len() - 1,
            p.t0,
            p.t_final() as f64 * p.step_seconds,
            p.mean_altitude()
        ));
        text.push_str(&report::stats_lines(&p.stats));
    }
    text.push_str(&report::audit_lines(&audit));
    run.text("plan_report.txt", &text)?;
    Ok(())
}

pub struct PlanMultiArgs {
    pub oracle: Option<PathBuf>,
    pub scenario: PathBuf,
    pub model: PathBuf,
}

/// Smallest distance between any two vehicles at a shared step.
pub fn min_separation(plans: &[MotionPlan]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in plans.iter().enumerate() {
        for b in &plans[i + 1..] {
            for t in a.t0.max(b.t0)..=a.t_final().min(b.t_final()) {
                let (p, q) = (a.state_at(t).expect("in span"), b.state_at(t).expect("in span"));
                best = best.min(p.distance_to(q));
            }
        }
    }
    best
}

pub fn plan_multi_cmd(run: &mut Run, a: &PlanMultiArgs) -> Result<Outcome> {
    let l = load_planning(run, a.oracle.as_deref(), &a.scenario, &a.model)?;
    if l.scenario.requests.is_empty() {
        bail!("scenario {} has no requests", a.scenario.display());
    }
    let mut cfg = l.scenario.config.clone();
    cfg.seed = run.seed("plan");
    run.param("planner", &cfg);
    run.param("weights", l.scenario.weights);
    let tz = match tighten_zones(&l.zones, SoundLevel::db(l.model.delta()), cfg.tightening) {
        Ok(t) => t,
        Err(e) => return infeasible(run, &e),
    };
    let requests: &[FlightRequest] = &l.scenario.requests;
    let plans = match plan_multi(requests, &tz, &l.model, &l.scenario.weights, &cfg) {
        Ok(p) => p,
        Err(e) if is_infeasible(&e) => return infeasible(run, &e),
        Err(e) => return Err(e.into()),
    };
    write_plans(run, &plans, &l, &cfg, "plans.json")?;
    let horizon = plans.iter().map(|p| p.t_final() + 1).max().unwrap_or(0);
    let budgets = renew_budgets(&tz, &plans, horizon);
    let mut extra = format!("min separation {:.2} m\n", min_separation(&plans));
    match budgets {
        Ok(b) => {
            let residual = b
                .iter()
                .flat_map(|z| (0..horizon).map(move |t| ((z.used_inst[t] + z.remaining_inst(t)) / z.base_inst - 1.0).abs()))
                .fold(0.0, f64::max);
            extra.push_str(&format!("budget conservation residual {residual:.3e}\n"));
        }
        Err(e) => extra.push_str(&format!("remaining budget after all plans: {e}\n")),
    }
    let mut text = std::fs::read_to_string(run.path("plan_report.txt"))?;
    text.push_str(&extra);
    run.text("plan_report.txt", &text)?;
    Ok(Outcome::Ok)
}
