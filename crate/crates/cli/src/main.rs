//! `uamnoise`: partition, sample, train and certify, validate, and plan.
//!
//! Exit codes: 0 ok, 2 infeasible (no path or exhausted budget), 3 bound
//! violated, 4 configuration or input error.

mod commands;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uamnoise_core::planner::Steering;

use commands::Outcome;
use manifest::Run;

#[derive(Parser)]
#[command(name = "uamnoise", version, about = "Certified eVTOL noise models and noise-aware planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Root seed; every stage derives its own sub-seed from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for commands that run independent jobs.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SteeringArg {
    Urs,
    Pbs,
}

impl From<SteeringArg> for Steering {
    fn from(s: SteeringArg) -> Self {
        match s {
            SteeringArg::Urs => Steering::Urs,
            SteeringArg::Pbs => Steering::Pbs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split the azimuth into sectors of bounded noise variation.
    Partition {
        /// Oracle config JSON; the built-in synthetic oracle if omitted.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        mu_phi: f64,
        /// Sweep step in degrees.
        #[arg(long, default_value_t = 0.1)]
        step_deg: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Build a certified dataset by active sampling, or the lattice baseline.
    Sample {
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        mu_act: f64,
        /// Fraction of mu_act allowed across one r slab.
        #[arg(long, default_value_t = 0.4)]
        r_share: f64,
        /// Narrowest r slab, m.
        #[arg(long, default_value_t = 1.0)]
        r_min_width: f64,
        /// Use the default lattice grid instead of active sampling.
        #[arg(long)]
        lattice: bool,
        /// Lattice grid JSON (implies --lattice).
        #[arg(long)]
        lattice_grid: Option<PathBuf>,
        /// Also count the evaluations of uniform refinement to the same mu_act.
        #[arg(long)]
        compare_uniform: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train one monotone network per sector and certify its error bound.
    TrainCertify {
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        partition: PathBuf,
        /// Directory written by `sample`.
        #[arg(long)]
        dataset: PathBuf,
        /// Lattice dataset directory; trains and certifies a baseline model too.
        #[arg(long)]
        lattice: Option<PathBuf>,
        /// Training config JSON.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Check the certified bound against the oracle on random points.
    Validate {
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Write a preset scenario (relaxed, moderate, strict or multi).
    Scenario {
        #[arg(long)]
        preset: String,
        #[command(flatten)]
        common: Common,
    },
    /// Plan one flight.
    Plan {
        /// Oracle used for the post-hoc audit.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        steering: Option<SteeringArg>,
        /// Run URS and PBS on this many paired seeds instead of one plan.
        #[arg(long)]
        compare: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Plan the scenario's requests in order on renewed noise budgets.
    PlanMulti {
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    let start = |name, c: &Common| -> anyhow::Result<Run> {
        let mut r = Run::new(name, &c.out, c.seed)?;
        r.param("threads", c.threads);
        Ok(r)
    };
    let (mut r, outcome) = match command {
        Command::Partition { oracle, mu_phi, step_deg, common } => {
            let mut r = start("partition", &common)?;
            let o = commands::partition(&mut r, &commands::PartitionArgs { oracle, mu_phi, step_deg })?;
            (r, o)
        }
        Command::Sample {
            oracle,
            partition,
            mu_act,
            r_share,
            r_min_width,
            lattice,
            lattice_grid,
            compare_uniform,
            common,
        } => {
            let mut r = start("sample", &common)?;
            let a = commands::SampleArgs {
                oracle,
                partition,
                mu_act,
                r_share,
                r_min_width,
                lattice,
                lattice_grid,
                compare_uniform,
            };
            let o = commands::sample(&mut r, &a)?;
            (r, o)
        }
        Command::TrainCertify {
            oracle,
            partition,
            dataset,
            lattice,
            train_config,
            epochs,
            common,
        } => {
            let mut r = start("train-certify", &common)?;
            let a = commands::TrainArgs {
                oracle,
                partition,
                dataset,
                lattice,
                train_config,
                epochs,
            };
            let o = commands::train_certify(&mut r, &a)?;
            (r, o)
        }
        Command::Validate { oracle, model, n, common } => {
            let mut r = start("validate", &common)?;
            let o = commands::validate(&mut r, &commands::ValidateArgs { oracle, model, n: n as usize })?;
            (r, o)
        }
        Command::Scenario { preset, common } => {
            let mut r = start("scenario", &common)?;
            let o = commands::scenario(&mut r, &commands::ScenarioArgs { preset })?;
            (r, o)
        }
        Command::Plan {
            oracle,
            scenario,
            model,
            steering,
            compare,
            common,
        } => {
            let mut r = start("plan", &common)?;
            let a = commands::PlanArgs {
                oracle,
                scenario,
                model,
                steering: steering.map(Into::into),
                compare,
                threads: common.threads as usize,
            };
            let o = commands::plan(&mut r, &a)?;
            (r, o)
        }
        Command::PlanMulti { oracle, scenario, model, common } => {
            let mut r = start("plan-multi", &common)?;
            let o = commands::plan_multi_cmd(&mut r, &commands::PlanMultiArgs { oracle, scenario, model })?;
            (r, o)
        }
    };
    r.param("outcome", format!("{outcome:?}").to_lowercase());
    r.finish()?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => {
            eprintln!("infeasible; see the report in the output directory");
            ExitCode::from(2)
        }
        Ok(Outcome::BoundViolated) => {
            eprintln!("certified bound violated; see validation_table.txt");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(4)
        }
    }
}
