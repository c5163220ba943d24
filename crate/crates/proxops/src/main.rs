//! `proxops` command line: drives the full pipeline from dataset generation
//! through training to evaluation, all from one config file and one seed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use proxops::config::RunConfig;
use proxops::pipeline::{self, ControllerKind, PipelineError};

#[derive(Parser)]
#[command(
    name = "proxops",
    about = "Asteroid proximity-operations GNC pipeline: MPC expert, lidar-driven imitation policy, and the MPC-guided hybrid controller",
    after_help = "EXIT CODES:\n  \
        0  success\n  \
        2  configuration error\n  \
        3  io/serialization error\n  \
        4  missing artifact (run earlier stages first)\n  \
        5  solver or training failure\n  \
        6  dataset/checkpoint corruption"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long, default_value = "configs/desk.toml")]
    config: PathBuf,
    /// Run directory receiving all artifacts.
    #[arg(long, default_value = "runs/default")]
    run_dir: PathBuf,
    /// Master seed; every random stream in the run derives from it.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Mpc,
    Policy,
    Hybrid,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Mpc => ControllerKind::Mpc,
            ControllerArg::Policy => ControllerKind::Policy,
            ControllerArg::Hybrid => ControllerKind::Hybrid,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset: surrogate grid, surrogate model, clean and
    /// disturbed expert episodes, splits and the manifest.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// (Re)train the lidar surrogate from the stored grid.
    TrainSurrogate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the imitation policy on the dataset's training split.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
    },
    /// Fly one seeded scenario with the chosen controller.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        controller: ControllerArg,
        /// Scenario index (selects the seeded transit).
        #[arg(long, default_value_t = 0)]
        scenario: u64,
    },
    /// Run the evaluation suite: histograms, error curves, timing, usage
    /// and the energy model.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate run artifacts into reports/summary.txt.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, PipelineError> {
    Ok(RunConfig::load(&common.config)?)
}

fn run() -> Result<(), PipelineError> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let summary = pipeline::gen_data(&cfg, common.seed, &common.run_dir)?;
            println!(
                "generated {} clean + {} disturbed episodes ({} grid points, {} interior skipped)",
                summary.n_clean, summary.n_disturbed, summary.grid_points, summary.grid_skipped
            );
            for (id, outcome) in &summary.outcomes {
                println!("  episode {id:>3}: {outcome}");
            }
            println!(
                "surrogate: hit-range RMSE {:.1} m, miss mismatch {:.2}%",
                summary.surrogate_report.hit_range_rmse,
                100.0 * summary.surrogate_report.miss_classification_rate
            );
        }
        Command::TrainSurrogate { common } => {
            let cfg = load_config(&common)?;
            let report = pipeline::train_surrogate_stage(&cfg, common.seed, &common.run_dir)?;
            println!(
                "surrogate trained: best epoch {}, val loss {:.5}, hit-range RMSE {:.1} m, miss mismatch {:.2}%",
                report.best_epoch,
                report.best_val_loss,
                report.hit_range_rmse,
                100.0 * report.miss_classification_rate
            );
        }
        Command::TrainPolicy { common } => {
            let cfg = load_config(&common)?;
            let summary = pipeline::train_policy_stage(&cfg, common.seed, &common.run_dir)?;
            println!(
                "policy trained on {} samples: best epoch {}, val RMSE {:.4} N, test RMSE {:.4} N (zero baseline {:.4} N)",
                summary.train_samples,
                summary.best_epoch,
                summary.best_val_rmse,
                summary.test_rmse,
                summary.zero_baseline_rmse
            );
        }
        Command::Rollout {
            common,
            controller,
            scenario,
        } => {
            let cfg = load_config(&common)?;
            let summary = pipeline::rollout_stage(
                &cfg,
                common.seed,
                &common.run_dir,
                controller.into(),
                scenario,
            )?;
            println!(
                "{} scenario {}: {} after {} steps, terminal position error {:.1} m",
                summary.controller,
                summary.scenario,
                summary.outcome,
                summary.steps,
                summary.terminal_position_error_m
            );
            if let Some(usage) = &summary.usage {
                println!(
                    "  model usage {:.0}% ({} solves over {} steps, {}/{} checks passed)",
                    100.0 * usage.model_usage,
                    usage.mpc_solves,
                    usage.total_steps,
                    usage.checks_passed,
                    usage.checks_passed + usage.checks_failed
                );
            }
            println!("  log: {}", summary.log_file);
        }
        Command::Evaluate { common } => {
            let cfg = load_config(&common)?;
            let summary = pipeline::evaluate_stage(&cfg, common.seed, &common.run_dir)?;
            for s in &summary.scenarios {
                println!(
                    "scenario {}: mpc {} ({:.0} m), policy {} ({:.0} m), hybrid {} ({:.0} m), usage {:.0}%",
                    s.index,
                    s.mpc_outcome,
                    s.mpc_terminal_error_m,
                    s.policy_outcome,
                    s.policy_terminal_error_m,
                    s.hybrid_outcome,
                    s.hybrid_terminal_error_m,
                    100.0 * s.usage.model_usage
                );
            }
            println!(
                "timing: policy median {:.2} ms, mpc median {:.2} ms",
                1e3 * summary.timing.policy_inference.median_s,
                1e3 * summary.timing.mpc_solve.median_s
            );
            println!(
                "energy ratios: {:.1}% (GPU), {:.1}% (CPU); frame violations: {}",
                100.0 * summary.energy_ratio_gpu,
                100.0 * summary.energy_ratio_cpu,
                summary.frame_violations
            );
        }
        Command::Report { common } => {
            let text = pipeline::report_stage(&common.run_dir)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
