use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use volfield::pipeline;
use volfield::planner::{CostKind, DynamicsKind};
use volfield::par;

/// Learned geometry, flow and correspondence fields for deformable objects.
///
/// Exit status is 0 on success, 2 when an input fails validation, and 3 for
/// runtime failures. Set VOLFIELD_THREADS to bound the worker pool.
#[derive(Parser)]
#[command(name = "volfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DynamicsArg {
    Oracle,
    Learned,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Dcorr,
    Chamfer,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate random grasp-move-release commands and write a JSON-lines trajectory file.
    Simulate {
        /// Built-in mesh name (box, l-shape, snake, toy, folded-chain) or mesh JSON file.
        #[arg(long)]
        mesh: String,
        /// Number of commands to simulate.
        #[arg(long)]
        actions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// TOML file with simulator, action, scene and camera settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the decoders on trajectory files; writes a checkpoint and a loss CSV.
    Train {
        #[arg(long)]
        mesh: String,
        /// Trajectory files (repeatable).
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        /// TOML training configuration; missing keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV.
        #[arg(long)]
        log: PathBuf,
    },
    /// Score a checkpoint on a trajectory file; one CSV row per record.
    Evaluate {
        #[arg(long)]
        mesh: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// TOML evaluation settings (thresholds, sample counts, seed).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a rearrangement between two seeded scenes and execute the best sequence.
    Plan {
        #[arg(long)]
        mesh: String,
        #[arg(long)]
        start_seed: u64,
        #[arg(long)]
        target_seed: u64,
        /// Candidate sequences.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum, default_value = "oracle")]
        dynamics: DynamicsArg,
        #[arg(long, value_enum)]
        cost: Option<CostArg>,
        /// Checkpoint for learned dynamics.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// TOML with simulator, camera, problem and planner settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Plan report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Executed-metrics CSV.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Summarize every evaluate and plan-metrics CSV in a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> volfield::Result<()> {
    match cli.command {
        Command::Simulate { mesh, actions, seed, out, config } => {
            let mesh = pipeline::load_mesh(&mesh)?;
            let cfg = pipeline::load_simulate_config(config.as_deref())?;
            let n = pipeline::run_simulate(&mesh, &cfg, actions, seed, &out)?;
            log::info!("wrote {n} records to {}", out.display());
        }
        Command::Train { mesh, data, config, steps, seed, out, log } => {
            let mesh = pipeline::load_mesh(&mesh)?;
            let mut cfg = match config {
                Some(p) => pipeline::load_train_config(&p)?,
                None => Default::default(),
            };
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = pipeline::run_train(mesh, &data, &cfg, &out, &log)?;
            log::info!("best step {} of {}, config {}", summary.best_step, summary.steps_run, summary.config_hash);
        }
        Command::Evaluate { mesh, checkpoint, data, config, out } => {
            let mesh = pipeline::load_mesh(&mesh)?;
            let cfg = pipeline::load_eval_config(config.as_deref())?;
            let rows = pipeline::run_evaluate(mesh, &checkpoint, &data, &cfg, &out)?;
            log::info!("evaluated {} records", rows.len());
        }
        Command::Plan { mesh, start_seed, target_seed, k, horizon, dynamics, cost, checkpoint, config, out, metrics_out } => {
            let mesh = pipeline::load_mesh(&mesh)?;
            let mut cfg = pipeline::load_plan_config(config.as_deref())?;
            if let Some(k) = k {
                cfg.plan.k = k;
            }
            if let Some(h) = horizon {
                cfg.plan.horizon = h;
            }
            if let Some(c) = cost {
                cfg.plan.cost = match c {
                    CostArg::Dcorr => CostKind::Dcorr,
                    CostArg::Chamfer => CostKind::Chamfer,
                };
            }
            let kind = match dynamics {
                DynamicsArg::Oracle => DynamicsKind::Oracle,
                DynamicsArg::Learned => DynamicsKind::Learned,
            };
            let report = pipeline::run_plan(
                &mesh,
                &cfg,
                start_seed,
                target_seed,
                checkpoint.as_deref(),
                kind,
                &out,
                metrics_out.as_deref(),
            )?;
            log::info!("best roll-out {} executed d_corr {:.3e}", report.best.index, report.executed.d_corr);
        }
        Command::Report { dir } => {
            let report = pipeline::run_report(&dir)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(v) = std::env::var("VOLFIELD_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                par::set_threads(n);
            }
            _ => {
                eprintln!("error: VOLFIELD_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
