use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trajtta_cli::{
    cmd_ablate, cmd_generate, cmd_report, cmd_run, cmd_train, Axis, CliError, ExperimentConfig, Mode,
    RunOptions,
};

#[derive(Parser)]
#[command(name = "trajtta", version, about = "Trajectory-based test-time adaptation experiments")]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for case-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// full | only_last | without_first
    #[arg(long)]
    subset: Option<String>,
    /// per_case | per_dataset
    #[arg(long)]
    granularity: Option<String>,
    /// mean_over_S | sum_over_S
    #[arg(long)]
    loss_reduction: Option<String>,
    /// Seed of the modulator initialization and adaptation.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip persisting reconstruction trajectories in the run directory.
    #[arg(long)]
    no_trajectory_cache: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test cases.
    Generate {
        #[arg(long)]
        force: bool,
    },
    /// Train the backbone on the source split.
    Train,
    /// Run one pipeline mode on the test split.
    Run {
        /// baseline | last_only_adapt | irtta | irtta_sup
        #[arg(long, default_value = "irtta")]
        mode: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep one axis with `irtta` runs.
    Ablate {
        /// emb_size | steps | S | subset | granularity
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Regenerate a run's summary from its per-case metrics.
    Report {
        run_dir: PathBuf,
    },
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<(), CliError> {
    if let Some(s) = o.steps {
        cfg.adapt.steps = s;
    }
    if let Some(lr) = o.lr {
        cfg.adapt.lr = lr;
    }
    if let Some(s) = &o.subset {
        cfg.adapt.subset = s.parse()?;
    }
    if let Some(g) = &o.granularity {
        cfg.adapt.granularity = g.parse()?;
    }
    if let Some(r) = &o.loss_reduction {
        cfg.adapt.loss_reduction = r.parse()?;
    }
    if let Some(seed) = o.seed {
        cfg.adapt.seed = seed;
        cfg.modulator.seed = seed;
    }
    cfg.validate()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Generate { force } => {
            let m = cmd_generate(&cfg, force)?;
            println!("{} train / {} test cases", m.train.len(), m.test.len());
        }
        Command::Train => {
            let s = cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
        }
        Command::Run { mode, overrides } => {
            apply(&mut cfg, &overrides)?;
            let mode: Mode = mode.parse()?;
            let opts = RunOptions {
                cache_trajectories: !overrides.no_trajectory_cache,
            };
            let art = cmd_run(&cfg, mode, &opts)?;
            println!("{}", art.run_dir.join("summary.csv").display());
        }
        Command::Ablate {
            axis,
            values,
            overrides,
        } => {
            apply(&mut cfg, &overrides)?;
            let axis: Axis = axis.parse()?;
            let opts = RunOptions {
                cache_trajectories: !overrides.no_trajectory_cache,
            };
            let rows = cmd_ablate(&cfg, axis, &values, &opts)?;
            for r in rows {
                println!(
                    "{axis}={}\tdice={}\truntime={:.2}s",
                    r.value,
                    r.summary
                        .mean_dice
                        .map(|d| format!("{d:.4}"))
                        .unwrap_or_else(|| "absent".into()),
                    r.runtime_s
                );
            }
        }
        Command::Report { run_dir } => {
            let s = cmd_report(&run_dir)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
        }
    }
    Ok(())
}
