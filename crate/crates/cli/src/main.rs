mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sgground_core::{Method, RatkMode};

use config::RunConfig;
use error::CliError;

/// Scene-graph grounding: synthesize data, train relationship models,
/// ground queries, evaluate retrieval and audit dataset bias.
#[derive(Debug, Parser)]
#[command(name = "sgground", version)]
struct Cli {
    /// TOML (or .json) run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-image scoring.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file (JSON Lines).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset, its train/test split and query set.
    Synth {
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Fit one relationship model per predicate on a training set.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write the MAP grounding of one query for every image.
    Ground {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Query scene-graph file.
        #[arg(long)]
        query: PathBuf,
    },
    /// Rank images for one query.
    Retrieve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value = "irsg")]
        method: Method,
    },
    /// Compute R@k curves for every query and method.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Query file or directory of query files.
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Comma-separated subset of irsg,baseline.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        ratk_mode: Option<RatkMode>,
    },
    /// Bias detectors, linearity analysis and query statistics.
    Audit {
        #[command(flatten)]
        data: DataArgs,
        /// Enables the linearity and collapse checks.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if cli.out.is_some() {
        cfg.paths.out = cli.out.clone();
    }
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            *slot = v.clone();
        }
    };
    match &cli.command {
        Command::Synth { train_fraction } => {
            if let Some(f) = train_fraction {
                cfg.split.train_fraction = *f;
            }
        }
        Command::Train { data } => set(&mut cfg.paths.dataset, &data.dataset),
        Command::Ground { data, models, .. } | Command::Retrieve { data, models, .. } => {
            set(&mut cfg.paths.dataset, &data.dataset);
            set(&mut cfg.paths.models, models);
        }
        Command::Eval {
            data,
            models,
            queries,
            methods,
            k_max,
            ratk_mode,
        } => {
            set(&mut cfg.paths.dataset, &data.dataset);
            set(&mut cfg.paths.models, models);
            set(&mut cfg.paths.queries, queries);
            if let Some(m) = methods {
                cfg.eval.methods = m.clone();
            }
            if let Some(k) = k_max {
                cfg.eval.k_max = *k;
            }
            if let Some(r) = ratk_mode {
                cfg.eval.ratk_mode = *r;
            }
        }
        Command::Audit { data, models, queries } => {
            set(&mut cfg.paths.dataset, &data.dataset);
            set(&mut cfg.paths.models, models);
            set(&mut cfg.paths.queries, queries);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    println!("# effective config");
    print!("{}", cfg.to_toml());
    println!("# end config");
    let started = std::time::Instant::now();
    let name = match &cli.command {
        Command::Synth { .. } => {
            commands::synth(&cfg)?;
            "synth"
        }
        Command::Train { .. } => {
            commands::train(&cfg)?;
            "train"
        }
        Command::Ground { query, .. } => {
            commands::ground(&cfg, query)?;
            "ground"
        }
        Command::Retrieve { query, method, .. } => {
            commands::retrieve(&cfg, query, *method)?;
            "retrieve"
        }
        Command::Eval { .. } => {
            commands::eval(&cfg)?;
            "eval"
        }
        Command::Audit { .. } => {
            commands::audit(&cfg)?;
            "audit"
        }
    };
    log::info!("{name} finished in {:.2?}", started.elapsed());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .parse_env("RUST_LOG")
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: code={} kind={} message={msg}", e.exit_code(), e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
