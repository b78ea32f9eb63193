use clap::{Parser, Subcommand};
use mgmt_cli::pipeline::{self, CliError};
use mgmt_cli::PipelineConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "mgmt", version, about = "MGMT methylation prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the split seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for subject-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Preprocess every cohort subject into the cache.
    Preprocess,
    /// Extract, fuse and standardize features.
    Features,
    /// Write the train/val split and fold assignment.
    Split,
    /// Train, calibrate and freeze a model.
    Train,
    /// Stratified k-fold cross-validation.
    Crossval,
    /// Score an external cohort with a frozen model.
    External {
        /// Frozen model directory; defaults to the configured one.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Emit ROC and confusion CSVs and a text summary.
    Report,
}

fn load(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(CliError::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.split.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(c) = &cli.cache_dir {
        cfg.cache_dir = c.clone();
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = load(cli)?;
    Ok(match &cli.command {
        Command::Preprocess => pipeline::run_preprocess(&cfg)?.ok(),
        Command::Features => pipeline::run_features(&cfg)?.ok(),
        Command::Split => {
            pipeline::run_split(&cfg)?;
            true
        }
        Command::Train => {
            pipeline::run_train(&cfg)?;
            true
        }
        Command::Crossval => {
            pipeline::run_crossval(&cfg)?;
            true
        }
        Command::External { model } => {
            let dir = model.clone().unwrap_or_else(|| cfg.model_path());
            pipeline::run_external(&cfg, &dir)?.1.ok()
        }
        Command::Report => {
            pipeline::run_report(&cfg)?;
            true
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ CliError::Config(_)) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
    }
}
