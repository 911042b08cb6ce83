//! `carca`: prepare data, train, evaluate, run ablation sweeps and time
//! training batches, all driven by one TOML config file.

mod commands;
mod error;
mod prepared;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carca_core::config::RunConfig;
use clap::{Parser, Subcommand};

use commands::{EvalArgs, FeatureChoice, ProtocolChoice, SplitChoice};
use error::CliError;

#[derive(Parser)]
#[command(name = "carca", version, about = "Context- and attribute-aware sequential recommendation")]
struct Cli {
    /// Run configuration (TOML). Relative paths inside it resolve against
    /// the file's directory.
    #[arg(short, long, global = true, default_value = "carca.toml")]
    config: PathBuf,
    /// Override paths.output_dir.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and filter the raw files, write prepared.json and a statistics table.
    Prepare,
    /// Train on prepared data; writes model.ckpt and history.jsonl.
    Train,
    /// Evaluate a checkpoint with a sampled-negative protocol.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate a freshly initialised model instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        fresh: bool,
        #[arg(long, value_enum, default_value = "config")]
        protocol: ProtocolChoice,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        /// Report path (default: <output>/report.json or report_auc.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate several ablation configurations.
    Ablate {
        /// Ablation ids, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
        ids: Vec<u8>,
        /// Feature toggle settings to cross with every id.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "config")]
        features: Vec<FeatureChoice>,
    },
    /// Time training steps on one batch.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
    },
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || p.as_os_str().is_empty() { p.to_path_buf() } else { base.join(p) }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let base = cli.config.parent().unwrap_or(Path::new("."));
    cfg.paths.interactions = resolve(base, &cfg.paths.interactions);
    cfg.paths.attributes = cfg.paths.attributes.as_deref().map(|p| resolve(base, p));
    cfg.paths.output_dir = match &cli.output {
        Some(o) => o.clone(),
        None if cfg.paths.output_dir.as_os_str().is_empty() => base.join("out"),
        None => resolve(base, &cfg.paths.output_dir),
    };
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("CARCA_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("CARCA_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {threads} threads: {e}")))
}

fn run(cli: Cli) -> Result<String, CliError> {
    configure_threads()?;
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Prepare => commands::prepare(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval { checkpoint, fresh, protocol, split, out } => {
            commands::eval(&cfg, &EvalArgs { checkpoint, fresh, protocol, split, out }).map(|r| r.0)
        }
        Command::Ablate { ids, features } => commands::ablate(&cfg, &ids, &features).map(|r| r.0),
        Command::Bench { checkpoint, batch_size, iterations } => {
            commands::bench(&cfg, checkpoint.as_deref(), batch_size, iterations).map(|r| r.0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
