use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topicforge::config::{ConfigError, PipelineConfig};
use topicforge::{Pipeline, Stage};
use topicforge_core::topicpage::Strategy;

const DEFAULT_CONFIG: &str = "topicforge.toml";

#[derive(Parser)]
#[command(name = "topicforge", version, about = "Build topic landing pages from search query logs")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults to ./topicforge.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Working directory for stage artifacts; overrides the config file.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Rerun stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    /// Only print errors and stage output.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the click log, catalog, candidates and blocklist.
    Ingest,
    /// Co-click statistics and the training set.
    Metric,
    /// Pretrain the intention encoder.
    Train,
    /// Fine-tune the page classifier.
    Finetune,
    /// Cluster candidate queries within product types.
    Cluster,
    /// Deduplicate cluster representatives against existing pages.
    Dedup,
    /// Select topics under the page quota.
    Select {
        /// pipeline or top-clicks
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Emit topic-page specifications.
    Emit,
    /// Date-split experiment plan and analysis.
    Experiment {
        /// Also simulate a power curve.
        #[arg(long)]
        power_curve: bool,
    },
    /// Every stage in order.
    All,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None if std::path::Path::new(DEFAULT_CONFIG).is_file() => PipelineConfig::load(std::path::Path::new(DEFAULT_CONFIG))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Select { strategy: Some(s) } = &cli.command {
        cfg.select.strategy = *s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let workdir = cli
        .workdir
        .clone()
        .or_else(|| config.workdir.clone())
        .unwrap_or_else(|| PathBuf::from("work"));
    let mut pipeline = Pipeline::new(config, workdir);
    pipeline.force = cli.force;
    pipeline.verbose = !cli.quiet;
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Metric => Stage::Metric,
        Command::Train => Stage::Train,
        Command::Finetune => Stage::Finetune,
        Command::Cluster => Stage::Cluster,
        Command::Dedup => Stage::Dedup,
        Command::Select { .. } => Stage::Select,
        Command::Emit => Stage::Emit,
        Command::Experiment { power_curve } => {
            pipeline.power_curve = power_curve;
            Stage::Experiment
        }
        Command::All => {
            pipeline.run_all()?;
            return Ok(());
        }
    };
    pipeline.run(stage)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
