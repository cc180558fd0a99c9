use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bobw_core::harness::{self, ExperimentConfig, GrowthModel, RunArtifact};
use bobw_core::pm::{analyze, GameAnalysis, PmGame};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bobw", version, about = "Best-of-both-worlds bandit and partial-monitoring experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a partial-monitoring game and print its structure as JSON.
    AnalyzeGame { file: PathBuf },
    /// Run an experiment config and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (default: `runs/<config name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel replications.
        #[arg(long, env = harness::WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Fit a growth model to an artifact's mean regret trace.
    SlopeCheck {
        artifact: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    #[value(name = "logT")]
    LogT,
    #[value(name = "sqrtT")]
    SqrtT,
    #[value(name = "sqrtTlogT")]
    SqrtTLogT,
    #[value(name = "T23")]
    T23,
}

impl From<Model> for GrowthModel {
    fn from(m: Model) -> Self {
        match m {
            Model::LogT => GrowthModel::LogT,
            Model::SqrtT => GrowthModel::SqrtT,
            Model::SqrtTLogT => GrowthModel::SqrtTLogT,
            Model::T23 => GrowthModel::T23,
        }
    }
}

fn analyze_game(file: &Path) -> anyhow::Result<()> {
    let game = PmGame::from_path(file).with_context(|| format!("reading {}", file.display()))?;
    let analysis = analyze(&game)?;
    let text = serde_json::to_string_pretty(&analysis)?;
    // Re-check the estimators as they will be read back by consumers.
    let reloaded: GameAnalysis = serde_json::from_str(&text)?;
    reloaded.verify(&game)?;
    println!("{text}");
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>, workers: Option<usize>) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_path(config).with_context(|| format!("reading {}", config.display()))?;
    let workers = harness::resolve_workers(workers)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let (artifact, timing) = harness::run(&cfg, base, workers)?;
    let out = out.unwrap_or_else(|| {
        let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned());
        PathBuf::from("runs").join(cfg.name.clone().or(stem).unwrap_or_else(|| "run".into()))
    });
    artifact.write(&timing, &out)?;
    let last = artifact.aggregate.last().expect("grid is nonempty");
    println!(
        "{} replications, T = {}: mean regret {:.3} (median {:.3}) in {:.2}s -> {}",
        artifact.replications.len(),
        last.t,
        last.mean,
        last.median,
        timing.total_seconds,
        out.display()
    );
    Ok(())
}

fn slope_check(artifact: &Path, model: Model) -> anyhow::Result<()> {
    let artifact = RunArtifact::from_path(artifact).with_context(|| format!("reading {}", artifact.display()))?;
    let report = artifact.slope_check(model.into())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::AnalyzeGame { file } => analyze_game(&file),
        Command::Run { config, out, workers } => run(&config, out, workers),
        Command::SlopeCheck { artifact, model } => slope_check(&artifact, model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let refusal = e
                .chain()
                .any(|c| c.downcast_ref::<bobw_core::Error>().is_some_and(bobw_core::Error::is_refusal));
            ExitCode::from(if refusal { 2 } else { 1 })
        }
    }
}
