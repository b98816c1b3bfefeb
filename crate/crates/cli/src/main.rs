//! `fips`: run the explainable export-forecasting pipeline stage by stage.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure (degenerate input, non-convergence, undefined metric).

mod artifacts;
mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fips_core::Error;

use config::RunConfig;
use stages::{run_stage, EvaluateArgs, Failure, Stage, SweepArgs, PIPELINE};

#[derive(Debug, Parser)]
#[command(name = "fips", version, about = "Explainable export forecasting with validated random-forest importances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fips-out")]
    out: PathBuf,
    /// Export flows (`year,country,product,value`), overriding the configuration.
    #[arg(long, global = true)]
    flows: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic capability world: flows.csv and world.json.
    Synth,
    /// Competitiveness matrices, activation candidates and the RCA baseline.
    Ingest,
    /// Cross-validated random-forest scores.
    Forecast,
    /// Permutation-validated importances for every target.
    Explainers,
    /// t-SNE layout of the explainer vectors.
    Embed,
    /// Density forecast in the embedded product space.
    PredictFips,
    /// Logistic fusion of RCA and the density forecast.
    Logit,
    /// AUC, best F1 and mean precision@k on the activations.
    Evaluate {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        activations: Option<PathBuf>,
    },
    /// Fitness-complexity and the explainer-complexity curves.
    Complexity,
    /// Sector importance network filtered to its PMFG.
    Network,
    /// Density-forecast metrics against the average nearest-neighbour count.
    SweepNn {
        #[arg(long, default_value_t = 10)]
        min: usize,
        #[arg(long, default_value_t = 150)]
        max: usize,
        #[arg(long, default_value_t = 10)]
        step: usize,
    },
    /// Every stage from ingest to network.
    All,
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) | Failure::Core(Error::Parameter(_)) => 2,
        Failure::Core(e) if e.is_numeric() => 4,
        Failure::Core(_) => 3,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(Failure::Usage(format!("missing config {}", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = &cli.flows {
        cfg.data.flows = Some(f.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), (Option<Stage>, Failure)> {
    let cfg = load_config(cli).map_err(|e| (None, e))?;
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err((None, Failure::Usage("--jobs must be at least 1".into())));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| (None, Failure::Usage(e.to_string())))?;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| (None, Failure::Core(e.into())))?;

    let mut eval = EvaluateArgs::default();
    let mut sweep = SweepArgs { min: 10, max: 150, step: 10 };
    let stages: Vec<Stage> = match &cli.command {
        Command::Synth => vec![Stage::Synth],
        Command::Ingest => vec![Stage::Ingest],
        Command::Forecast => vec![Stage::Forecast],
        Command::Explainers => vec![Stage::Explainers],
        Command::Embed => vec![Stage::Embed],
        Command::PredictFips => vec![Stage::PredictFips],
        Command::Logit => vec![Stage::Logit],
        Command::Evaluate { scores, truth, activations } => {
            eval = EvaluateArgs { scores: scores.clone(), truth: truth.clone(), activations: activations.clone() };
            vec![Stage::Evaluate]
        }
        Command::Complexity => vec![Stage::Complexity],
        Command::Network => vec![Stage::Network],
        Command::SweepNn { min, max, step } => {
            sweep = SweepArgs { min: *min, max: *max, step: *step };
            vec![Stage::SweepNn]
        }
        Command::All => PIPELINE.to_vec(),
    };
    let started = Instant::now();
    for stage in stages {
        log::info!("{} started", stage.name());
        let manifest = run_stage(stage, &cfg, &cli.out, &eval, sweep).map_err(|(s, e)| (Some(s), e))?;
        log::debug!("wrote {}", manifest.display());
    }
    log::info!("done in {:.2?}", started.elapsed());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((stage, failure)) => {
            match stage {
                Some(s) => eprintln!("error [{}]: {failure}", s.name()),
                None => eprintln!("error: {failure}"),
            }
            ExitCode::from(exit_code(&failure))
        }
    }
}
