//! Command-line surface.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{Pipeline, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "gradflow",
    version,
    about = "Learn and integrate gradient-flow models of a lattice gas"
)]
pub struct Cli {
    /// Flat dotted-key TOML config; the desk preset when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainStage {
    K1,
    F,
    Epinets,
    Baseline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the KMC realizations and write snapshot CSVs.
    Simulate {
        /// Also write site-level snapshots.
        #[arg(long)]
        raw: bool,
    },
    /// Estimate the operator and evolution datasets from the snapshots.
    CoarseGrain,
    /// Train one model.
    Train {
        #[arg(long, value_enum)]
        stage: TrainStage,
    },
    /// Ensemble prediction from the test profile.
    Predict,
    /// Integrate the analytic long-range model from the test profile.
    Lrm,
    /// Score the prediction and write `metrics.txt`.
    Evaluate,
    /// Every stage, reusing fresh cached outputs.
    Pipeline,
    /// Print the resolved config in canonical form.
    Config,
}

impl Cli {
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::preset(crate::Scenario::Desk),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Executes the parsed command. Returns the lines to print on success.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let cfg = cli.resolve_config()?;
    if let Command::Config = cli.command {
        return Ok(cfg.to_flat_toml().lines().map(str::to_string).collect());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut pipeline = Pipeline::new(cfg)?;
    if let Command::Simulate { raw: true } = cli.command {
        pipeline = pipeline.with_raw_snapshots();
    }
    let stage = match cli.command {
        Command::Simulate { .. } => {
            pipeline.simulate()?;
            Stage::Simulate
        }
        Command::CoarseGrain => {
            pipeline.datasets()?;
            Stage::CoarseGrain
        }
        Command::Train { stage } => match stage {
            TrainStage::K1 => {
                pipeline.k1_model()?;
                Stage::TrainK1
            }
            TrainStage::F => {
                pipeline.f_model()?;
                Stage::TrainF
            }
            TrainStage::Epinets => {
                pipeline.epistemic_model()?;
                Stage::TrainEpinets
            }
            TrainStage::Baseline => {
                pipeline.baseline_model()?;
                Stage::TrainBaseline
            }
        },
        Command::Predict => {
            pipeline.prediction()?;
            Stage::Predict
        }
        Command::Lrm => {
            pipeline.lrm_reference()?;
            Stage::Lrm
        }
        Command::Evaluate | Command::Pipeline => {
            let report = pipeline.run_all()?;
            let mut lines: Vec<String> = report
                .entries
                .iter()
                .map(|(k, v)| format!("{k} = {v:.6}"))
                .collect();
            lines.push(format!("outputs in {}", pipeline.out_dir().display()));
            return Ok(lines);
        }
        Command::Config => unreachable!("handled above"),
    };
    let mut lines: Vec<String> = pipeline
        .timings()
        .iter()
        .map(|(s, t)| format!("{s}: {t:.1}s"))
        .collect();
    lines.extend(
        pipeline
            .outputs(stage)
            .iter()
            .map(|p| format!("wrote {}", p.display())),
    );
    Ok(lines)
}
