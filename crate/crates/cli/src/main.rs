//! `cuefuse`: expressivity scoring, cue fusion, evaluation and salience
//! analysis over an annotated video dataset.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cuefuse_core::synth::{SynthConfig, WeightLink};
use cuefuse_core::{JointOutcome, Task};
use tracing_subscriber::EnvFilter;

use crate::commands::FuseArgs;
use crate::config::{AnalysisArgs, LlmArgs, LlmSettings, Loaded, Settings};
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "cuefuse", version, about = "Salience-adjusted Bayesian cue integration for emotion recognition")]
struct Cli {
    /// TOML config file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-video work (default: logical CPUs)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity on stderr (`error`, `warn`, `info`, `debug`, `trace`)
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a dataset and report what it contains
    Validate {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score facial expressivity and write per-video weights as CSV
    Expressivity {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Fuse face and context cues with and without salience weighting
    Fuse {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory for the fused distributions
        #[arg(long)]
        out: PathBuf,
        /// Only write the plain fusion
        #[arg(long)]
        no_salience: bool,
        /// Weights CSV (as written by `expressivity`) instead of recomputing
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Score fused predictions against the context-based judgments
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Fused prediction file; repeat for several
        #[arg(long = "predictions", required = true)]
        predictions: Vec<PathBuf>,
        /// Report JSON file
        #[arg(long)]
        out: PathBuf,
        /// Plain-text table file
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Proportion of judgments closer to the face or the situation, per expressivity tertile
    AnalyzeSalience {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory for the CSV and SVG files
        #[arg(long)]
        out: PathBuf,
        /// Skip the bar chart
        #[arg(long)]
        no_svg: bool,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Estimate a context-only distribution from a language model
    QueryContext {
        #[arg(long)]
        outcome: JointOutcome,
        #[arg(long)]
        task: Task,
        /// Output JSON file (stdout when absent)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Generate a synthetic dataset with known fusion weights
    Simulate {
        /// Output directory (must not already hold a dataset)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_videos: Option<usize>,
        #[arg(long)]
        rating_count: Option<usize>,
        /// Probability that a rating is replaced by a uniform draw
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        concentration: Option<f64>,
        /// `linear` or `constant:W`
        #[arg(long, value_parser = commands::parse_weight_link)]
        weight_link: Option<WeightLink>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Full pipeline: expressivity, both fusion variants, reports and salience analysis
    Run {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory (default: `output` from the config)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        llm: LlmArgs,
    },
}

fn init_logging(level: &str) {
    let filter = EnvFilter::try_from_env("CUEFUSE_LOG").unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(filter)
        .with_ansi(false)
        .with_target(true)
        .init();
}

fn init_pool(loaded: &Loaded, jobs: Option<usize>) -> CliResult<()> {
    if let Some(n) = jobs.or(loaded.file.jobs) {
        if n == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::config)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    let loaded = Loaded::read(cli.config.as_deref())?;
    init_pool(&loaded, cli.jobs)?;
    match cli.command {
        Command::Validate { dataset } => commands::validate(&loaded, dataset.as_ref()),
        Command::Expressivity { dataset, out, analysis } => {
            let settings = Settings::resolve(&loaded, &analysis, None)?;
            commands::expressivity(&loaded, dataset.as_ref(), &out, &settings)
        }
        Command::Fuse {
            dataset,
            out,
            no_salience,
            weights,
            analysis,
            llm,
        } => {
            let settings = Settings::resolve(&loaded, &analysis, Some(&llm))?;
            let args = FuseArgs {
                dataset: dataset.as_ref(),
                out: &out,
                no_salience,
                weights: weights.as_ref(),
            };
            commands::fuse(&loaded, args, &settings)
        }
        Command::Evaluate {
            dataset,
            predictions,
            out,
            table,
            analysis,
        } => {
            let settings = Settings::resolve(&loaded, &analysis, None)?;
            commands::evaluate_cmd(&loaded, dataset.as_ref(), &predictions, &out, table.as_ref(), &settings)
        }
        Command::AnalyzeSalience {
            dataset,
            out,
            no_svg,
            analysis,
        } => {
            let settings = Settings::resolve(&loaded, &analysis, None)?;
            commands::analyze_salience(&loaded, dataset.as_ref(), &out, !no_svg, &settings)
        }
        Command::QueryContext { outcome, task, out, llm } => {
            let settings = LlmSettings::resolve(&loaded, &llm)?;
            commands::query_context_cmd(&settings, outcome, task, out.as_ref())
        }
        Command::Simulate {
            out,
            seed,
            n_videos,
            rating_count,
            noise,
            concentration,
            weight_link,
            frames,
        } => {
            let d = SynthConfig::default();
            let config = SynthConfig {
                seed,
                n_videos: n_videos.unwrap_or(d.n_videos),
                rating_count: rating_count.unwrap_or(d.rating_count),
                annotation_noise: noise.unwrap_or(d.annotation_noise),
                concentration: concentration.unwrap_or(d.concentration),
                weight_link: weight_link.unwrap_or(d.weight_link),
                frames_per_video: frames.unwrap_or(d.frames_per_video),
                ..d
            };
            commands::simulate(&out, &config)
        }
        Command::Run {
            dataset,
            out,
            analysis,
            llm,
        } => {
            let settings = Settings::resolve(&loaded, &analysis, Some(&llm))?;
            let out = loaded.output(out.as_ref())?;
            commands::run(&loaded, dataset.as_ref(), &out, &settings)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e}");
            e.exit_code()
        }
    }
}
