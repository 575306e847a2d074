//! `stcorr`: generate synthetic benchmarks, build pairs, match, train ANTs
//! and score predictions with T@k-PCK.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stcorr::{FlowSampling, GridShape};

use crate::config::{parse_ks, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "stcorr", version, about = "Space-time semantic correspondence toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-pair work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
struct DataPaths {
    /// Dataset directory laid out as written by `synth`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted correspondences.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_grid)]
        grid: Option<GridShape>,
        #[arg(long)]
        noise: Option<f32>,
        #[arg(long)]
        min_shared: Option<usize>,
    },
    /// Build ordered video pairs and their ground-truth correspondences.
    BuildPairs {
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Keypoint setup: 13+3, 3+3 or r10.
        #[arg(long)]
        setup: Option<String>,
        #[arg(long)]
        min_shared: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer ground-truth source keypoints of every pair to its target.
    Match {
        #[command(flatten)]
        paths: DataPaths,
        /// st-match, sequential-nn, sequential-dtw or ants.
        #[arg(long)]
        matcher: Option<String>,
        #[arg(long, value_parser = parse_grid)]
        grid: Option<GridShape>,
        /// Trained ANTs parameter directory.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_enum)]
        sampling: Option<SamplingArg>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-pair displacement flows (STT1).
        #[arg(long)]
        flow_out: Option<PathBuf>,
        /// Directory for per-pair frame alignments of sequential matchers.
        #[arg(long)]
        align_out: Option<PathBuf>,
    },
    /// Train the aggregation network with SGD on the ground-truth pairs.
    TrainAnts {
        #[command(flatten)]
        paths: DataPaths,
        #[arg(long, value_parser = parse_grid)]
        grid: Option<GridShape>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        temperature: Option<f32>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions with T@k-PCK@alpha.
    Eval {
        #[command(flatten)]
        paths: DataPaths,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        setup: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Comma-separated frame tolerances, e.g. 1,3,5.
        #[arg(long, value_parser = parse_k_list)]
        k: Option<KList>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the analytic ANTs gradient with finite differences.
    Gradcheck {
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SamplingArg {
    Trilinear,
    Nearest,
}

impl From<SamplingArg> for FlowSampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Trilinear => FlowSampling::Trilinear,
            SamplingArg::Nearest => FlowSampling::Nearest,
        }
    }
}

/// Comma-separated `--k` value, kept whole so clap does not treat it as
/// repeated occurrences.
#[derive(Debug, Clone)]
struct KList(Vec<u32>);

fn parse_k_list(text: &str) -> Result<KList, String> {
    parse_ks(text).map(KList)
}

fn parse_grid(text: &str) -> Result<GridShape, String> {
    text.parse().map_err(|e: stcorr::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ctx = commands::Context::new(&cfg, cli.common.seed, cli.common.jobs)?;
    match cli.command {
        Command::Synth { out, grid, noise, min_shared } => commands::synth(&ctx, &out, grid, noise, min_shared),
        Command::BuildPairs { annotations, setup, min_shared, out } => {
            commands::build_pairs(&ctx, annotations, setup, min_shared, &out)
        }
        Command::Match { paths, matcher, grid, params, sampling, out, flow_out, align_out } => {
            commands::run_match(
                &ctx,
                &commands::MatchArgs {
                    paths: ctx.paths(paths.data, paths.annotations, paths.gt, paths.manifest),
                    matcher,
                    grid,
                    params,
                    sampling: sampling.map(Into::into),
                    out,
                    flow_out,
                    align_out,
                },
            )
        }
        Command::TrainAnts { paths, grid, steps, lr, temperature, layers, hidden, out } => commands::train_ants(
            &ctx,
            &commands::TrainArgs {
                paths: ctx.paths(paths.data, paths.annotations, paths.gt, paths.manifest),
                grid,
                steps,
                lr,
                temperature,
                layers,
                hidden,
                out,
            },
        ),
        Command::Eval { paths, predictions, setup, alpha, k, out } => commands::eval(
            &ctx,
            &commands::EvalArgs {
                paths: ctx.paths(paths.data, paths.annotations, paths.gt, paths.manifest),
                predictions,
                setup,
                alpha,
                ks: k.map(|k| k.0),
                out,
            },
        ),
        Command::Gradcheck { count } => commands::gradcheck(&ctx, count),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STCORR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(1)
        }
    }
}
