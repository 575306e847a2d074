use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use stcorr::ants::gradcheck::check_random_instance;
use stcorr::ants::{
    load_params, pair_correspondences, save_params, train, AntsConfig, AntsInput, AntsParams, AntsSample,
    TrainOptions, DEFAULT_HIDDEN, DEFAULT_LAYERS, DEFAULT_LEARNING_RATE,
};
use stcorr::benchmark::synth::{synth_dataset, PAIRS_FILE};
use stcorr::benchmark::{
    self, load_annotations, read_json, write_json, GtFile, PairList, SetupSpec, Split, VideoAnnotation,
    DEFAULT_MIN_SHARED,
};
use stcorr::eval::{evaluate, EvalConfig, PredictionFile, DEFAULT_ALPHA, DEFAULT_KS};
use stcorr::features::{assemble_hyperpixel, FeatureManifest, DEFAULT_LEARNED_GRID, DEFAULT_STMATCH_GRID};
use stcorr::matcher::{build_matcher, check_matcher_name, predict_pair, ANTS, ST_MATCH};
use stcorr::stmatch::DEFAULT_TEMPERATURE;
use stcorr::tensor::stt;
use stcorr::{stack_correlations, FeaturePyramid, FlowSampling, GridShape};

use crate::config::RunConfig;
use crate::error::CliError;

pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TRAIN_LOG: &str = "train_log.json";
const DEFAULT_SETUP: &str = "13+3";
const DEFAULT_STEPS: usize = 100;

pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pool: rayon::ThreadPool,
}

/// Input files after applying flag > config > `--data` directory defaults.
#[derive(Debug, Clone, Default)]
pub struct ResolvedPaths {
    pub data: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Config(format!("no {what} path: pass --{what} or --data")))
}

impl Context {
    pub fn new(cfg: &RunConfig, seed: Option<u64>, jobs: Option<usize>) -> Result<Self, CliError> {
        let jobs = jobs.or(cfg.jobs).unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            cfg: cfg.clone(),
            seed: seed.or(cfg.seed).unwrap_or(0),
            pool,
        })
    }

    pub fn paths(
        &self,
        data: Option<PathBuf>,
        annotations: Option<PathBuf>,
        gt: Option<PathBuf>,
        manifest: Option<PathBuf>,
    ) -> ResolvedPaths {
        let p = &self.cfg.paths;
        let data = data.or_else(|| p.data.clone());
        let under = |name: &str| data.as_ref().map(|d| d.join(name));
        ResolvedPaths {
            annotations: annotations
                .or_else(|| p.annotations.clone())
                .or_else(|| under(benchmark::synth::ANNOTATIONS_FILE)),
            gt: gt.or_else(|| p.gt.clone()).or_else(|| under(benchmark::synth::GT_FILE)),
            manifest: manifest
                .or_else(|| p.manifest.clone())
                .or_else(|| under(benchmark::synth::MANIFEST_FILE)),
            data,
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| stcorr::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn synth(
    ctx: &Context,
    out: &Path,
    grid: Option<GridShape>,
    noise: Option<f32>,
    min_shared: Option<usize>,
) -> Result<(), CliError> {
    let mut config = ctx.cfg.synth.clone().unwrap_or_default();
    if let Some(g) = grid.or(ctx.cfg.grid) {
        config.grid = g;
    }
    if let Some(n) = noise {
        config.noise = n;
    }
    if let Some(m) = min_shared.or(ctx.cfg.min_shared) {
        config.min_shared = m;
    }
    if let Some(s) = &ctx.cfg.setup {
        config.setup = s.clone();
    }
    let ds = synth_dataset(&config, ctx.seed)?;
    ds.write_to(out)?;
    println!(
        "synth: {} videos, {} pairs, {} correspondences -> {}",
        ds.annotations.len(),
        ds.pairs.len(),
        ds.gt.pairs.iter().map(|p| p.matches.len()).sum::<usize>(),
        out.display()
    );
    Ok(())
}

pub fn build_pairs(
    ctx: &Context,
    annotations: Option<PathBuf>,
    setup: Option<String>,
    min_shared: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let paths = ctx.paths(None, annotations, None, None);
    let anns = load_annotations(required(&paths.annotations, "annotations")?)?;
    let setup = SetupSpec::preset(
        setup
            .as_deref()
            .or(ctx.cfg.setup.as_deref())
            .unwrap_or(DEFAULT_SETUP),
    )?;
    let min_shared = min_shared.or(ctx.cfg.min_shared).unwrap_or(DEFAULT_MIN_SHARED);
    let pairs = benchmark::build_pairs(&anns, &setup, min_shared)?;
    let gt = benchmark::ground_truth(&anns, &pairs)?;
    create_dir(out)?;
    write_json(out.join(PAIRS_FILE), &PairList::new(&pairs, &setup, min_shared))?;
    write_json(out.join(benchmark::synth::GT_FILE), &gt)?;
    println!("build-pairs: {} ordered pairs ({} setup, min_shared {min_shared})", pairs.len(), setup.name);
    Ok(())
}

pub struct MatchArgs {
    pub paths: ResolvedPaths,
    pub matcher: Option<String>,
    pub grid: Option<GridShape>,
    pub params: Option<PathBuf>,
    pub sampling: Option<FlowSampling>,
    pub out: PathBuf,
    pub flow_out: Option<PathBuf>,
    pub align_out: Option<PathBuf>,
}

struct Inputs {
    annotations: Vec<VideoAnnotation>,
    gt: GtFile,
    manifest: FeatureManifest,
    manifest_dir: PathBuf,
}

fn load_inputs(paths: &ResolvedPaths) -> Result<Inputs, CliError> {
    let manifest_path = required(&paths.manifest, "manifest")?;
    let manifest = FeatureManifest::load(manifest_path)?;
    Ok(Inputs {
        annotations: load_annotations(required(&paths.annotations, "annotations")?)?,
        gt: read_json(required(&paths.gt, "gt")?)?,
        manifest,
        manifest_dir: manifest_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

impl Inputs {
    fn video(&self, id: &str) -> Result<&VideoAnnotation, CliError> {
        self.annotations.iter().find(|v| v.id == id).ok_or_else(|| {
            stcorr::Error::Validation {
                video_id: id.to_string(),
                reason: "referenced by ground truth but not annotated".into(),
            }
            .into()
        })
    }

    /// Normalised pyramids of every video referenced by `pairs`.
    fn pyramids<'a>(
        &self,
        ctx: &Context,
        ids: impl Iterator<Item = &'a str>,
        grid: GridShape,
    ) -> Result<BTreeMap<String, FeaturePyramid>, CliError> {
        let mut wanted: Vec<&str> = ids.collect();
        wanted.sort_unstable();
        wanted.dedup();
        let built = ctx.pool.install(|| {
            wanted
                .par_iter()
                .map(|&id| {
                    let raw = self.manifest.read_layers(&self.manifest_dir, id)?;
                    let pyr = assemble_hyperpixel(&raw, &self.manifest.layer_ids, grid, true)?;
                    Ok((id.to_string(), pyr))
                })
                .collect::<Result<Vec<_>, stcorr::Error>>()
        })?;
        Ok(built.into_iter().collect())
    }
}

fn pair_file_stem(src: &str, tgt: &str) -> String {
    format!("{src}__{tgt}")
}

pub fn run_match(ctx: &Context, args: &MatchArgs) -> Result<(), CliError> {
    let name = args
        .matcher
        .as_deref()
        .or(ctx.cfg.matcher.as_deref())
        .unwrap_or(ST_MATCH);
    check_matcher_name(name)?;
    let params: Option<(AntsConfig, AntsParams<f32>)> = if name == ANTS {
        let dir = args.params.clone().or_else(|| ctx.cfg.paths.params.clone());
        let (desc, params) = load_params(required(&dir, "params")?)?;
        Some((desc.config, params))
    } else {
        None
    };
    let inputs = load_inputs(&args.paths)?;
    let default_grid = if name == ST_MATCH { DEFAULT_STMATCH_GRID } else { DEFAULT_LEARNED_GRID };
    let grid = args
        .grid
        .or(ctx.cfg.grid)
        .or(params.as_ref().map(|p| p.0.grid))
        .or(inputs.manifest.grid)
        .unwrap_or(default_grid);
    let sampling = args.sampling.or(ctx.cfg.sampling).unwrap_or_default();
    let matcher = build_matcher(name, params.map(|p| p.1))?;
    log::info!("matching {} pairs with {name} on grid {grid}", inputs.gt.pairs.len());

    let ids = inputs.gt.pairs.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()]);
    let pyramids = inputs.pyramids(ctx, ids, grid)?;
    let results = ctx.pool.install(|| {
        inputs
            .gt
            .pairs
            .par_iter()
            .map(|pair| -> Result<_, CliError> {
                let (src, tgt) = (inputs.video(&pair.src)?, inputs.video(&pair.tgt)?);
                let out = predict_pair(
                    matcher.as_ref(),
                    pair,
                    &pyramids[&pair.src],
                    &pyramids[&pair.tgt],
                    src.dims,
                    tgt.dims,
                    sampling,
                )?;
                log::debug!("{} -> {}: {} keypoints", pair.src, pair.tgt, out.0.keypoints.len());
                Ok(out)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    create_dir(&args.out)?;
    let mut predictions = PredictionFile { pairs: Vec::with_capacity(results.len()) };
    for dir in [&args.flow_out, &args.align_out].into_iter().flatten() {
        create_dir(dir)?;
    }
    for (pred, output) in results {
        let stem = pair_file_stem(&pred.src, &pred.tgt);
        if let (Some(dir), Some(flow)) = (&args.flow_out, &output.flow) {
            stt::write(dir.join(format!("{stem}.flow.stt")), flow.tensor())?;
        }
        if let (Some(dir), Some(alignment)) = (&args.align_out, &output.alignment) {
            write_json(dir.join(format!("{stem}.align.json")), alignment)?;
        }
        predictions.pairs.push(pred);
    }
    write_json(args.out.join(PREDICTIONS_FILE), &predictions)?;
    println!(
        "match: {} pairs with {name} on grid {grid} -> {}",
        predictions.pairs.len(),
        args.out.join(PREDICTIONS_FILE).display()
    );
    Ok(())
}

pub struct TrainArgs {
    pub paths: ResolvedPaths,
    pub grid: Option<GridShape>,
    pub steps: Option<usize>,
    pub lr: Option<f32>,
    pub temperature: Option<f32>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TrainLog<'a> {
    steps: usize,
    lr: f32,
    temperature: f32,
    seed: u64,
    losses: &'a [f32],
    final_loss: f32,
}

pub fn train_ants(ctx: &Context, args: &TrainArgs) -> Result<(), CliError> {
    let inputs = load_inputs(&args.paths)?;
    let grid = args
        .grid
        .or(ctx.cfg.grid)
        .or(inputs.manifest.grid)
        .unwrap_or(DEFAULT_LEARNED_GRID);
    let mut pairs = Vec::new();
    for pair in &inputs.gt.pairs {
        if !pair.matches.is_empty() && inputs.video(&pair.src)?.split == Split::Train {
            pairs.push(pair);
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Config("no training pairs with ground-truth matches".into()));
    }
    let pyramids = inputs.pyramids(ctx, pairs.iter().flat_map(|p| [p.src.as_str(), p.tgt.as_str()]), grid)?;
    let layers = args.layers.or(ctx.cfg.train.layers).unwrap_or(DEFAULT_LAYERS);
    let hidden = args.hidden.or(ctx.cfg.train.hidden).unwrap_or(DEFAULT_HIDDEN);

    let prepared = ctx.pool.install(|| {
        pairs
            .par_iter()
            .map(|pair| -> Result<_, CliError> {
                let (ps, pt) = (&pyramids[&pair.src], &pyramids[&pair.tgt]);
                let corr = stack_correlations(ps, pt)?;
                let config = AntsConfig::for_inputs(&corr, ps, pt, layers, hidden)?;
                let (src, tgt) = (inputs.video(&pair.src)?, inputs.video(&pair.tgt)?);
                let sample = AntsSample {
                    input: AntsInput::<f32>::assemble(&corr, ps, pt)?,
                    gts: pair_correspondences(pair, src.dims, tgt.dims, grid),
                };
                Ok((config, sample))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let config = prepared[0].0.clone();
    if let Some((other, _)) = prepared.iter().find(|(c, _)| *c != config) {
        return Err(CliError::Config(format!(
            "training pairs disagree on feature channels: {:?}/{:?} vs {:?}/{:?}",
            config.source_channels, config.target_channels, other.source_channels, other.target_channels
        )));
    }
    let samples: Vec<AntsSample> = prepared.into_iter().map(|(_, s)| s).collect();
    let opts = TrainOptions {
        lr: args.lr.or(ctx.cfg.train.lr).unwrap_or(DEFAULT_LEARNING_RATE),
        steps: args.steps.or(ctx.cfg.train.steps).unwrap_or(DEFAULT_STEPS),
        temperature: args.temperature.or(ctx.cfg.temperature).unwrap_or(DEFAULT_TEMPERATURE),
        seed: ctx.seed,
    };
    log::info!("training on {} pairs, grid {grid}, {} steps", samples.len(), opts.steps);
    let outcome = train(&samples, &config, &opts)?;
    save_params(&args.out, &config, &outcome.params, ctx.seed)?;
    write_json(
        args.out.join(TRAIN_LOG),
        &TrainLog {
            steps: opts.steps,
            lr: opts.lr,
            temperature: opts.temperature,
            seed: opts.seed,
            losses: &outcome.losses,
            final_loss: outcome.final_loss,
        },
    )?;
    println!(
        "train-ants: {} pairs, {} steps, loss {:.6} -> {:.6} -> {}",
        samples.len(),
        opts.steps,
        outcome.losses.first().copied().unwrap_or(f32::NAN),
        outcome.final_loss,
        args.out.display()
    );
    Ok(())
}

pub struct EvalArgs {
    pub paths: ResolvedPaths,
    pub predictions: Option<PathBuf>,
    pub setup: Option<String>,
    pub alpha: Option<f64>,
    pub ks: Option<Vec<u32>>,
    pub out: Option<PathBuf>,
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<(), CliError> {
    let annotations = load_annotations(required(&args.paths.annotations, "annotations")?)?;
    let gt: GtFile = read_json(required(&args.paths.gt, "gt")?)?;
    let pred_path = args.predictions.clone().or_else(|| ctx.cfg.paths.predictions.clone());
    let predictions: PredictionFile = read_json(required(&pred_path, "predictions")?)?;
    let pair_list_setup = match &args.paths.data {
        Some(dir) if dir.join(PAIRS_FILE).is_file() => Some(read_json::<PairList>(dir.join(PAIRS_FILE))?.setup),
        _ => None,
    };
    let setup_name = args
        .setup
        .clone()
        .or_else(|| ctx.cfg.setup.clone())
        .or(pair_list_setup)
        .unwrap_or_else(|| DEFAULT_SETUP.to_string());
    let setup = SetupSpec::preset(&setup_name)?;
    let config = EvalConfig {
        alpha: args.alpha.or(ctx.cfg.alpha).unwrap_or(DEFAULT_ALPHA),
        ks: args
            .ks
            .clone()
            .or_else(|| ctx.cfg.ks.clone())
            .unwrap_or_else(|| DEFAULT_KS.to_vec()),
        ..EvalConfig::default()
    }
    .with_setup(&setup);
    let report = evaluate(&predictions, &gt, &annotations, &config)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_json(dir.join(REPORT_JSON), &report)?;
        let csv = report.to_csv(&setup.name);
        std::fs::write(dir.join(REPORT_CSV), csv).map_err(|e| stcorr::Error::Io {
            path: dir.join(REPORT_CSV),
            source: e,
        })?;
    }
    for s in &report.overall {
        println!("T@{}-PCK@{}: {:.1} ({}/{})", s.k, report.alpha, s.accuracy, s.correct, s.n);
    }
    Ok(())
}

pub fn gradcheck(ctx: &Context, count: u64) -> Result<(), CliError> {
    let seeds: Vec<u64> = (0..count).map(|i| ctx.seed.wrapping_add(i)).collect();
    let reports = ctx.pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| check_random_instance(s))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut failed = 0;
    for r in &reports {
        if !r.passed() {
            failed += 1;
        }
        println!(
            "{}",
            serde_json::json!({
                "seed": r.seed,
                "n_params": r.n_params,
                "loss": r.loss,
                "max_rel_error": r.max_rel_error,
                "worst_index": r.worst_index,
                "passed": r.passed(),
            })
        );
    }
    if failed > 0 {
        return Err(CliError::GradCheck(failed));
    }
    Ok(())
}
