use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flamesense_core::ann::{TrainConfig, TrainMethod};
use flamesense_core::baseline::BaselineId;
use flamesense_core::dataset::{read_reference_index, split, sync, FrameIndex, LambdaLog, SplitSpec, SyncedDataset};
use flamesense_core::eval::{
    fit_once, parse_report_table, per_run_table, render_human, render_rows, report_table, run_experiment,
    write_overlay, EvalReport,
};
use flamesense_core::features::{fit_pca, load_pca, save_pca, FeatureKind, FeatureRow, FeatureTable, Featurizer};
use flamesense_core::flame_model::{fit_ideal_model, IdealFlameModel};
use flamesense_core::imaging::{parse_channels, ChannelId, GridSpec, RgbImage};
use flamesense_core::predictor::Predictor;
use flamesense_core::similarity::{
    gmm_weight_grid, select_gmm_weights, FeatureMethod, FeatureSpec, GmmWeights, ValidationScore,
};
use flamesense_core::synth::{write_session, RigConfig};
use flamesense_core::{Error, Result};

use crate::config::Loaded;

/// Baselines that exist in the literature but need temporal data this tool does not model.
const UNAVAILABLE_METHODS: [&str; 1] = ["flicker"];

fn output(out: Option<&Path>, l: &Loaded, default: &Path) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| l.path(default))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| flamesense_core::Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn rig_config(l: &Loaded) -> RigConfig {
    let s = &l.cfg.synth;
    RigConfig {
        image_size: s.image_size,
        duration_s: s.duration_s,
        frame_rate_hz: s.frame_rate_hz,
        lambda_rate_hz: s.lambda_rate_hz,
        lambda_range: (s.lambda_min, s.lambda_max),
        noise_sigma: s.noise_sigma,
        seed: l.cfg.seed,
    }
}

pub fn synth(l: &Loaded, out: Option<&Path>) -> Result<()> {
    let dir = output(out, l, &l.cfg.session_dir);
    let summary = write_session(&rig_config(l), &dir, l.cfg.synth.reference_frames)?;
    println!(
        "session {}: {} frames, {} lambda samples, {} reference frames",
        dir.display(),
        summary.frames,
        summary.lambda_samples,
        summary.reference_frames
    );
    Ok(())
}

pub fn sync_cmd(l: &Loaded, out: Option<&Path>) -> Result<()> {
    let index_path = l.frame_index();
    let frames = FrameIndex::read_csv(&index_path)?;
    let log = LambdaLog::read_csv(&l.lambda_log())?;
    let report = sync(&frames, &log)?;
    let manifest = output(out, l, &l.manifest());
    let index_dir = index_path.parent().unwrap_or(Path::new(""));
    let manifest_dir = manifest.parent().unwrap_or(Path::new(""));
    let mut dataset = report.dataset;
    if index_dir != manifest_dir {
        for s in &mut dataset.samples {
            s.image_path = index_dir.join(&s.image_path).to_string_lossy().into_owned();
        }
    }
    ensure_parent(&manifest)?;
    dataset.write_manifest(&manifest)?;
    println!(
        "synced {} frames, dropped {} outside the lambda log span",
        dataset.len(),
        report.dropped
    );
    Ok(())
}

pub fn fit_model(l: &Loaded, out: Option<&Path>) -> Result<()> {
    let index = l.reference_index();
    let rows = read_reference_index(&index)?;
    let dir = index.parent().unwrap_or(Path::new(""));
    let frames = rows
        .iter()
        .map(|r| RgbImage::load(&dir.join(&r.relative_image_path)))
        .collect::<Result<Vec<_>>>()?;
    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let model = fit_ideal_model(&frames, &lambdas)?;
    let path = output(out, l, &l.cfg.ideal_model);
    ensure_parent(&path)?;
    model.save(&path)?;
    println!("ideal model from {} frames -> {}", frames.len(), path.display());
    for ch in ChannelId::ALL {
        let s = model.stats(ch);
        println!("  {ch}: mu = {:.4}  sigma = {:.4}", s.mean, s.std);
    }
    let degenerate = model.degenerate_channels();
    if !degenerate.is_empty() {
        eprintln!("warning: degenerate channels {degenerate:?}");
    }
    Ok(())
}

fn parse_weights(channels: &[ChannelId], token: &str) -> Result<GmmWeights> {
    let mut chars = token.chars();
    let swept: ChannelId = chars
        .next()
        .ok_or_else(|| Error::ConfigInvalid("empty gmm_weights".into()))?
        .to_string()
        .parse()?;
    let b: u8 = chars
        .as_str()
        .parse()
        .map_err(|_| Error::ConfigInvalid(format!("gmm_weights {token:?} must look like G5")))?;
    GmmWeights::from_grid(channels, swept, b)
}

/// Feature kind from `method`, `channels`, `grid` and `gmm_weights`.
/// GMM without weights yields `None` for the weights, meaning "whole grid".
fn configured_kind(l: &Loaded) -> Result<(FeatureKind, bool)> {
    let c = &l.cfg;
    if let Ok(b) = c.method.parse::<BaselineId>() {
        return Ok((FeatureKind::Baseline(b), false));
    }
    let method: FeatureMethod = c
        .method
        .parse()
        .map_err(|e: Error| Error::ConfigInvalid(e.to_string()))?;
    let channels = parse_channels(&c.channels).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let grid = GridSpec::new(c.grid[0], c.grid[1]).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut fs = FeatureSpec::new(method, channels, grid);
    let mut whole_grid = false;
    if method == FeatureMethod::Gmm {
        match &c.gmm_weights {
            Some(t) => fs.weights = Some(parse_weights(&fs.channels, t)?),
            None => {
                whole_grid = true;
                fs.weights = gmm_weight_grid(&fs.channels)?.into_iter().next();
            }
        }
    }
    let kind = FeatureKind::Similarity(fs);
    kind.validate()?;
    Ok((kind, whole_grid))
}

/// Parses an `evaluate` method entry such as `sumsim:R-G-B`, `gmm/G5:R-G`, `gmm:R-G-B` or `cooc64`.
fn listed_kind(entry: &str) -> Result<(FeatureKind, bool)> {
    let (method, channels) = entry.split_once(':').unwrap_or((entry, "-"));
    let kind = FeatureKind::from_tokens(method, channels).map_err(|e| Error::ConfigInvalid(format!("{entry}: {e}")))?;
    match kind {
        FeatureKind::Similarity(mut fs) if fs.method == FeatureMethod::Gmm && fs.weights.is_none() => {
            fs.weights = gmm_weight_grid(&fs.channels)?.into_iter().next();
            let kind = FeatureKind::Similarity(fs);
            kind.validate()?;
            Ok((kind, true))
        }
        k => {
            k.validate()?;
            Ok((k, false))
        }
    }
}

fn with_weights(kind: &FeatureKind, w: GmmWeights) -> FeatureKind {
    match kind {
        FeatureKind::Similarity(s) => FeatureKind::Similarity(s.clone().with_weights(w)),
        k => k.clone(),
    }
}

fn gmm_channels(kind: &FeatureKind) -> Vec<ChannelId> {
    match kind {
        FeatureKind::Similarity(s) => s.channels.clone(),
        FeatureKind::Baseline(_) => Vec::new(),
    }
}

struct Frames {
    dataset: SyncedDataset,
    paths: Vec<PathBuf>,
}

fn load_manifest(l: &Loaded) -> Result<Frames> {
    let manifest = l.manifest();
    let dataset = SyncedDataset::read_manifest(&manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let paths = dataset.samples.iter().map(|s| dir.join(&s.image_path)).collect();
    Ok(Frames { dataset, paths })
}

fn load_ideal(l: &Loaded, kind: &FeatureKind) -> Result<Option<IdealFlameModel>> {
    if kind.needs_ideal_model() {
        Ok(Some(IdealFlameModel::load(&l.path(&l.cfg.ideal_model))?))
    } else {
        Ok(None)
    }
}

/// PCA basis fitted on the training split drawn with the configured seed.
fn fit_pca_on_training(frames: &Frames, seed: u64) -> Result<flamesense_core::baseline::Pca2> {
    let s = split(frames.paths.len(), &SplitSpec::standard(seed))?;
    let images = s
        .train
        .iter()
        .map(|&i| RgbImage::load(&frames.paths[i]))
        .collect::<Result<Vec<_>>>()?;
    fit_pca(&images)
}

fn pca_path(features: &Path) -> PathBuf {
    features.with_extension("pca.txt")
}

fn tagged(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn feature_table(featurizer: &Featurizer, frames: &Frames) -> Result<FeatureTable> {
    let values = featurizer.extract_files(&frames.paths)?;
    let rows = frames
        .dataset
        .samples
        .iter()
        .zip(values)
        .enumerate()
        .map(|(i, (s, v))| FeatureRow {
            frame_id: i,
            timestamp_s: s.timestamp_s,
            lambda: s.lambda,
            values: v,
        })
        .collect();
    FeatureTable::new(featurizer.kind.clone(), rows)
}

pub fn extract(l: &Loaded, out: Option<&Path>) -> Result<()> {
    let (kind, whole_grid) = configured_kind(l)?;
    let frames = load_manifest(l)?;
    let ideal = load_ideal(l, &kind)?;
    let path = output(out, l, &l.cfg.features);
    ensure_parent(&path)?;
    let pca = if kind.needs_pca() {
        let pca = fit_pca_on_training(&frames, l.cfg.seed)?;
        save_pca(&pca, &pca_path(&path))?;
        Some(pca)
    } else {
        None
    };
    let kinds: Vec<(FeatureKind, PathBuf)> = if whole_grid {
        gmm_weight_grid(&gmm_channels(&kind))?
            .into_iter()
            .map(|w| {
                let p = tagged(&path, &format!("gmm-{}{}", w.swept(), w.b()));
                (with_weights(&kind, w), p)
            })
            .collect()
    } else {
        vec![(kind, path)]
    };
    for (kind, path) in kinds {
        let featurizer = Featurizer::new(kind, ideal.clone(), pca.clone())?;
        let table = feature_table(&featurizer, &frames)?;
        table.write(&path)?;
        println!(
            "{}: {} rows of length {} -> {}",
            table.kind.label(),
            table.rows.len(),
            table.kind.feature_len(),
            path.display()
        );
    }
    Ok(())
}

fn train_config(l: &Loaded, trainer: &str) -> Result<TrainConfig> {
    let method: TrainMethod = trainer.parse()?;
    let mut cfg = TrainConfig::new(method, l.cfg.seed);
    cfg.max_epochs = l.cfg.max_epochs;
    cfg.patience = l.cfg.patience;
    cfg.validate()?;
    Ok(cfg)
}

fn predictions_tsv(timestamps: &[f64], predictions: &[f64]) -> String {
    let mut out = String::from("timestamp_s\tlambda_hat\n");
    for (t, p) in timestamps.iter().zip(predictions) {
        let _ = writeln!(out, "{t:?}\t{p:?}");
    }
    out
}

pub fn train(l: &Loaded, out: Option<&Path>) -> Result<()> {
    let cfg = train_config(l, &l.cfg.trainer)?;
    let features_path = l.path(&l.cfg.features);
    let table = FeatureTable::read(&features_path)?;
    let ideal = load_ideal(l, &table.kind)?;
    let pca = if table.kind.needs_pca() {
        Some(load_pca(&pca_path(&features_path))?)
    } else {
        None
    };
    let featurizer = Featurizer::new(table.kind.clone(), ideal, pca)?;
    let fit = fit_once(&table.features(), &table.targets(), &cfg)?;

    let model_path = output(out, l, &l.cfg.model);
    ensure_parent(&model_path)?;
    let predictor = Predictor::new(featurizer, fit.standardizer.clone(), fit.model.clone())?;
    predictor.save(&model_path)?;
    write_file(&model_path.with_extension("report.txt"), &fit.report.to_text())?;
    let timestamps: Vec<f64> = table.rows.iter().map(|r| r.timestamp_s).collect();
    write_file(
        &model_path.with_extension("predictions.tsv"),
        &predictions_tsv(&timestamps, &fit.predictions),
    )?;
    let m = fit.metrics;
    println!(
        "{} {}: {} epochs (best {}), stop {}; test MSE {:.5} R {:.4}; model -> {}",
        table.kind.label(),
        cfg.method,
        fit.report.epochs(),
        fit.report.best_epoch,
        fit.report.stop_reason,
        m.test.mse,
        m.test.r,
        model_path.display()
    );
    Ok(())
}

pub fn predict(l: &Loaded, out: Option<&Path>, images: &[PathBuf], frames: Option<&Path>) -> Result<()> {
    let predictor = Predictor::load(&l.path(&l.cfg.model))?;
    let mut inputs: Vec<(f64, PathBuf)> = images.iter().enumerate().map(|(i, p)| (i as f64, p.clone())).collect();
    if let Some(index) = frames {
        let idx = FrameIndex::read_csv(index)?;
        let dir = index.parent().unwrap_or(Path::new(""));
        inputs.extend(
            idx.entries()
                .iter()
                .map(|e| (e.timestamp_s, dir.join(&e.relative_image_path))),
        );
    }
    let mut timestamps = Vec::with_capacity(inputs.len());
    let mut predictions = Vec::with_capacity(inputs.len());
    let mut latencies = Vec::with_capacity(inputs.len());
    for (t, path) in &inputs {
        let start = Instant::now();
        let img = RgbImage::load(path)?;
        let p = predictor.predict_image(&img)?;
        let dt = start.elapsed().as_secs_f64();
        eprintln!("{}\t{:.1} ms", path.display(), dt * 1e3);
        timestamps.push(*t);
        predictions.push(p);
        latencies.push(dt);
    }
    let path = output(out, l, &l.cfg.predictions);
    write_file(&path, &predictions_tsv(&timestamps, &predictions))?;
    if latencies.is_empty() {
        println!("no frames; wrote empty predictions to {}", path.display());
    } else {
        let max = latencies.iter().cloned().fold(0.0, f64::max);
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        println!(
            "{} frames -> {}; latency mean {:.1} ms, max {:.1} ms",
            latencies.len(),
            path.display(),
            mean * 1e3,
            max * 1e3
        );
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Picks the mixture weights with the best validation score of a single
/// training run per grid point.
fn select_weights(
    kind: &FeatureKind,
    ideal: &Option<IdealFlameModel>,
    frames: &Frames,
    cfg: &TrainConfig,
) -> Result<FeatureKind> {
    let targets = frames.dataset.targets();
    let grid = gmm_weight_grid(&gmm_channels(kind))?;
    let (best, score) = select_gmm_weights(&grid, |w| {
        let featurizer = Featurizer::new(with_weights(kind, w.clone()), ideal.clone(), None)?;
        let features = featurizer.extract_files(&frames.paths)?;
        let fit = fit_once(&features, &targets, cfg)?;
        Ok(ValidationScore {
            r: fit.metrics.validation.r,
            mse: fit.metrics.validation.mse,
        })
    })?;
    println!(
        "gmm weights {} selected (validation R {:.4}, MSE {:.5})",
        best.describe(),
        score.r,
        score.mse
    );
    Ok(with_weights(kind, best))
}

struct MethodOutcome {
    reports: Vec<EvalReport>,
    errors: Vec<Error>,
}

fn evaluate_method(
    l: &Loaded,
    entry: &str,
    trainers: &[TrainConfig],
    frames: &Frames,
    dir: &Path,
) -> Result<MethodOutcome> {
    let (kind, whole_grid) = if entry.contains(':') || entry.parse::<BaselineId>().is_ok() {
        listed_kind(entry)?
    } else {
        let mut probe = l.clone();
        probe.cfg.method = entry.to_string();
        configured_kind(&probe)?
    };
    let ideal = load_ideal(l, &kind)?;
    let kind = if whole_grid {
        select_weights(&kind, &ideal, frames, &trainers[0])?
    } else {
        kind
    };
    let pca = if kind.needs_pca() {
        Some(fit_pca_on_training(frames, l.cfg.seed)?)
    } else {
        None
    };
    let featurizer = Featurizer::new(kind, ideal, pca)?;
    let features = featurizer.extract_files(&frames.paths)?;
    let targets = frames.dataset.targets();
    let label = featurizer.kind.label();

    let mut outcome = MethodOutcome {
        reports: Vec::new(),
        errors: Vec::new(),
    };
    for cfg in trainers {
        match run_experiment(&label, &features, &targets, cfg, l.cfg.runs, l.cfg.seed) {
            Ok(exp) => {
                if let Some(fit) = exp.fits.first() {
                    let name = format!("overlay_{}_{}.tsv", sanitize(&label), cfg.method);
                    write_overlay(&dir.join("overlays").join(name), &targets, &fit.predictions)?;
                }
                for f in &exp.report.failed {
                    eprintln!("warning: {label} {} seed {} failed: {}", cfg.method, f.seed, f.error);
                }
                outcome.reports.push(exp.report);
            }
            Err(e) => {
                eprintln!("warning: {label} {} failed: {e}", cfg.method);
                outcome.errors.push(e);
            }
        }
    }
    Ok(outcome)
}

pub fn evaluate(l: &Loaded, out: Option<&Path>) -> Result<()> {
    let dir = output(out, l, &l.cfg.results_dir);
    std::fs::create_dir_all(dir.join("overlays")).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let trainer_names = if l.cfg.trainers.is_empty() {
        vec![l.cfg.trainer.clone()]
    } else {
        l.cfg.trainers.clone()
    };
    let trainers = trainer_names
        .iter()
        .map(|t| train_config(l, t))
        .collect::<Result<Vec<_>>>()?;
    let methods = if l.cfg.methods.is_empty() {
        vec![format!("{}:{}", l.cfg.method, l.cfg.channels)]
    } else {
        l.cfg.methods.clone()
    };
    let frames = load_manifest(l)?;

    let mut reports = Vec::new();
    let mut errors = Vec::new();
    let mut unavailable = Vec::new();
    for entry in &methods {
        if UNAVAILABLE_METHODS.contains(&entry.as_str()) {
            eprintln!("warning: {entry} is unavailable (needs temporal flame data), skipped");
            unavailable.push(entry.clone());
            continue;
        }
        match evaluate_method(l, entry, &trainers, &frames, &dir) {
            Ok(o) => {
                reports.extend(o.reports);
                errors.extend(o.errors);
            }
            Err(e) if e.class() == flamesense_core::ErrorClass::Usage => return Err(e),
            Err(e) => {
                eprintln!("warning: {entry} failed: {e}");
                errors.push(e);
            }
        }
    }

    write_file(&dir.join("report.tsv"), &report_table(&reports))?;
    let mut human = render_human(&reports);
    for u in &unavailable {
        let _ = writeln!(human, "{u}  unavailable");
    }
    write_file(&dir.join("report.txt"), &human)?;
    let runs: String = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t = per_run_table(r);
            if i == 0 {
                t
            } else {
                t.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default()
            }
        })
        .collect();
    write_file(&dir.join("runs.tsv"), &runs)?;
    print!("{human}");

    if reports.iter().any(|r| r.mean.is_some()) {
        Ok(())
    } else {
        Err(errors
            .into_iter()
            .next()
            .unwrap_or_else(|| Error::InsufficientData("no method produced a successful run".into())))
    }
}

pub fn report(l: &Loaded, out: Option<&Path>) -> Result<()> {
    let dir = output(out, l, &l.cfg.results_dir);
    let path = dir.join("report.tsv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let rows = parse_report_table(&text)?;
    print!("{}", render_rows(&rows));
    Ok(())
}
