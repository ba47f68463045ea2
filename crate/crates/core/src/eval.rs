//! Accuracy metrics, the repeated-training protocol and comparison tables.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::ann::{init_weights, predict_batch, train, MlpModel, TrainConfig, TrainMethod, TrainReport};
use crate::dataset::{split, Split, SplitSpec, Standardizer};
use crate::error::{Error, Result};
use crate::textfmt::{fmt_f64, parse_f64};

/// Mean squared error with denominator C.
pub fn mse(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::LengthMismatch(targets.len(), predictions.len()));
    }
    if targets.is_empty() {
        return Err(Error::Empty);
    }
    let sum: f64 = targets.iter().zip(predictions).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / targets.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pearson_r(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::LengthMismatch(targets.len(), predictions.len()));
    }
    if targets.is_empty() {
        return Err(Error::Empty);
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(targets) || constant(predictions) {
        return Err(Error::DegenerateVariance);
    }
    let n = targets.len() as f64;
    let mx = targets.iter().sum::<f64>() / n;
    let my = predictions.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in targets.iter().zip(predictions) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub mse: f64,
    pub r: f64,
}

impl SplitMetrics {
    pub fn compute(targets: &[f64], predictions: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: mse(targets, predictions)?,
            r: pearson_r(targets, predictions)?,
        })
    }
}

/// Metrics on every split. "All" is the union of train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub all: SplitMetrics,
    pub train: SplitMetrics,
    pub validation: SplitMetrics,
    pub test: SplitMetrics,
}

impl Metrics {
    pub fn compute(targets: &[f64], predictions: &[f64], split: &Split) -> Result<Self> {
        let part = |idx: &[usize]| {
            let t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
            SplitMetrics::compute(&t, &p)
        };
        Ok(Self {
            all: SplitMetrics::compute(targets, predictions)?,
            train: part(&split.train)?,
            validation: part(&split.validation)?,
            test: part(&split.test)?,
        })
    }

    fn as_array(&self) -> [SplitMetrics; 4] {
        [self.all, self.train, self.validation, self.test]
    }

    fn mean(items: &[Metrics]) -> Option<Metrics> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let mut acc = [(0.0, 0.0); 4];
        for m in items {
            for (a, s) in acc.iter_mut().zip(m.as_array()) {
                a.0 += s.mse;
                a.1 += s.r;
            }
        }
        let at = |k: usize| SplitMetrics {
            mse: acc[k].0 / n,
            r: acc[k].1 / n,
        };
        Some(Metrics {
            all: at(0),
            train: at(1),
            validation: at(2),
            test: at(3),
        })
    }
}

/// Everything produced by one split/standardize/initialize/train cycle.
#[derive(Debug, Clone)]
pub struct FittedRun {
    pub seed: u64,
    pub split: Split,
    pub standardizer: Standardizer,
    pub model: MlpModel,
    pub report: TrainReport,
    /// Predictions for every sample in input order.
    pub predictions: Vec<f64>,
    pub metrics: Metrics,
}

/// Trains one network with `cfg.seed` driving both the split and the initial weights.
pub fn fit_once(features: &[Vec<f64>], targets: &[f64], cfg: &TrainConfig) -> Result<FittedRun> {
    if features.len() != targets.len() {
        return Err(Error::LengthMismatch(features.len(), targets.len()));
    }
    let split = split(features.len(), &SplitSpec::standard(cfg.seed))?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            idx.iter().map(|&i| features[i].clone()).collect(),
            idx.iter().map(|&i| targets[i]).collect(),
        )
    };
    let (train_x, train_y) = pick(&split.train);
    let standardizer = Standardizer::fit(&train_x)?;
    let train_x = standardizer.apply(&train_x)?;
    let (val_x, val_y) = pick(&split.validation);
    let val_x = standardizer.apply(&val_x)?;

    let init = init_weights(standardizer.dim(), cfg.seed)?;
    let (model, report) = train(init, (&train_x, &train_y), (&val_x, &val_y), cfg)?;
    let predictions = predict_batch(&model, &standardizer.apply(features)?)?;
    let metrics = Metrics::compute(targets, &predictions, &split)?;
    Ok(FittedRun {
        seed: cfg.seed,
        split,
        standardizer,
        model,
        report,
        predictions,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub metrics: Metrics,
    pub epochs: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub feature_len: usize,
    pub trainer: TrainMethod,
    pub runs: usize,
    pub per_run: Vec<RunRecord>,
    pub failed: Vec<FailedRun>,
    /// Arithmetic mean over successful runs; `None` if every run failed.
    pub mean: Option<Metrics>,
}

pub struct Experiment {
    pub report: EvalReport,
    /// Successful fits in run order.
    pub fits: Vec<FittedRun>,
}

/// Repeats [`fit_once`] with seeds `base_seed + r` for `r` in `0..runs`.
/// Failed runs are listed in the report and left out of the means.
pub fn run_experiment(
    method: &str,
    features: &[Vec<f64>],
    targets: &[f64],
    cfg: &TrainConfig,
    runs: usize,
    base_seed: u64,
) -> Result<Experiment> {
    if runs == 0 {
        return Err(Error::ConfigInvalid("runs must be >= 1".into()));
    }
    let feature_len = features.first().ok_or(Error::Empty)?.len();
    let outcomes: Vec<Result<FittedRun>> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut c = cfg.clone();
            c.seed = base_seed.wrapping_add(r);
            fit_once(features, targets, &c)
        })
        .collect();

    let mut per_run = Vec::new();
    let mut failed = Vec::new();
    let mut fits = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let seed = base_seed.wrapping_add(r as u64);
        match outcome {
            Ok(fit) => {
                per_run.push(RunRecord {
                    seed,
                    metrics: fit.metrics,
                    epochs: fit.report.epochs(),
                    best_epoch: fit.report.best_epoch,
                });
                fits.push(fit);
            }
            Err(e) => failed.push(FailedRun {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let mean = Metrics::mean(&per_run.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(Experiment {
        report: EvalReport {
            method: method.to_string(),
            feature_len,
            trainer: cfg.method,
            runs,
            per_run,
            failed,
            mean,
        },
        fits,
    })
}

/// One line of the comparison table: mean metrics of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub feature_len: usize,
    pub trainer: TrainMethod,
    pub runs: usize,
    pub failed: usize,
    pub all: SplitMetrics,
    pub train: SplitMetrics,
    pub test: SplitMetrics,
}

impl TableRow {
    /// `None` when the report has no successful run.
    pub fn from_report(r: &EvalReport) -> Option<Self> {
        let m = r.mean?;
        Some(Self {
            method: r.method.clone(),
            feature_len: r.feature_len,
            trainer: r.trainer,
            runs: r.runs,
            failed: r.failed.len(),
            all: m.all,
            train: m.train,
            test: m.test,
        })
    }
}

/// Header of the machine-readable table.
pub const TABLE_HEADER: [&str; 11] = [
    "method",
    "feature_len",
    "trainer",
    "runs",
    "failed",
    "all_mse",
    "all_r",
    "train_mse",
    "train_r",
    "test_mse",
    "test_r",
];

/// Rows in descending order of all-split R; reports without a successful
/// run are omitted. Ties keep input order.
pub fn report_rows(reports: &[EvalReport]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = reports.iter().filter_map(TableRow::from_report).collect();
    rows.sort_by(|a, b| b.all.r.total_cmp(&a.all.r));
    rows
}

/// Tab-separated table with [`TABLE_HEADER`], full-precision numbers.
pub fn report_table(reports: &[EvalReport]) -> String {
    let mut out = TABLE_HEADER.join("\t");
    out.push('\n');
    for r in report_rows(reports) {
        let cells = [
            r.method.clone(),
            r.feature_len.to_string(),
            r.trainer.to_string(),
            r.runs.to_string(),
            r.failed.to_string(),
            fmt_f64(r.all.mse),
            fmt_f64(r.all.r),
            fmt_f64(r.train.mse),
            fmt_f64(r.train.r),
            fmt_f64(r.test.mse),
            fmt_f64(r.test.r),
        ];
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

pub fn parse_report_table(text: &str) -> Result<Vec<TableRow>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or(Error::Empty)?.split('\t').collect();
    if header != TABLE_HEADER {
        return Err(Error::Parse("report table header".into()));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != TABLE_HEADER.len() {
                return Err(Error::Parse(format!("report row {}: {} cells", n + 1, c.len())));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("report row {}: {s:?}", n + 1)))
            };
            let num = |s: &str| parse_f64(s).map_err(|_| Error::Parse(format!("report row {}: {s:?}", n + 1)));
            let pair = |k: usize| -> Result<SplitMetrics> {
                Ok(SplitMetrics {
                    mse: num(c[k])?,
                    r: num(c[k + 1])?,
                })
            };
            Ok(TableRow {
                method: c[0].to_string(),
                feature_len: int(c[1])?,
                trainer: c[2].parse()?,
                runs: int(c[3])?,
                failed: int(c[4])?,
                all: pair(5)?,
                train: pair(7)?,
                test: pair(9)?,
            })
        })
        .collect()
}

/// Fixed-width rendering for terminals; reports without a successful run
/// are listed after the table.
pub fn render_human(reports: &[EvalReport]) -> String {
    let mut out = render_rows(&report_rows(reports));
    for rep in reports.iter().filter(|r| r.mean.is_none()) {
        let _ = writeln!(
            out,
            "{}  {}  {}: all {} runs failed",
            rep.method, rep.feature_len, rep.trainer, rep.runs
        );
    }
    out
}

pub fn render_rows(rows: &[TableRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>5}  {:<7}  {:>4}  {:>9} {:>7}  {:>9} {:>7}  {:>9} {:>7}",
        "method", "len", "trainer", "runs", "all MSE", "all R", "train MSE", "train R", "test MSE", "test R"
    );
    for r in rows {
        let runs = if r.failed > 0 {
            format!("{}-{}", r.runs, r.failed)
        } else {
            r.runs.to_string()
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:<7}  {:>4}  {:>9.5} {:>7.4}  {:>9.5} {:>7.4}  {:>9.5} {:>7.4}",
            r.method, r.feature_len, r.trainer, runs, r.all.mse, r.all.r, r.train.mse, r.train.r, r.test.mse, r.test.r
        );
    }
    out
}

/// Per-run values for archiving, one line per run and split.
pub fn per_run_table(report: &EvalReport) -> String {
    let mut out = String::from("method\ttrainer\tseed\tsplit\tmse\tr\tepochs\tbest_epoch\n");
    for run in &report.per_run {
        for (name, m) in ["all", "train", "validation", "test"]
            .iter()
            .zip(run.metrics.as_array())
        {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                report.method,
                report.trainer,
                run.seed,
                name,
                fmt_f64(m.mse),
                fmt_f64(m.r),
                run.epochs,
                run.best_epoch
            );
        }
    }
    for f in &report.failed {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\tfailed\t\t\t\t{}",
            report.method,
            report.trainer,
            f.seed,
            f.error.replace(['\t', '\n'], " ")
        );
    }
    out
}

/// Two-column `target<TAB>prediction` file for overlay plots.
pub fn write_overlay(path: &Path, targets: &[f64], predictions: &[f64]) -> Result<()> {
    if targets.len() != predictions.len() {
        return Err(Error::LengthMismatch(targets.len(), predictions.len()));
    }
    let mut out = String::from("target\tprediction\n");
    for (t, p) in targets.iter().zip(predictions) {
        let _ = writeln!(out, "{}\t{}", fmt_f64(*t), fmt_f64(*p));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            mse(&[0.5, 7.0], &[1.5, 2.0]).unwrap(),
            mse(&[1.5, 2.0], &[0.5, 7.0]).unwrap()
        );
        assert!(matches!(mse(&[], &[]), Err(Error::Empty)));
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson_r(&a, &a).unwrap(), 1.0);
        let neg: Vec<f64> = a.iter().map(|x| 5.0 - x).collect();
        assert_eq!(pearson_r(&a, &neg).unwrap(), -1.0);
        assert!((pearson_r(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(pearson_r(&a, &[2.0; 4]), Err(Error::DegenerateVariance)));
        assert!(matches!(
            pearson_r(&[0.1; 3], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateVariance)
        ));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            xs in prop::collection::vec(-10.0f64..10.0, 3..40),
            noise in prop::collection::vec(-1.0f64..1.0, 40),
            scale in 0.01f64..100.0,
            shift in -50.0f64..50.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| x + n).collect();
            prop_assume!(!xs.iter().all(|x| *x == xs[0]) && !ys.iter().all(|y| *y == ys[0]));
            let r = pearson_r(&xs, &ys).unwrap();
            prop_assert!(r.abs() <= 1.0 + 1e-12);
            let moved: Vec<f64> = ys.iter().map(|y| scale * y + shift).collect();
            prop_assert!((pearson_r(&xs, &moved).unwrap() - r).abs() <= 1e-12);
        }

        #[test]
        fn mse_zero_iff_equal(xs in prop::collection::vec(-5.0f64..5.0, 1..20), k in 0usize..20, bump in 1e-3f64..1.0) {
            prop_assert_eq!(mse(&xs, &xs).unwrap(), 0.0);
            let mut other = xs.clone();
            let k = k % xs.len();
            other[k] += bump;
            prop_assert!(mse(&xs, &other).unwrap() > 0.0);
        }
    }

    fn toy_data(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let ys = xs
            .iter()
            .map(|x| 1.0 + 0.1 * x[0] + 0.05 * x[1] * x[2] / 10.0)
            .collect();
        (xs, ys)
    }

    fn small_cfg(method: TrainMethod) -> TrainConfig {
        let mut c = TrainConfig::new(method, 0);
        c.max_epochs = 60;
        c
    }

    #[test]
    fn experiment_means_and_determinism() {
        let (xs, ys) = toy_data(1);
        let cfg = small_cfg(TrainMethod::Scg);
        let exp = run_experiment("toy", &xs, &ys, &cfg, 3, 40).unwrap();
        let rep = &exp.report;
        assert_eq!(rep.per_run.len(), 3);
        assert!(rep.failed.is_empty());
        let mean_test_r = rep.per_run.iter().map(|r| r.metrics.test.r).sum::<f64>() / 3.0;
        assert!((rep.mean.unwrap().test.r - mean_test_r).abs() <= 1e-12);
        for r in &rep.per_run {
            for m in r.metrics.as_array() {
                assert!(m.mse >= 0.0 && m.r.abs() <= 1.0);
            }
        }
        let again = run_experiment("toy", &xs, &ys, &cfg, 3, 40).unwrap();
        assert_eq!(again.report, exp.report);

        let single = run_experiment("toy", &xs, &ys, &cfg, 1, 41).unwrap();
        assert_eq!(single.report.per_run[0], rep.per_run[1]);
        assert_eq!(single.report.mean.unwrap(), rep.per_run[1].metrics);
    }

    #[test]
    fn fitted_predictions_use_the_stored_standardizer() {
        let (xs, ys) = toy_data(2);
        let fit = fit_once(&xs, &ys, &small_cfg(TrainMethod::Lm)).unwrap();
        let z = fit.standardizer.apply_row(&xs[7]).unwrap();
        assert_eq!(crate::ann::forward(&fit.model, &z).unwrap(), fit.predictions[7]);
        assert_eq!(
            fit.split.train.len() + fit.split.validation.len() + fit.split.test.len(),
            120
        );
    }

    fn fake_report(method: &str, all_r: f64, trainer: TrainMethod) -> EvalReport {
        let m = SplitMetrics {
            mse: 0.1 / all_r,
            r: all_r,
        };
        let metrics = Metrics {
            all: m,
            train: m,
            validation: m,
            test: m,
        };
        EvalReport {
            method: method.into(),
            feature_len: 768,
            trainer,
            runs: 1,
            per_run: vec![RunRecord {
                seed: 0,
                metrics,
                epochs: 10,
                best_epoch: 4,
            }],
            failed: vec![],
            mean: Some(metrics),
        }
    }

    #[test]
    fn table_layout_and_round_trip() {
        let reports = vec![
            fake_report("sumsim:R-G-B", 0.91, TrainMethod::Scg),
            fake_report("cooc64", 0.97, TrainMethod::Lm),
            fake_report("mvn:R-G", 1.0 / 3.0, TrainMethod::Scg),
        ];
        let text = report_table(&reports[..1]);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1).unwrap().split('\t').count() - 5, 6);

        let rows = parse_report_table(&report_table(&reports)).unwrap();
        assert_eq!(rows, report_rows(&reports));
        let order: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(order, ["cooc64", "sumsim:R-G-B", "mvn:R-G"]);
        assert!(render_human(&reports).contains("cooc64"));
    }
}
