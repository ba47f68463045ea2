//! Stream ingestion, time alignment, splitting and feature scaling.
//!
//! The analyzer log runs at 1 Hz and the camera at 2 Hz; every frame inside
//! the log's time span receives a target from a not-a-knot cubic spline
//! through the log. Frames outside the span are dropped, never extrapolated.

mod spline;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use spline::CubicSpline;

use crate::error::{Error, Result};

/// Time-stamped excess air measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaLog {
    times: Vec<f64>,
    lambdas: Vec<f64>,
}

impl LambdaLog {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Parse("lambda log timestamps must strictly increase".into()));
        }
        if let Some((t, l)) = entries.iter().find(|(_, l)| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Parse(format!("lambda {l} at t={t} must be positive")));
        }
        let (times, lambdas) = entries.into_iter().unzip();
        Ok(Self { times, lambdas })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.lambdas.iter().copied())
    }

    pub fn spline(&self) -> Result<CubicSpline> {
        CubicSpline::not_a_knot(&self.times, &self.lambdas)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows: Vec<LambdaRow> = read_rows(path)?;
        Self::new(rows.into_iter().map(|r| (r.timestamp_s, r.lambda)).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(
            path,
            self.entries()
                .map(|(timestamp_s, lambda)| LambdaRow { timestamp_s, lambda }),
        )
    }
}

/// Interpolated excess air at `t`.
pub fn cubic_interp(log: &LambdaLog, t: f64) -> Result<f64> {
    log.spline()?.eval(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LambdaRow {
    timestamp_s: f64,
    lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub timestamp_s: f64,
    pub relative_image_path: String,
}

/// Time-stamped frame references.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameIndex {
    entries: Vec<FrameEntry>,
}

impl FrameIndex {
    pub fn new(entries: Vec<FrameEntry>) -> Result<Self> {
        if entries.windows(2).any(|w| !(w[1].timestamp_s > w[0].timestamp_s)) {
            return Err(Error::Parse("frame timestamps must strictly increase".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[FrameEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::new(read_rows(path)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, self.entries.iter().cloned())
    }
}

/// A frame captured while the excess air was inside the ideal band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub relative_image_path: String,
    pub lambda: f64,
}

pub fn read_reference_index(path: &Path) -> Result<Vec<ReferenceEntry>> {
    read_rows(path)
}

pub fn write_reference_index(path: &Path, entries: &[ReferenceEntry]) -> Result<()> {
    write_rows(path, entries.iter().cloned())
}

/// One aligned (frame, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp_s: f64,
    pub image_path: String,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyncedDataset {
    pub samples: Vec<Sample>,
}

impl SyncedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.lambda).collect()
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        let samples: Vec<Sample> = read_rows(path)?;
        if let Some(s) = samples.iter().find(|s| !(s.lambda > 0.0 && s.lambda.is_finite())) {
            return Err(Error::Parse(format!("non-positive target at t={}", s.timestamp_s)));
        }
        Ok(Self { samples })
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        write_rows(path, self.samples.iter().cloned())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncReport {
    pub dataset: SyncedDataset,
    /// Frames outside the analyzer log's time span.
    pub dropped: usize,
}

/// Pairs every frame inside the log's span with its interpolated target.
pub fn sync(frames: &FrameIndex, log: &LambdaLog) -> Result<SyncReport> {
    if frames.is_empty() || log.is_empty() {
        return Err(Error::TooFewPoints {
            need: 1,
            got: frames.len().min(log.len()),
        });
    }
    let spline = log.spline()?;
    let (lo, hi) = spline.span();
    let mut samples = Vec::with_capacity(frames.len());
    let mut dropped = 0;
    for f in frames.entries() {
        if f.timestamp_s < lo || f.timestamp_s > hi {
            dropped += 1;
            continue;
        }
        samples.push(Sample {
            timestamp_s: f.timestamp_s,
            image_path: f.relative_image_path.clone(),
            lambda: spline.eval(f.timestamp_s)?,
        });
    }
    Ok(SyncReport {
        dataset: SyncedDataset { samples },
        dropped,
    })
}

/// Train / validation / test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn standard(seed: u64) -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// `floor(fraction * count)`, robust to the fraction's binary representation.
fn floor_share(fraction: f64, count: usize) -> usize {
    let exact = fraction * count as f64;
    let nearest = exact.round();
    if (exact - nearest).abs() < 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        exact.floor() as usize
    }
}

/// Seeded random partition: validation and test get `floor(0.15 C)` samples
/// each, training gets the remainder.
pub fn split(count: usize, ratios: &SplitSpec) -> Result<Split> {
    if count == 0 {
        return Err(Error::Empty);
    }
    let total = ratios.train + ratios.validation + ratios.test;
    if (total - 1.0).abs() > 1e-9 || [ratios.train, ratios.validation, ratios.test].iter().any(|r| *r < 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "split ratios must be non-negative and sum to 1, got {total}"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(ratios.seed));
    let n_val = floor_share(ratios.validation, count);
    let n_test = floor_share(ratios.test, count);
    let test = order.split_off(count - n_test);
    let validation = order.split_off(count - n_test - n_val);
    Ok(Split {
        train: order,
        validation,
        test,
    })
}

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-feature z-scoring with training-split statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty)?;
        let d = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch(d, r.len()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::LengthMismatch(self.dim(), row.len()));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::LengthMismatch(self.dim(), row.len()));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect())
    }
}

pub(crate) fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}
