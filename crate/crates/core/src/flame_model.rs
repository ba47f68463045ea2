//! Statistical model of the ideal flame.
//!
//! Per-channel population moments and channel-subset covariances are fitted
//! over the pooled pixels of reference frames recorded while the excess air
//! coefficient was inside the ideal band.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{ChannelId, ChannelPlane, RgbImage};
use crate::textfmt::{TextFields, TextWriter};

/// Ideal excess air band, inclusive.
pub const IDEAL_LAMBDA_BAND: (f64, f64) = (1.2, 1.5);

/// Standard deviations at or below this are treated as degenerate.
pub const MIN_SIGMA: f64 = 1e-9;

const MODEL_FORMAT: &str = "flamesense-ideal-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

/// Population covariance of an ordered channel subset.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    channels: Vec<ChannelId>,
    /// Row-major `d x d`.
    entries: Vec<f64>,
}

impl CovMatrix {
    pub fn new(channels: Vec<ChannelId>, entries: Vec<f64>) -> Result<Self> {
        let d = channels.len();
        if !(2..=3).contains(&d) || entries.len() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "covariance over {d} channels with {} entries",
                entries.len()
            )));
        }
        Ok(Self { channels, entries })
    }

    pub fn channels(&self) -> &[ChannelId] {
        &self.channels
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim() + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn covers(&self, channels: &[ChannelId]) -> bool {
        self.dim() == channels.len() && channels.iter().all(|ch| self.channels.contains(ch))
    }

    /// Same matrix with rows and columns reordered to `order`.
    fn permuted(&self, order: &[ChannelId]) -> Self {
        let pos: Vec<usize> = order
            .iter()
            .map(|ch| self.channels.iter().position(|c| c == ch).unwrap())
            .collect();
        let d = order.len();
        Self {
            channels: order.to_vec(),
            entries: (0..d * d).map(|k| self.get(pos[k / d], pos[k % d])).collect(),
        }
    }

    /// Copy with the off-diagonal entries set to zero.
    pub fn diagonal_only(&self) -> Self {
        let d = self.dim();
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            entries[i * d + i] = self.get(i, i);
        }
        Self {
            channels: self.channels.clone(),
            entries,
        }
    }
}

/// Where a fitted model came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub frame_count: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Channel subsets carried by every model.
pub const COV_SUBSETS: [&[ChannelId]; 4] = [
    &[ChannelId::R, ChannelId::G],
    &[ChannelId::R, ChannelId::B],
    &[ChannelId::G, ChannelId::B],
    &[ChannelId::R, ChannelId::G, ChannelId::B],
];

#[derive(Debug, Clone, PartialEq)]
pub struct IdealFlameModel {
    /// Indexed in `ChannelId::ALL` order.
    stats: [ChannelStats; 4],
    /// In `COV_SUBSETS` order.
    covs: Vec<CovMatrix>,
    provenance: Provenance,
}

fn channel_slot(ch: ChannelId) -> usize {
    ChannelId::ALL.iter().position(|&c| c == ch).unwrap()
}

impl IdealFlameModel {
    pub fn new(stats: [ChannelStats; 4], covs: Vec<CovMatrix>, provenance: Provenance) -> Result<Self> {
        if covs.len() != COV_SUBSETS.len() || covs.iter().zip(COV_SUBSETS).any(|(c, s)| c.channels() != s) {
            return Err(Error::CorruptModel(
                "covariances must cover R-G, R-B, G-B and R-G-B in that order".into(),
            ));
        }
        let (lo, hi) = IDEAL_LAMBDA_BAND;
        for l in [provenance.lambda_min, provenance.lambda_max] {
            if !(lo..=hi).contains(&l) {
                return Err(Error::LambdaOutOfBand(l));
            }
        }
        Ok(Self {
            stats,
            covs,
            provenance,
        })
    }

    pub fn stats(&self, ch: ChannelId) -> ChannelStats {
        self.stats[channel_slot(ch)]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn covariances(&self) -> &[CovMatrix] {
        &self.covs
    }

    /// Covariance for an ordered subset of {R, G, B}, permuted from the stored subsets.
    pub fn covariance(&self, channels: &[ChannelId]) -> Option<CovMatrix> {
        self.covs
            .iter()
            .find(|c| c.covers(channels))
            .map(|c| c.permuted(channels))
    }

    /// Replaces the stored covariance covering the same channel set.
    pub fn with_covariance(mut self, cov: CovMatrix) -> Result<Self> {
        let slot = self
            .covs
            .iter()
            .position(|c| c.covers(&cov.channels))
            .ok_or_else(|| Error::DimensionMismatch("no matching covariance subset".into()))?;
        self.covs[slot] = cov.permuted(&self.covs[slot].channels);
        Ok(self)
    }

    /// Channels whose standard deviation is at or below [`MIN_SIGMA`].
    pub fn degenerate_channels(&self) -> Vec<ChannelId> {
        ChannelId::ALL
            .into_iter()
            .filter(|&c| self.stats(c).std <= MIN_SIGMA)
            .collect()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_channels().is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut w = TextWriter::new(MODEL_FORMAT, MODEL_VERSION);
        self.write_fields(&mut w, "");
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_fields(&TextFields::parse(text, MODEL_FORMAT, MODEL_VERSION)?, "")
    }

    /// Writes every field under `prefix`, for embedding in other documents.
    pub fn write_fields(&self, w: &mut TextWriter, prefix: &str) {
        w.field(&format!("{prefix}frames"), self.provenance.frame_count)
            .f64(&format!("{prefix}lambda_min"), self.provenance.lambda_min)
            .f64(&format!("{prefix}lambda_max"), self.provenance.lambda_max);
        for ch in ChannelId::ALL {
            let s = self.stats(ch);
            w.f64(&format!("{prefix}mean.{ch}"), s.mean)
                .f64(&format!("{prefix}std.{ch}"), s.std);
        }
        for cov in &self.covs {
            let key: String = cov.channels.iter().map(|c| c.letter()).collect();
            w.f64s(&format!("{prefix}cov.{key}"), &cov.entries);
        }
    }

    pub fn read_fields(f: &TextFields, prefix: &str) -> Result<Self> {
        let provenance = Provenance {
            frame_count: f.usize(&format!("{prefix}frames"))?,
            lambda_min: f.f64(&format!("{prefix}lambda_min"))?,
            lambda_max: f.f64(&format!("{prefix}lambda_max"))?,
        };
        let mut stats = [ChannelStats { mean: 0.0, std: 0.0 }; 4];
        for ch in ChannelId::ALL {
            stats[channel_slot(ch)] = ChannelStats {
                mean: f.f64(&format!("{prefix}mean.{ch}"))?,
                std: f.f64(&format!("{prefix}std.{ch}"))?,
            };
        }
        let covs = COV_SUBSETS
            .iter()
            .map(|subset| {
                let key: String = subset.iter().map(|c| c.letter()).collect();
                CovMatrix::new(subset.to_vec(), f.f64s(&format!("{prefix}cov.{key}"))?)
                    .map_err(|e| Error::CorruptModel(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(stats, covs, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Population mean of a plane.
pub fn channel_mean(plane: &ChannelPlane) -> f64 {
    plane.values().iter().sum::<f64>() / plane.len() as f64
}

/// Population standard deviation (denominator `M x N`).
pub fn channel_std(plane: &ChannelPlane) -> f64 {
    let mu = channel_mean(plane);
    let ss: f64 = plane.values().iter().map(|v| (v - mu) * (v - mu)).sum();
    (ss / plane.len() as f64).sqrt()
}

/// Population cross-covariance of two planes of equal shape.
pub fn channel_cov(a: &ChannelPlane, b: &ChannelPlane) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (mu_a, mu_b) = (channel_mean(a), channel_mean(b));
    let s: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - mu_a) * (y - mu_b))
        .sum();
    Ok(s / a.len() as f64)
}

/// Integer channel codes scaled so that every channel, including luma, is an
/// exact integer: R, G, B by 1000 and I as `299 R + 587 G + 114 B`.
fn scaled_codes(p: [u8; 3]) -> [i128; 4] {
    let [r, g, b] = p.map(i128::from);
    [1000 * r, 1000 * g, 1000 * b, 299 * r + 587 * g + 114 * b]
}

/// Exact pooled sums over every pixel of every frame.
struct PooledSums {
    n: i128,
    sum: [i128; 4],
    /// Upper triangle of the 4x4 cross-product matrix.
    cross: [[i128; 4]; 4],
}

impl PooledSums {
    fn new() -> Self {
        Self {
            n: 0,
            sum: [0; 4],
            cross: [[0; 4]; 4],
        }
    }

    fn add_frame(&mut self, img: &RgbImage) {
        for &p in img.pixels() {
            let c = scaled_codes(p);
            self.n += 1;
            for i in 0..4 {
                self.sum[i] += c[i];
                for j in i..4 {
                    self.cross[i][j] += c[i] * c[j];
                }
            }
        }
    }

    fn mean(&self, i: usize) -> f64 {
        self.sum[i] as f64 / (1000.0 * self.n as f64)
    }

    /// `n^2 * 1e6 * cov(i, j)` is an exact integer; the only rounding is the final division.
    fn cov(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let numer = self.n * self.cross[i][j] - self.sum[i] * self.sum[j];
        numer as f64 / (1e6 * (self.n as f64) * (self.n as f64))
    }
}

/// Fits the ideal flame model over the pooled pixels of the reference frames.
///
/// Moments are accumulated in exact integer arithmetic, so the result does not
/// depend on frame order.
pub fn fit_ideal_model(frames: &[RgbImage], lambdas: &[f64]) -> Result<IdealFlameModel> {
    if frames.is_empty() {
        return Err(Error::EmptyReference);
    }
    if frames.len() != lambdas.len() {
        return Err(Error::LengthMismatch(frames.len(), lambdas.len()));
    }
    if frames.len() < 2 {
        return Err(Error::InsufficientData(
            "at least two reference frames are required".into(),
        ));
    }
    let (lo, hi) = IDEAL_LAMBDA_BAND;
    if let Some(&l) = lambdas.iter().find(|l| !(lo..=hi).contains(*l)) {
        return Err(Error::LambdaOutOfBand(l));
    }
    let (h, w) = (frames[0].height(), frames[0].width());
    if let Some(f) = frames.iter().find(|f| f.height() != h || f.width() != w) {
        return Err(Error::DimensionMismatch(format!(
            "reference frame {}x{} differs from {h}x{w}",
            f.height(),
            f.width()
        )));
    }

    let mut sums = PooledSums::new();
    for f in frames {
        sums.add_frame(f);
    }

    let mut stats = [ChannelStats { mean: 0.0, std: 0.0 }; 4];
    for (slot, s) in stats.iter_mut().enumerate() {
        *s = ChannelStats {
            mean: sums.mean(slot),
            std: sums.cov(slot, slot).max(0.0).sqrt(),
        };
    }
    let covs = COV_SUBSETS
        .iter()
        .map(|subset| {
            let idx: Vec<usize> = subset.iter().map(|&c| channel_slot(c)).collect();
            let d = idx.len();
            let entries = (0..d * d).map(|k| sums.cov(idx[k / d], idx[k % d])).collect();
            CovMatrix::new(subset.to_vec(), entries)
        })
        .collect::<Result<Vec<_>>>()?;

    let provenance = Provenance {
        frame_count: frames.len(),
        lambda_min: lambdas.iter().copied().fold(f64::INFINITY, f64::min),
        lambda_max: lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    IdealFlameModel::new(stats, covs, provenance)
}
