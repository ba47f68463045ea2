//! Local similarity of a frame to the ideal flame.
//!
//! Every method scores each pixel against the ideal model with a Gaussian
//! density and sums the scores over each grid window:
//!
//! * `SumSim`: one univariate density per channel, one feature block per channel.
//! * `NaiveBayes`: product of the channel densities.
//! * `Mvn`: joint multivariate normal density over the channel tuple.
//! * `Gmm`: weighted sum of the channel densities.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flame_model::{IdealFlameModel, MIN_SIGMA};
use crate::imaging::{format_channels, ChannelId, GridSpec, RgbImage, WindowLayout};

/// Univariate normal density.
pub fn pdf_uni(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > MIN_SIGMA) {
        return Err(Error::DegenerateModel(format!("sigma {sigma} <= {MIN_SIGMA:e}")));
    }
    Ok(normal_density(x, mu, sigma))
}

#[inline]
fn normal_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = x - mu;
    (-(z * z) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMethod {
    SumSim,
    NaiveBayes,
    Mvn,
    Gmm,
}

impl FeatureMethod {
    pub const ALL: [FeatureMethod; 4] = [
        FeatureMethod::SumSim,
        FeatureMethod::NaiveBayes,
        FeatureMethod::Mvn,
        FeatureMethod::Gmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureMethod::SumSim => "sumsim",
            FeatureMethod::NaiveBayes => "naive-bayes",
            FeatureMethod::Mvn => "mvn",
            FeatureMethod::Gmm => "gmm",
        }
    }

    /// Feature count for a grid with `windows` cells.
    pub fn feature_len(self, channel_count: usize, windows: usize) -> usize {
        match self {
            FeatureMethod::SumSim => windows * channel_count,
            _ => windows,
        }
    }
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for FeatureMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sumsim" | "sum" | "sum-sim" => Ok(FeatureMethod::SumSim),
            "naive-bayes" | "naivebayes" | "nb" => Ok(FeatureMethod::NaiveBayes),
            "mvn" => Ok(FeatureMethod::Mvn),
            "gmm" => Ok(FeatureMethod::Gmm),
            other => Err(Error::Parse(format!("unknown feature method {other:?}"))),
        }
    }
}

/// One point of the mixture weight grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmWeights {
    channels: Vec<ChannelId>,
    weights: Vec<f64>,
    b: u8,
    swept: ChannelId,
}

impl GmmWeights {
    /// Grid point `b` with `swept` receiving `0.05 + 0.1 b`; the rest share the remainder.
    pub fn from_grid(channels: &[ChannelId], swept: ChannelId, b: u8) -> Result<Self> {
        if !(2..=3).contains(&channels.len()) {
            return Err(Error::WeightMismatch(format!(
                "mixture weights need 2 or 3 channels, got {}",
                channels.len()
            )));
        }
        if b > 9 {
            return Err(Error::WeightMismatch(format!("grid index {b} outside 0..=9")));
        }
        if !channels.contains(&swept) {
            return Err(Error::WeightMismatch(format!(
                "swept channel {swept} not in {}",
                format_channels(channels)
            )));
        }
        // Correctly rounded 0.05 + 0.1 b and 0.95 - 0.1 b; both forms of the
        // remainder keep the tuple sum exactly 1.
        let w1 = (f64::from(b) + 0.5) / 10.0;
        let rest = if channels.len() == 2 {
            (9.5 - f64::from(b)) / 10.0
        } else {
            (1.0 - w1) / 2.0
        };
        let weights = channels.iter().map(|&c| if c == swept { w1 } else { rest }).collect();
        Ok(Self {
            channels: channels.to_vec(),
            weights,
            b,
            swept,
        })
    }

    pub fn channels(&self) -> &[ChannelId] {
        &self.channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn b(&self) -> u8 {
        self.b
    }

    pub fn swept(&self) -> ChannelId {
        self.swept
    }

    pub fn weight(&self, ch: ChannelId) -> Option<f64> {
        self.channels.iter().position(|&c| c == ch).map(|i| self.weights[i])
    }

    /// Compact label such as `G@0.95` used in file names and tables.
    pub fn tag(&self) -> String {
        format!(
            "{}@{:.2}",
            self.swept,
            self.weights[self.channels.iter().position(|&c| c == self.swept).unwrap()]
        )
    }

    /// Weights rendered as `0.025-0.95-0.025`.
    pub fn describe(&self) -> String {
        self.weights
            .iter()
            .map(|w| format!("{}", (w * 1000.0).round() / 1000.0))
            .collect::<Vec<_>>()
            .join("-")
    }

    fn same_tuple(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| (a - b).abs() < 1e-12)
    }
}

/// Full mixture weight grid for a channel subset.
///
/// The swept channel rotates over every channel of the subset, `b` runs 0..=9,
/// and tuples equal to an earlier one are dropped (with two channels the second
/// rotation only repeats the first).
pub fn gmm_weight_grid(channels: &[ChannelId]) -> Result<Vec<GmmWeights>> {
    let mut grid: Vec<GmmWeights> = Vec::new();
    for &swept in channels {
        for b in 0..=9 {
            let w = GmmWeights::from_grid(channels, swept, b)?;
            if !grid.iter().any(|g| g.same_tuple(&w)) {
                grid.push(w);
            }
        }
    }
    Ok(grid)
}

/// Validation outcome of one candidate during weight selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    pub r: f64,
    pub mse: f64,
}

/// Picks the candidate with the highest validation R, breaking ties by lower
/// validation MSE and then by lower grid index.
pub fn select_gmm_weights<F>(candidates: &[GmmWeights], mut evaluate: F) -> Result<(GmmWeights, ValidationScore)>
where
    F: FnMut(&GmmWeights) -> Result<ValidationScore>,
{
    let mut best: Option<(&GmmWeights, ValidationScore)> = None;
    for cand in candidates {
        let score = evaluate(cand)?;
        let better = match &best {
            None => true,
            Some((b, s)) => {
                score.r > s.r
                    || (score.r == s.r && score.mse < s.mse)
                    || (score.r == s.r && score.mse == s.mse && cand.b < b.b)
            }
        };
        if better {
            best = Some((cand, score));
        }
    }
    best.map(|(w, s)| (w.clone(), s)).ok_or(Error::Empty)
}

/// Feature vector of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub method: FeatureMethod,
    pub channels: Vec<ChannelId>,
    pub grid: GridSpec,
    pub weights: Option<GmmWeights>,
}

/// Per-channel univariate density with a lookup table for 8-bit channels.
enum ChannelDensity {
    Table { index: usize, table: Box<[f64; 256]> },
    Gray { mu: f64, sigma: f64 },
}

impl ChannelDensity {
    fn new(model: &IdealFlameModel, ch: ChannelId) -> Result<Self> {
        let s = model.stats(ch);
        if !(s.std > MIN_SIGMA) {
            return Err(Error::DegenerateModel(format!(
                "channel {ch} has standard deviation {} <= {MIN_SIGMA:e}",
                s.std
            )));
        }
        Ok(match ch.rgb_index() {
            Some(index) => {
                let mut table = Box::new([0.0; 256]);
                for (v, slot) in table.iter_mut().enumerate() {
                    *slot = normal_density(v as f64, s.mean, s.std);
                }
                ChannelDensity::Table { index, table }
            }
            None => ChannelDensity::Gray {
                mu: s.mean,
                sigma: s.std,
            },
        })
    }

    #[inline]
    fn eval(&self, p: [u8; 3]) -> f64 {
        match self {
            ChannelDensity::Table { index, table } => table[p[*index] as usize],
            ChannelDensity::Gray { mu, sigma } => normal_density(ChannelId::I.value(p), *mu, *sigma),
        }
    }
}

/// Sums `score` over the pixels of every window, windows row-major and pixels
/// row-major inside each window.
fn window_sums(img: &RgbImage, layout: &WindowLayout, score: impl Fn([u8; 3]) -> f64) -> Vec<f64> {
    let pixels = img.pixels();
    let width = img.width();
    (0..layout.window_count())
        .map(|w| {
            let (top, left) = layout.origin(w);
            let mut acc = 0.0;
            for r in top..top + layout.window_height {
                let row = &pixels[r * width + left..r * width + left + layout.window_width];
                for &p in row {
                    acc += score(p);
                }
            }
            acc
        })
        .collect()
}

fn require_rgb_subset(channels: &[ChannelId], sizes: std::ops::RangeInclusive<usize>) -> Result<()> {
    if let Some(&c) = channels.iter().find(|c| c.rgb_index().is_none()) {
        return Err(Error::IllegalChannel(c));
    }
    if !sizes.contains(&channels.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{} channels requested, method accepts {}..={}",
            channels.len(),
            sizes.start(),
            sizes.end()
        )));
    }
    require_distinct(channels)
}

fn require_distinct(channels: &[ChannelId]) -> Result<()> {
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(Error::DimensionMismatch(format!("channel {c} repeated")));
        }
    }
    if channels.is_empty() {
        return Err(Error::DimensionMismatch("no channels requested".into()));
    }
    Ok(())
}

/// Sum of per-pixel similarities, one 256-block per channel in the given order.
pub fn feat_sum_similarity(
    img: &RgbImage,
    model: &IdealFlameModel,
    channels: &[ChannelId],
    grid: GridSpec,
) -> Result<FeatureVector> {
    require_distinct(channels)?;
    let layout = grid.layout(img.height(), img.width())?;
    let mut values = Vec::with_capacity(layout.window_count() * channels.len());
    for &ch in channels {
        let density = ChannelDensity::new(model, ch)?;
        values.extend(window_sums(img, &layout, |p| density.eval(p)));
    }
    Ok(FeatureVector {
        values,
        method: FeatureMethod::SumSim,
        channels: channels.to_vec(),
        grid,
        weights: None,
    })
}

/// Per-pixel product of channel densities, summed over each window.
pub fn feat_naive_bayes(
    img: &RgbImage,
    model: &IdealFlameModel,
    channels: &[ChannelId],
    grid: GridSpec,
) -> Result<FeatureVector> {
    require_rgb_subset(channels, 1..=3)?;
    let layout = grid.layout(img.height(), img.width())?;
    let densities = channels
        .iter()
        .map(|&c| ChannelDensity::new(model, c))
        .collect::<Result<Vec<_>>>()?;
    let values = window_sums(img, &layout, |p| densities.iter().map(|d| d.eval(p)).product::<f64>());
    Ok(FeatureVector {
        values,
        method: FeatureMethod::NaiveBayes,
        channels: channels.to_vec(),
        grid,
        weights: None,
    })
}

/// Multivariate normal density evaluated through a Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnDensity {
    dim: usize,
    mean: [f64; 3],
    /// Lower-triangular factor, row-major 3x3 (only `dim x dim` used).
    chol: [[f64; 3]; 3],
    norm: f64,
}

impl MvnDensity {
    pub fn new(mean: &[f64], cov: &[f64], label: &str) -> Result<Self> {
        let d = mean.len();
        if !(2..=3).contains(&d) || cov.len() != d * d {
            return Err(Error::DimensionMismatch(format!("MVN of dimension {d}")));
        }
        let singular = || Error::SingularCovariance(label.to_string());
        let diag_prod: f64 = (0..d).map(|i| cov[i * d + i]).product();
        if (0..d).any(|i| !(cov[i * d + i] > 0.0)) {
            return Err(singular());
        }
        let mut l = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let pivot = cov[i * d + i] - s;
                    if !(pivot > 0.0) {
                        return Err(singular());
                    }
                    l[i][i] = pivot.sqrt();
                } else {
                    l[i][j] = (cov[i * d + j] - s) / l[j][j];
                }
            }
        }
        let det: f64 = (0..d).map(|i| l[i][i] * l[i][i]).product();
        // Scale-free singularity test: the determinant of the correlation matrix.
        if !(det / diag_prod > 1e-12) {
            return Err(singular());
        }
        let mut m = [0.0; 3];
        m[..d].copy_from_slice(mean);
        Ok(Self {
            dim: d,
            mean: m,
            chol: l,
            norm: 1.0 / (det * (2.0 * PI).powi(d as i32)).sqrt(),
        })
    }

    /// Density at the point `x` (first `dim` entries used).
    #[inline]
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let mut y = [0.0; 3];
        let mut q = 0.0;
        for i in 0..self.dim {
            let mut s = x[i] - self.mean[i];
            for (l, yk) in self.chol[i][..i].iter().zip(&y[..i]) {
                s -= l * yk;
            }
            y[i] = s / self.chol[i][i];
            q += y[i] * y[i];
        }
        self.norm * (-0.5 * q).exp()
    }

    pub fn peak(&self) -> f64 {
        self.norm
    }
}

/// Joint normal density of the pixel's channel tuple, summed over each window.
pub fn feat_mvn(
    img: &RgbImage,
    model: &IdealFlameModel,
    channels: &[ChannelId],
    grid: GridSpec,
) -> Result<FeatureVector> {
    require_rgb_subset(channels, 2..=3)?;
    let layout = grid.layout(img.height(), img.width())?;
    let cov = model
        .covariance(channels)
        .ok_or_else(|| Error::DimensionMismatch("covariance subset unavailable".into()))?;
    let mean: Vec<f64> = channels.iter().map(|&c| model.stats(c).mean).collect();
    let density = MvnDensity::new(&mean, cov.entries(), &format_channels(channels))?;
    let idx: Vec<usize> = channels.iter().map(|c| c.rgb_index().unwrap()).collect();
    let values = window_sums(img, &layout, |p| {
        let mut x = [0.0; 3];
        for (slot, &i) in x.iter_mut().zip(&idx) {
            *slot = f64::from(p[i]);
        }
        density.eval(&x)
    });
    Ok(FeatureVector {
        values,
        method: FeatureMethod::Mvn,
        channels: channels.to_vec(),
        grid,
        weights: None,
    })
}

/// Weighted sum of channel densities, summed over each window.
pub fn feat_gmm(
    img: &RgbImage,
    model: &IdealFlameModel,
    channels: &[ChannelId],
    weights: &GmmWeights,
    grid: GridSpec,
) -> Result<FeatureVector> {
    if weights.channels() != channels {
        return Err(Error::WeightMismatch(format!(
            "weights cover {}, features requested for {}",
            format_channels(weights.channels()),
            format_channels(channels)
        )));
    }
    if !(2..=3).contains(&channels.len()) {
        return Err(Error::WeightMismatch(format!(
            "mixture needs 2 or 3 channels, got {}",
            channels.len()
        )));
    }
    require_rgb_subset(channels, 2..=3)?;
    let layout = grid.layout(img.height(), img.width())?;
    let densities = channels
        .iter()
        .map(|&c| ChannelDensity::new(model, c))
        .collect::<Result<Vec<_>>>()?;
    let w = weights.weights();
    let values = window_sums(img, &layout, |p| {
        densities.iter().zip(w).map(|(d, wk)| wk * d.eval(p)).sum::<f64>()
    });
    Ok(FeatureVector {
        values,
        method: FeatureMethod::Gmm,
        channels: channels.to_vec(),
        grid,
        weights: Some(weights.clone()),
    })
}

/// Complete description of how a frame is featurized.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub method: FeatureMethod,
    pub channels: Vec<ChannelId>,
    pub grid: GridSpec,
    pub weights: Option<GmmWeights>,
}

impl FeatureSpec {
    pub fn new(method: FeatureMethod, channels: Vec<ChannelId>, grid: GridSpec) -> Self {
        Self {
            method,
            channels,
            grid,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: GmmWeights) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn feature_len(&self) -> usize {
        self.method.feature_len(self.channels.len(), self.grid.window_count())
    }

    /// Checks the channel contract without touching any image.
    pub fn validate(&self) -> Result<()> {
        match self.method {
            FeatureMethod::SumSim => require_distinct(&self.channels),
            FeatureMethod::NaiveBayes => require_rgb_subset(&self.channels, 1..=3),
            FeatureMethod::Mvn => require_rgb_subset(&self.channels, 2..=3),
            FeatureMethod::Gmm => {
                require_rgb_subset(&self.channels, 2..=3)?;
                match &self.weights {
                    Some(w) if w.channels() == self.channels.as_slice() => Ok(()),
                    Some(w) => Err(Error::WeightMismatch(format!(
                        "weights cover {}",
                        format_channels(w.channels())
                    ))),
                    None => Err(Error::WeightMismatch("mixture weights missing".into())),
                }
            }
        }
    }

    pub fn label(&self) -> String {
        let mut s = format!("{}:{}", self.method, format_channels(&self.channels));
        if let Some(w) = &self.weights {
            s.push(':');
            s.push_str(&w.describe());
        }
        s
    }

    pub fn extract(&self, img: &RgbImage, model: &IdealFlameModel) -> Result<FeatureVector> {
        match self.method {
            FeatureMethod::SumSim => feat_sum_similarity(img, model, &self.channels, self.grid),
            FeatureMethod::NaiveBayes => feat_naive_bayes(img, model, &self.channels, self.grid),
            FeatureMethod::Mvn => feat_mvn(img, model, &self.channels, self.grid),
            FeatureMethod::Gmm => {
                let w = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::WeightMismatch("mixture weights missing".into()))?;
                feat_gmm(img, model, &self.channels, w, self.grid)
            }
        }
    }
}
