//! Reference feature sets from earlier flame-monitoring work, used as
//! comparison baselines. Bin ranges, quantization and norms are fixed here so
//! that results are reproducible.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::imaging::{extract_channel, ChannelId, ChannelPlane, GridSpec, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    /// Non-excess kurtosis.
    pub kurtosis: f64,
    pub skewness: f64,
}

/// Population mean, standard deviation, kurtosis and skewness. A constant
/// plane reports zero skewness and kurtosis.
pub fn stat_moments(plane: &ChannelPlane) -> Moments {
    let n = plane.len() as f64;
    let mean = plane.values().iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in plane.values() {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let std = m2.sqrt();
    if std == 0.0 {
        return Moments {
            mean,
            std,
            kurtosis: 0.0,
            skewness: 0.0,
        };
    }
    Moments {
        mean,
        std,
        kurtosis: m4 / (m2 * m2),
        skewness: m3 / (m2 * std),
    }
}

/// Mean central-difference gradient magnitude over interior pixels.
pub fn grad_magnitude_mean(plane: &ChannelPlane) -> Result<f64> {
    let (h, w) = (plane.height(), plane.width());
    if h < 3 || w < 3 {
        return Err(Error::TooSmall(format!("gradient needs 3x3, got {h}x{w}")));
    }
    let mut total = 0.0;
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let gx = (plane.get(i, j + 1) - plane.get(i, j - 1)) / 2.0;
            let gy = (plane.get(i + 1, j) - plane.get(i - 1, j)) / 2.0;
            total += gx.hypot(gy);
        }
    }
    Ok(total / ((h - 2) * (w - 2)) as f64)
}

/// Hue in degrees `[0, 360)`; achromatic pixels get hue 0.
pub fn hue_degrees(p: [u8; 3]) -> f64 {
    let [r, g, b] = p.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    h.rem_euclid(360.0)
}

/// Hue quantized to the integer range 0..=255.
pub fn hue_code(p: [u8; 3]) -> u8 {
    (hue_degrees(p) / 360.0 * 255.0).round().min(255.0) as u8
}

/// Hue codes 0..=84 followed by code 230.
pub const HUE_BINS: usize = 86;

fn hue_bin(code: u8) -> Option<usize> {
    match code {
        0..=84 => Some(code as usize),
        230 => Some(85),
        _ => None,
    }
}

/// Fraction of pixels falling in each selected hue bin.
pub fn hue_hist(img: &RgbImage) -> Vec<f64> {
    let mut counts = vec![0usize; HUE_BINS];
    for &p in img.pixels() {
        if let Some(bin) = hue_bin(hue_code(p)) {
            counts[bin] += 1;
        }
    }
    normalize_counts(&counts, img.pixels().len())
}

/// Fraction of pixels with each blue value 1..=255; zero is not counted.
pub fn blue_hist(img: &RgbImage) -> Vec<f64> {
    let mut counts = vec![0usize; 255];
    for &p in img.pixels() {
        if p[2] > 0 {
            counts[p[2] as usize - 1] += 1;
        }
    }
    normalize_counts(&counts, img.pixels().len())
}

fn normalize_counts(counts: &[usize], total: usize) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Normalized 8-level co-occurrence matrix at horizontal offset (0, 1),
/// flattened row-major.
pub fn cooccurrence64(plane: &ChannelPlane) -> Result<Vec<f64>> {
    let (h, w) = (plane.height(), plane.width());
    if h < 2 || w < 2 {
        return Err(Error::TooSmall(format!("co-occurrence needs 2x2, got {h}x{w}")));
    }
    let level = |v: f64| ((v / 32.0).floor() as usize).min(7);
    let mut counts = [0usize; 64];
    for i in 0..h {
        for j in 0..w - 1 {
            counts[level(plane.get(i, j)) * 8 + level(plane.get(i, j + 1))] += 1;
        }
    }
    Ok(normalize_counts(&counts, h * (w - 1)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResFeatures {
    pub mean: f64,
    pub frobenius: f64,
    pub infinity: f64,
    pub spectral: f64,
}

/// Mean gray level of a plane.
pub fn res_mean(plane: &ChannelPlane) -> f64 {
    plane.values().iter().sum::<f64>() / plane.len() as f64
}

pub fn res_features(plane: &ChannelPlane) -> ResFeatures {
    let frobenius = plane.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let infinity = plane
        .values()
        .chunks(plane.width())
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    ResFeatures {
        mean: res_mean(plane),
        frobenius,
        infinity,
        spectral: spectral_norm(plane),
    }
}

/// Largest singular value by power iteration on `A^T A`, to 1e-8 relative.
pub fn spectral_norm(plane: &ChannelPlane) -> f64 {
    let (h, w) = (plane.height(), plane.width());
    let a = plane.values();
    let mut v = vec![1.0 / (w as f64).sqrt(); w];
    let mut av = vec![0.0; h];
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        for (i, out) in av.iter_mut().enumerate() {
            *out = a[i * w..(i + 1) * w].iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let mut next = vec![0.0; w];
        for (i, &s) in av.iter().enumerate() {
            for (n, x) in next.iter_mut().zip(&a[i * w..(i + 1) * w]) {
                *n += x * s;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        // ||A^T A v|| for unit v converges to sigma_max^2.
        let sigma = norm.sqrt();
        v = next.into_iter().map(|x| x / norm).collect();
        if (sigma - estimate).abs() <= 1e-10 * sigma {
            return sigma;
        }
        estimate = sigma;
    }
    estimate
}

/// Mean of each window of a 16x16 grid, row-major.
fn downsample(plane: &ChannelPlane, grid: GridSpec) -> Result<Vec<f64>> {
    let layout = grid.layout(plane.height(), plane.width())?;
    let n = layout.pixels_per_window() as f64;
    Ok((0..layout.window_count())
        .map(|w| {
            let (top, left) = layout.origin(w);
            let mut s = 0.0;
            for r in top..top + layout.window_height {
                for c in left..left + layout.window_width {
                    s += plane.get(r, c);
                }
            }
            s / n
        })
        .collect())
}

/// Two-component principal-component projection of downsampled gray planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    grid: GridSpec,
    mean: Vec<f64>,
    basis: [Vec<f64>; 2],
    variances: [f64; 2],
}

impl Pca2 {
    pub fn fit(planes: &[ChannelPlane]) -> Result<Self> {
        if planes.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "PCA needs at least 3 planes, got {}",
                planes.len()
            )));
        }
        let grid = GridSpec::default();
        let rows = planes.iter().map(|p| downsample(p, grid)).collect::<Result<Vec<_>>>()?;
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let centered = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j] - mean[j]);
        let cov = (centered.transpose() * &centered) / n;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
        if !(l1 > 1e-12) || !(l2 > 1e-10 * l1) {
            return Err(Error::InsufficientData(format!(
                "training planes span fewer than two directions (eigenvalues {l1:e}, {l2:e})"
            )));
        }
        let component = |k: usize| {
            let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            // Sign convention: the largest-magnitude entry is positive.
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        Ok(Self {
            grid,
            mean,
            basis: [component(0), component(1)],
            variances: [l1, l2],
        })
    }

    pub fn apply(&self, plane: &ChannelPlane) -> Result<[f64; 2]> {
        let x = downsample(plane, self.grid)?;
        let proj = |b: &[f64]| {
            x.iter()
                .zip(&self.mean)
                .zip(b)
                .map(|((xi, mi), bi)| (xi - mi) * bi)
                .sum::<f64>()
        };
        Ok([proj(&self.basis[0]), proj(&self.basis[1])])
    }

    /// Approximate plane (downsampled) rebuilt from two coefficients.
    pub fn reconstruct(&self, coeffs: [f64; 2]) -> Vec<f64> {
        (0..self.mean.len())
            .map(|j| self.mean[j] + coeffs[0] * self.basis[0][j] + coeffs[1] * self.basis[1][j])
            .collect()
    }

    pub fn basis(&self) -> &[Vec<f64>; 2] {
        &self.basis
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> [f64; 2] {
        self.variances
    }

    pub fn from_parts(mean: Vec<f64>, basis: [Vec<f64>; 2], variances: [f64; 2]) -> Result<Self> {
        let grid = GridSpec::default();
        if mean.len() != grid.window_count() || basis.iter().any(|b| b.len() != mean.len()) {
            return Err(Error::DimensionMismatch("PCA basis size".into()));
        }
        Ok(Self {
            grid,
            mean,
            basis,
            variances,
        })
    }
}

/// Downsampled 16x16 gray means of a frame, the PCA input representation.
pub fn pca_input(plane: &ChannelPlane) -> Result<Vec<f64>> {
    downsample(plane, GridSpec::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineId {
    HueHist86,
    Cooc64,
    BlueHist255,
    Pca2,
    ResFroInf4,
    ResMean1,
    Moments4,
    Moments5Grad,
}

impl BaselineId {
    pub const ALL: [BaselineId; 8] = [
        BaselineId::HueHist86,
        BaselineId::Cooc64,
        BaselineId::BlueHist255,
        BaselineId::Pca2,
        BaselineId::ResFroInf4,
        BaselineId::ResMean1,
        BaselineId::Moments4,
        BaselineId::Moments5Grad,
    ];

    pub fn feature_len(self) -> usize {
        match self {
            BaselineId::HueHist86 => 86,
            BaselineId::Cooc64 => 64,
            BaselineId::BlueHist255 => 255,
            BaselineId::Pca2 => 2,
            BaselineId::ResFroInf4 => 4,
            BaselineId::ResMean1 => 1,
            BaselineId::Moments4 => 4,
            BaselineId::Moments5Grad => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineId::HueHist86 => "hue-hist86",
            BaselineId::Cooc64 => "cooc64",
            BaselineId::BlueHist255 => "blue-hist255",
            BaselineId::Pca2 => "pca2",
            BaselineId::ResFroInf4 => "res-fro-inf4",
            BaselineId::ResMean1 => "res-mean1",
            BaselineId::Moments4 => "moments4",
            BaselineId::Moments5Grad => "moments5-grad",
        }
    }

    pub fn needs_pca(self) -> bool {
        self == BaselineId::Pca2
    }

    /// Computes the baseline feature vector. `pca` must be supplied for [`BaselineId::Pca2`].
    pub fn extract(self, img: &RgbImage, pca: Option<&Pca2>) -> Result<Vec<f64>> {
        let gray = || extract_channel(img, ChannelId::I);
        let out = match self {
            BaselineId::HueHist86 => hue_hist(img),
            BaselineId::BlueHist255 => blue_hist(img),
            BaselineId::Cooc64 => cooccurrence64(&gray())?,
            BaselineId::Pca2 => {
                let pca = pca.ok_or_else(|| Error::InsufficientData("PCA baseline requires a fitted basis".into()))?;
                pca.apply(&gray())?.to_vec()
            }
            BaselineId::ResFroInf4 => {
                let r = res_features(&gray());
                vec![r.mean, r.frobenius, r.infinity, r.spectral]
            }
            BaselineId::ResMean1 => vec![res_mean(&gray())],
            BaselineId::Moments4 => {
                let m = stat_moments(&gray());
                vec![m.mean, m.std, m.kurtosis, m.skewness]
            }
            BaselineId::Moments5Grad => {
                let g = gray();
                let m = stat_moments(&g);
                vec![m.mean, m.std, m.kurtosis, m.skewness, grad_magnitude_mean(&g)?]
            }
        };
        debug_assert_eq!(out.len(), self.feature_len());
        Ok(out)
    }
}

impl fmt::Display for BaselineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for BaselineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        BaselineId::ALL
            .into_iter()
            .find(|b| b.name() == key)
            .ok_or_else(|| Error::Parse(format!("unknown baseline {s:?}")))
    }
}
