//! Seeded synthetic flame rig.
//!
//! A session is a smooth excess air trajectory `lambda(t)`, an analyzer log
//! sampling it, and camera frames rendered from it. Each frame shows a
//! central flame disk whose channel intensities follow `lambda`:
//!
//! * G rises strictly with `lambda`.
//! * R follows a concave quadratic, so (R, G) identifies `lambda` uniquely.
//! * B falls with `lambda` and carries a vertical gradient.
//!
//! Dark blotches dim R and B; they fade in one after another as `lambda`
//! moves away from the ideal band. Pixel noise is additive Gaussian, clipped.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{write_reference_index, write_rows, FrameEntry, FrameIndex, LambdaLog, ReferenceEntry};
use crate::error::{Error, Result};
use crate::flame_model::IDEAL_LAMBDA_BAND;
use crate::imaging::RgbImage;

/// Seconds between random-walk knots of the excess air trajectory.
const KNOT_SPACING_S: f64 = 25.0;
/// Largest random-walk increment, as a fraction of the lambda range.
const WALK_STEP: f64 = 0.3;
const MAX_SPOTS: usize = 8;
/// Visible blotches per unit of lambda outside the ideal band.
const SPOTS_PER_LAMBDA: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RigConfig {
    /// Frame side length in pixels (square frames).
    pub image_size: usize,
    pub duration_s: f64,
    pub frame_rate_hz: f64,
    pub lambda_rate_hz: f64,
    pub lambda_range: (f64, f64),
    /// Standard deviation of the additive pixel noise, in intensity levels.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            duration_s: 1000.0,
            frame_rate_hz: 2.0,
            lambda_rate_hz: 1.0,
            lambda_range: (0.8, 3.0),
            noise_sigma: 3.0,
            seed: 1,
        }
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.image_size < 32 || !self.image_size.is_multiple_of(16) {
            return bad(format!(
                "image size {} must be >= 32 and divisible by 16",
                self.image_size
            ));
        }
        for (name, v) in [
            ("duration", self.duration_s),
            ("frame rate", self.frame_rate_hz),
            ("lambda rate", self.lambda_rate_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let (lo, hi) = self.lambda_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!("lambda range [{lo}, {hi}] must satisfy 0 < lo < hi"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate_hz).floor() as usize
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        k as f64 / self.frame_rate_hz
    }
}

/// Smooth excess air trajectory: a reflected random walk at fixed knots with
/// cosine easing in between, so it is continuously differentiable and never
/// leaves the range.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTrajectory {
    values: Vec<f64>,
    spacing: f64,
}

impl LambdaTrajectory {
    pub fn new(cfg: &RigConfig) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = cfg.lambda_range;
        let width = hi - lo;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a3b_da00_0001);
        let knots = (cfg.duration_s / KNOT_SPACING_S).ceil() as usize + 2;
        let mut values = Vec::with_capacity(knots);
        let mut v = rng.random_range(lo..=hi);
        for _ in 0..knots {
            values.push(v);
            v += rng.random_range(-WALK_STEP..=WALK_STEP) * width;
            // Reflect at both ends.
            if v < lo {
                v = 2.0 * lo - v;
            }
            if v > hi {
                v = 2.0 * hi - v;
            }
            v = v.clamp(lo, hi);
        }
        Ok(Self {
            values,
            spacing: KNOT_SPACING_S,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = (t / self.spacing).max(0.0);
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let u = (x - i as f64).clamp(0.0, 1.0);
        let w = 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
        self.values[i] + (self.values[i + 1] - self.values[i]) * w
    }
}

/// Per-frame seed derived from the session seed; independent of scheduling.
fn frame_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xd1b5_4a32_d192_ed03))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Spot {
    row: f64,
    col: f64,
    radius: f64,
}

/// Blotch positions are a function of the session seed only.
fn spot_layout(cfg: &RigConfig) -> Vec<Spot> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0b1a_7c4e_5e55_0002);
    let s = cfg.image_size as f64;
    let c = (s - 1.0) / 2.0;
    (0..MAX_SPOTS)
        .map(|_| {
            let r = 0.32 * s * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            Spot {
                row: c + r * a.sin(),
                col: c + r * a.cos(),
                radius: 0.05 * s,
            }
        })
        .collect()
}

/// Distance of `lambda` from the ideal band (0 inside it).
fn band_distance(lambda: f64) -> f64 {
    let (lo, hi) = IDEAL_LAMBDA_BAND;
    (lo - lambda).max(lambda - hi).max(0.0)
}

/// Noise-free channel intensities at normalized radius `r`, vertical offset
/// `y` (both in units of the disk radius) and normalized excess air `s`.
fn flame_rgb(s: f64, r: f64, y: f64) -> [f64; 3] {
    let red = (120.0 + 100.0 * s - 60.0 * s * s) * (1.0 - 0.25 * r * r);
    let green = (50.0 + 160.0 * s) * (1.0 - 0.45 * r * r);
    let blue = (30.0 + 80.0 * (1.0 - s)) * (0.7 + 0.3 * y) * (1.0 - 0.1 * r);
    [red, green, blue]
}

/// Renders one frame at excess air `lambda`. `noise_seed` drives the pixel noise only.
pub fn render_frame(cfg: &RigConfig, lambda: f64, noise_seed: u64) -> Result<RgbImage> {
    cfg.validate()?;
    let (lo, hi) = cfg.lambda_range;
    let s_norm = ((lambda - lo) / (hi - lo)).clamp(0.0, 1.0);
    let size = cfg.image_size;
    let centre = (size as f64 - 1.0) / 2.0;
    let radius = 0.4 * size as f64;
    let spots = spot_layout(cfg);
    let active = SPOTS_PER_LAMBDA * band_distance(lambda);
    let opacity: Vec<f64> = (0..MAX_SPOTS).map(|k| (active - k as f64).clamp(0.0, 1.0)).collect();

    let noise =
        Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut pixels = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (dy, dx) = (row as f64 - centre, col as f64 - centre);
            let r = (dx * dx + dy * dy).sqrt() / radius;
            let edge = ((1.08 - r) / 0.08).clamp(0.0, 1.0);
            let mut rgb = flame_rgb(s_norm, r.min(1.0), (dy / radius).clamp(-1.0, 1.0)).map(|v| v * edge);
            for (spot, a) in spots.iter().zip(&opacity) {
                if *a == 0.0 {
                    continue;
                }
                let d = ((row as f64 - spot.row).powi(2) + (col as f64 - spot.col).powi(2)).sqrt() / spot.radius;
                if d < 1.0 {
                    let dim = 1.0 - 0.6 * a * (1.0 - d * d);
                    rgb[0] *= dim;
                    rgb[2] *= dim;
                }
            }
            let mut px = [0u8; 3];
            for (p, v) in px.iter_mut().zip(rgb) {
                let n = if cfg.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                *p = (v + n).round().clamp(0.0, 255.0) as u8;
            }
            pixels.push(px);
        }
    }
    RgbImage::new(size, size, pixels)
}

/// A rendered session held in memory.
#[derive(Debug, Clone)]
pub struct Session {
    pub timestamps: Vec<f64>,
    pub frames: Vec<RgbImage>,
    /// Exact `lambda(t)` at each frame timestamp.
    pub truth: Vec<f64>,
    pub log: LambdaLog,
}

pub fn generate_session(cfg: &RigConfig) -> Result<Session> {
    let trajectory = LambdaTrajectory::new(cfg)?;
    let n = cfg.frame_count();
    if n == 0 {
        return Err(Error::ConfigInvalid("session shorter than one frame interval".into()));
    }
    let timestamps: Vec<f64> = (0..n).map(|k| cfg.frame_time(k)).collect();
    let truth: Vec<f64> = timestamps.iter().map(|&t| trajectory.eval(t)).collect();
    let frames = truth
        .par_iter()
        .enumerate()
        .map(|(k, &l)| render_frame(cfg, l, frame_seed(cfg.seed, 1, k as u64)))
        .collect::<Result<Vec<_>>>()?;

    // Analyzer samples cover the whole session so every frame can be aligned.
    let samples = (cfg.duration_s * cfg.lambda_rate_hz).ceil() as usize + 1;
    let log = LambdaLog::new(
        (0..samples)
            .map(|j| {
                let t = j as f64 / cfg.lambda_rate_hz;
                (t, trajectory.eval(t))
            })
            .collect(),
    )?;
    Ok(Session {
        timestamps,
        frames,
        truth,
        log,
    })
}

/// Excess air values of the reference set: evenly spaced over the ideal band.
pub fn ideal_reference_lambdas(count: usize) -> Result<Vec<f64>> {
    let (lo, hi) = IDEAL_LAMBDA_BAND;
    match count {
        0 => Err(Error::ConfigInvalid("reference count must be >= 1".into())),
        1 => Ok(vec![(lo + hi) / 2.0]),
        n => Ok((0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect()),
    }
}

pub fn ideal_reference_frames(cfg: &RigConfig, count: usize) -> Result<Vec<RgbImage>> {
    cfg.validate()?;
    ideal_reference_lambdas(count)?
        .par_iter()
        .enumerate()
        .map(|(i, &l)| render_frame(cfg, l, frame_seed(cfg.seed, 2, i as u64)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct TruthRow {
    timestamp_s: f64,
    lambda: f64,
}

/// File names inside a session directory.
pub mod layout {
    pub const FRAME_INDEX: &str = "frame_index.csv";
    pub const LAMBDA_LOG: &str = "lambda_log.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.csv";
    pub const REFERENCE_INDEX: &str = "reference.csv";
    pub const FRAMES_DIR: &str = "frames";
    pub const REFERENCE_DIR: &str = "reference";
}

/// Summary of a session written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub dir: PathBuf,
    pub frames: usize,
    pub lambda_samples: usize,
    pub reference_frames: usize,
}

/// Writes frames, frame index, analyzer log, ground truth and an ideal
/// reference set of `reference_count` frames under `dir`.
pub fn write_session(cfg: &RigConfig, dir: &Path, reference_count: usize) -> Result<SessionSummary> {
    let session = generate_session(cfg)?;
    let references = ideal_reference_frames(cfg, reference_count)?;
    let ref_lambdas = ideal_reference_lambdas(reference_count)?;

    for sub in [layout::FRAMES_DIR, layout::REFERENCE_DIR] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let frame_names: Vec<String> = (0..session.frames.len())
        .map(|k| format!("{}/frame_{k:05}.png", layout::FRAMES_DIR))
        .collect();
    session
        .frames
        .par_iter()
        .zip(frame_names.par_iter())
        .try_for_each(|(img, name)| img.save_png(&dir.join(name)))?;
    let ref_names: Vec<String> = (0..references.len())
        .map(|k| format!("{}/ideal_{k:02}.png", layout::REFERENCE_DIR))
        .collect();
    references
        .iter()
        .zip(&ref_names)
        .try_for_each(|(img, name)| img.save_png(&dir.join(name)))?;

    let index = FrameIndex::new(
        session
            .timestamps
            .iter()
            .zip(&frame_names)
            .map(|(&t, name)| FrameEntry {
                timestamp_s: t,
                relative_image_path: name.clone(),
            })
            .collect(),
    )?;
    index.write_csv(&dir.join(layout::FRAME_INDEX))?;
    session.log.write_csv(&dir.join(layout::LAMBDA_LOG))?;
    write_rows(
        &dir.join(layout::GROUND_TRUTH),
        session
            .timestamps
            .iter()
            .zip(&session.truth)
            .map(|(&timestamp_s, &lambda)| TruthRow { timestamp_s, lambda }),
    )?;
    let reference_index: Vec<ReferenceEntry> = ref_names
        .iter()
        .zip(&ref_lambdas)
        .map(|(n, &lambda)| ReferenceEntry {
            relative_image_path: n.clone(),
            lambda,
        })
        .collect();
    write_reference_index(&dir.join(layout::REFERENCE_INDEX), &reference_index)?;
    Ok(SessionSummary {
        dir: dir.to_path_buf(),
        frames: session.frames.len(),
        lambda_samples: session.log.len(),
        reference_frames: references.len(),
    })
}
