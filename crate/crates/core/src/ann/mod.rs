//! Single-hidden-layer regression network and its trainers.
//!
//! The network is `y = w2 . tanh(W1 x + b1) + b2` with six hidden units. The
//! training objective is `J = 1/(2C) sum (y_i - t_i)^2`.
//!
//! Trainers work on any [`Regressor`]; [`LinearModel`] shares the same
//! interface and serves as a convex surrogate in tests.

mod train;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use train::{
    train, train_lm, train_scg, EarlyStopping, LmParams, ScgParams, StopReason, TrainConfig, TrainMethod, TrainReport,
};

use crate::error::{Error, Result};

/// Hidden layer width.
pub const HIDDEN_UNITS: usize = 6;

/// Samples per work unit when reducing over a batch. Fixed so that the
/// summation order, and therefore every result bit, is schedule independent.
const CHUNK: usize = 64;

/// A differentiable scalar regressor with a flat parameter vector.
pub trait Regressor: Clone + Send + Sync {
    fn input_dim(&self) -> usize;

    fn param_count(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]);

    /// Prediction for one input; `x` has length `input_dim()`.
    fn predict(&self, x: &[f64]) -> f64;

    /// Prediction plus its derivative with respect to every parameter,
    /// written into `grad` (length `param_count()`).
    fn predict_with_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Multilayer perceptron with a tanh hidden layer and identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    hidden: usize,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpModel {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Rebuilds a model from its flat parameter vector.
    pub fn from_params(input_dim: usize, hidden: usize, params: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(input_dim, hidden);
        if params.len() != m.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a {input_dim}-{hidden}-1 network",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::CorruptModel("non-finite network parameter".into()));
        }
        m.set_params(params);
        Ok(m)
    }

    fn hidden_activations(&self, x: &[f64], out: &mut [f64]) {
        for (h, a) in out.iter_mut().enumerate() {
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let z = self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *a = z.tanh();
        }
    }
}

impl Regressor for MlpModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn param_count(&self) -> usize {
        self.hidden * (self.input_dim + 2) + 1
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let (nw1, h) = (self.w1.len(), self.hidden);
        self.w1.copy_from_slice(&params[..nw1]);
        self.b1.copy_from_slice(&params[nw1..nw1 + h]);
        self.w2.copy_from_slice(&params[nw1 + h..nw1 + 2 * h]);
        self.b2 = params[nw1 + 2 * h];
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut a = vec![0.0; self.hidden];
        self.hidden_activations(x, &mut a);
        self.b2 + a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>()
    }

    fn predict_with_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (d, h) = (self.input_dim, self.hidden);
        let mut a = vec![0.0; h];
        self.hidden_activations(x, &mut a);
        let nw1 = h * d;
        for k in 0..h {
            // d y / d z_k
            let delta = self.w2[k] * (1.0 - a[k] * a[k]);
            for (g, v) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g = delta * v;
            }
            grad[nw1 + k] = delta;
            grad[nw1 + h + k] = a[k];
        }
        grad[nw1 + 2 * h] = 1.0;
        self.b2 + a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>()
    }
}

/// Affine regressor `y = w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(input_dim: usize) -> Self {
        Self {
            weights: vec![0.0; input_dim],
            bias: 0.0,
        }
    }
}

impl Regressor for LinearModel {
    fn input_dim(&self) -> usize {
        self.weights.len()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + 1
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let n = self.weights.len();
        self.weights.copy_from_slice(&params[..n]);
        self.bias = params[n];
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    fn predict_with_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.weights.len();
        grad[..n].copy_from_slice(x);
        grad[n] = 1.0;
        self.predict(x)
    }
}

/// Symmetric uniform initialisation in `[-1/sqrt(D), 1/sqrt(D)]` with zero biases.
pub fn init_weights(input_dim: usize, seed: u64) -> Result<MlpModel> {
    if input_dim == 0 {
        return Err(Error::DimensionMismatch("input dimension must be >= 1".into()));
    }
    let bound = 1.0 / (input_dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MlpModel::zeros(input_dim, HIDDEN_UNITS);
    for w in m.w1.iter_mut().chain(m.w2.iter_mut()) {
        *w = rng.random_range(-bound..=bound);
    }
    Ok(m)
}

fn check_input<M: Regressor>(model: &M, x: &[f64]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input of length {} for a model expecting {}",
            x.len(),
            model.input_dim()
        )));
    }
    Ok(())
}

fn check_batch<M: Regressor>(model: &M, xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Empty);
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    xs.iter().try_for_each(|x| check_input(model, x))
}

pub fn forward<M: Regressor>(model: &M, x: &[f64]) -> Result<f64> {
    check_input(model, x)?;
    Ok(model.predict(x))
}

pub fn predict_batch<M: Regressor>(model: &M, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.iter().map(|x| forward(model, x)).collect()
}

/// `1/(2C) sum (prediction - target)^2`.
pub fn cost<M: Regressor>(model: &M, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
    check_batch(model, xs, ys)?;
    Ok(cost_unchecked(model, xs, ys))
}

pub(crate) fn cost_unchecked<M: Regressor>(model: &M, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let partial: Vec<f64> = xs
        .par_chunks(CHUNK)
        .zip(ys.par_chunks(CHUNK))
        .map(|(xc, yc)| {
            xc.iter()
                .zip(yc)
                .map(|(x, y)| {
                    let e = model.predict(x) - y;
                    e * e
                })
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() / (2.0 * xs.len() as f64)
}

/// Exact gradient of [`cost`] with respect to the flat parameter vector.
pub fn gradient<M: Regressor>(model: &M, xs: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
    check_batch(model, xs, ys)?;
    Ok(cost_and_gradient(model, xs, ys).1)
}

pub(crate) fn cost_and_gradient<M: Regressor>(model: &M, xs: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>) {
    let p = model.param_count();
    let partial: Vec<(f64, Vec<f64>)> = xs
        .par_chunks(CHUNK)
        .zip(ys.par_chunks(CHUNK))
        .map(|(xc, yc)| {
            let mut acc = vec![0.0; p];
            let mut row = vec![0.0; p];
            let mut sq = 0.0;
            for (x, y) in xc.iter().zip(yc) {
                let e = model.predict_with_grad(x, &mut row) - y;
                sq += e * e;
                for (a, r) in acc.iter_mut().zip(&row) {
                    *a += e * r;
                }
            }
            (sq, acc)
        })
        .collect();
    let c = xs.len() as f64;
    let mut grad = vec![0.0; p];
    let mut sq = 0.0;
    for (s, g) in &partial {
        sq += s;
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= c);
    (sq / (2.0 * c), grad)
}

/// Residual Jacobian (`C x P`) and residual vector `prediction - target`.
pub fn residual_jacobian<M: Regressor>(model: &M, xs: &[Vec<f64>], ys: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_batch(model, xs, ys)?;
    Ok(jacobian_unchecked(model, xs, ys))
}

pub(crate) fn jacobian_unchecked<M: Regressor>(model: &M, xs: &[Vec<f64>], ys: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let p = model.param_count();
    let mut rows = vec![0.0; xs.len() * p];
    let residuals: Vec<f64> = rows
        .par_chunks_mut(p)
        .zip(xs.par_iter().zip(ys.par_iter()))
        .map(|(row, (x, y))| model.predict_with_grad(x, row) - y)
        .collect();
    (DMatrix::from_row_slice(xs.len(), p, &rows), residuals)
}
