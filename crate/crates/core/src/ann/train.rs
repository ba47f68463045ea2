use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::{check_batch, cost_and_gradient, cost_unchecked, jacobian_unchecked, Regressor};
use crate::error::{Error, Result};
use crate::textfmt::{TextFields, TextWriter};

const REPORT_FORMAT: &str = "flamesense-train-report";
const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMethod {
    Lm,
    Scg,
}

impl TrainMethod {
    pub const ALL: [TrainMethod; 2] = [TrainMethod::Lm, TrainMethod::Scg];

    pub fn name(self) -> &'static str {
        match self {
            TrainMethod::Lm => "lm",
            TrainMethod::Scg => "scg",
        }
    }
}

impl fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lm" | "trainlm" | "levenberg-marquardt" => Ok(TrainMethod::Lm),
            "scg" | "trainscg" | "scaled-conjugate-gradient" => Ok(TrainMethod::Scg),
            _ => Err(Error::ConfigInvalid(format!(
                "unknown trainer {s:?} (expected lm or scg)"
            ))),
        }
    }
}

/// Levenberg-Marquardt damping schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmParams {
    pub mu0: f64,
    pub factor: f64,
    pub mu_max: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            mu0: 1e-3,
            factor: 10.0,
            mu_max: 1e10,
        }
    }
}

/// Scaled conjugate gradient constants: finite-difference step and initial scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScgParams {
    pub sigma: f64,
    pub lambda0: f64,
}

impl Default for ScgParams {
    fn default() -> Self {
        Self {
            sigma: 5e-5,
            lambda0: 5e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub lm: LmParams,
    pub scg: ScgParams,
    /// Gradient norm below which training is considered converged.
    pub min_grad: f64,
}

impl TrainConfig {
    pub fn new(method: TrainMethod, seed: u64) -> Self {
        Self {
            method,
            max_epochs: 1000,
            patience: 6,
            seed,
            lm: LmParams::default(),
            scg: ScgParams::default(),
            min_grad: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lm.mu0,
            self.lm.factor,
            self.lm.mu_max,
            self.scg.sigma,
            self.scg.lambda0,
            self.min_grad,
        ];
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::ConfigInvalid("epochs and patience must be >= 1".into()));
        }
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.lm.factor <= 1.0 {
            return Err(Error::ConfigInvalid("trainer constants must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    ValidationPatience,
    GradientVanished,
    DampingExhausted,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "MaxEpochs",
            StopReason::ValidationPatience => "ValidationPatience",
            StopReason::GradientVanished => "GradientVanished",
            StopReason::DampingExhausted => "DampingExhausted",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            StopReason::MaxEpochs,
            StopReason::ValidationPatience,
            StopReason::GradientVanished,
            StopReason::DampingExhausted,
        ]
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| Error::Parse(format!("unknown stop reason {s:?}")))
    }
}

/// Training trajectory. Index 0 holds the costs of the initial parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub method: TrainMethod,
    pub train_cost: Vec<f64>,
    pub val_cost: Vec<f64>,
    pub best_epoch: usize,
    pub accepted_steps: usize,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// Epochs run after the initial evaluation.
    pub fn epochs(&self) -> usize {
        self.train_cost.len() - 1
    }

    pub fn best_val_cost(&self) -> f64 {
        self.val_cost[self.best_epoch]
    }

    pub fn to_text(&self) -> String {
        let mut w = TextWriter::new(REPORT_FORMAT, REPORT_VERSION);
        w.field("method", self.method)
            .field("epochs", self.epochs())
            .field("best_epoch", self.best_epoch)
            .field("accepted_steps", self.accepted_steps)
            .field("stop_reason", self.stop_reason)
            .f64s("train_cost", &self.train_cost)
            .f64s("val_cost", &self.val_cost);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let f = TextFields::parse(text, REPORT_FORMAT, REPORT_VERSION)?;
        let report = Self {
            method: f.str("method")?.parse()?,
            train_cost: f.f64s("train_cost")?,
            val_cost: f.f64s("val_cost")?,
            best_epoch: f.usize("best_epoch")?,
            accepted_steps: f.usize("accepted_steps")?,
            stop_reason: f.str("stop_reason")?.parse()?,
        };
        let n = report.train_cost.len();
        if n == 0 || report.val_cost.len() != n || f.usize("epochs")? + 1 != n || report.best_epoch >= n {
            return Err(Error::CorruptModel("inconsistent training report".into()));
        }
        Ok(report)
    }
}

/// Patience counter over validation costs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    fails: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            fails: 0,
        }
    }

    /// Records one validation cost. Returns true when it is a new best.
    /// A cost equal to the best is neutral: a rejected step leaves the
    /// parameters unchanged and is not counted as a failed check.
    pub fn observe(&mut self, epoch: usize, val_cost: f64) -> bool {
        if val_cost < self.best {
            self.best = val_cost;
            self.best_epoch = epoch;
            self.fails = 0;
            true
        } else {
            if !(val_cost == self.best) {
                self.fails += 1;
            }
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.fails >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Bookkeeping shared by both trainers: cost history, early stopping and
/// the best-validation parameter snapshot.
struct Tracker<'a, M> {
    val_x: &'a [Vec<f64>],
    val_y: &'a [f64],
    early: EarlyStopping,
    best_params: Vec<f64>,
    train_cost: Vec<f64>,
    val_cost: Vec<f64>,
    accepted: usize,
    _model: std::marker::PhantomData<M>,
}

impl<'a, M: Regressor> Tracker<'a, M> {
    fn new(model: &M, train_cost: f64, val_x: &'a [Vec<f64>], val_y: &'a [f64], patience: usize) -> Self {
        let mut t = Self {
            val_x,
            val_y,
            early: EarlyStopping::new(patience),
            best_params: model.params(),
            train_cost: Vec::new(),
            val_cost: Vec::new(),
            accepted: 0,
            _model: std::marker::PhantomData,
        };
        t.record(model, train_cost, true);
        t
    }

    /// Logs an epoch; `changed` is false when the parameters did not move,
    /// which lets the validation cost be reused.
    fn record(&mut self, model: &M, train_cost: f64, changed: bool) {
        let val = match (changed, self.val_cost.last()) {
            (false, Some(v)) => *v,
            _ => cost_unchecked(model, self.val_x, self.val_y),
        };
        let epoch = self.train_cost.len();
        self.train_cost.push(train_cost);
        self.val_cost.push(val);
        if self.early.observe(epoch, val) {
            self.best_params = model.params();
        }
    }

    fn finish(self, mut model: M, method: TrainMethod, stop_reason: StopReason) -> (M, TrainReport) {
        model.set_params(&self.best_params);
        let report = TrainReport {
            method,
            train_cost: self.train_cost,
            val_cost: self.val_cost,
            best_epoch: self.early.best_epoch(),
            accepted_steps: self.accepted,
            stop_reason,
        };
        (model, report)
    }
}

fn check_inputs<M: Regressor>(
    model: &M,
    train: (&[Vec<f64>], &[f64]),
    val: (&[Vec<f64>], &[f64]),
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    check_batch(model, train.0, train.1)?;
    check_batch(model, val.0, val.1)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dispatches on `cfg.method`.
pub fn train<M: Regressor>(
    model: M,
    train: (&[Vec<f64>], &[f64]),
    val: (&[Vec<f64>], &[f64]),
    cfg: &TrainConfig,
) -> Result<(M, TrainReport)> {
    match cfg.method {
        TrainMethod::Lm => train_lm(model, train, val, cfg),
        TrainMethod::Scg => train_scg(model, train, val, cfg),
    }
}

/// Damped Gauss-Newton step `-(J^T J + mu I)^{-1} J^T e`. With fewer rows
/// than parameters the equivalent `-J^T (J J^T + mu I)^{-1} e` is cheaper.
enum LmSystem {
    Primal {
        jtj: DMatrix<f64>,
        jte: DVector<f64>,
    },
    Dual {
        j: DMatrix<f64>,
        jjt: DMatrix<f64>,
        e: DVector<f64>,
    },
}

impl LmSystem {
    fn build(j: DMatrix<f64>, e: Vec<f64>) -> Self {
        let e = DVector::from_vec(e);
        if j.nrows() < j.ncols() {
            let jjt = &j * j.transpose();
            LmSystem::Dual { j, jjt, e }
        } else {
            let jt = j.transpose();
            LmSystem::Primal {
                jtj: &jt * &j,
                jte: jt * e,
            }
        }
    }

    fn step(&self, mu: f64) -> Option<DVector<f64>> {
        match self {
            LmSystem::Primal { jtj, jte } => {
                let mut a = jtj.clone();
                a.set_diagonal(&(a.diagonal().add_scalar(mu)));
                let chol = a.cholesky()?;
                Some(-chol.solve(jte))
            }
            LmSystem::Dual { j, jjt, e } => {
                let mut a = jjt.clone();
                a.set_diagonal(&(a.diagonal().add_scalar(mu)));
                let chol = a.cholesky()?;
                Some(-(j.transpose() * chol.solve(e)))
            }
        }
    }
}

pub fn train_lm<M: Regressor>(
    mut model: M,
    train: (&[Vec<f64>], &[f64]),
    val: (&[Vec<f64>], &[f64]),
    cfg: &TrainConfig,
) -> Result<(M, TrainReport)> {
    check_inputs(&model, train, val, cfg)?;
    let (xs, ys) = train;
    let c = xs.len() as f64;
    let mut cost = cost_unchecked(&model, xs, ys);
    let mut tracker = Tracker::new(&model, cost, val.0, val.1, cfg.patience);
    let mut mu = cfg.lm.mu0;
    let mut params = model.params();

    let mut stop = StopReason::MaxEpochs;
    'epochs: for _ in 0..cfg.max_epochs {
        let (j, e) = jacobian_unchecked(&model, xs, ys);
        let grad_norm = (j.transpose() * DVector::from_column_slice(&e)).norm() / c;
        if grad_norm < cfg.min_grad {
            stop = StopReason::GradientVanished;
            break;
        }
        let system = LmSystem::build(j, e);
        loop {
            let trial_cost = system.step(mu).map(|delta| {
                let trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
                let mut candidate = model.clone();
                candidate.set_params(&trial);
                (cost_unchecked(&candidate, xs, ys), trial)
            });
            match trial_cost {
                Some((new_cost, trial)) if new_cost < cost => {
                    params = trial;
                    model.set_params(&params);
                    cost = new_cost;
                    mu /= cfg.lm.factor;
                    tracker.accepted += 1;
                    break;
                }
                _ => {
                    mu *= cfg.lm.factor;
                    if mu > cfg.lm.mu_max {
                        if tracker.accepted == 0 {
                            return Err(Error::DampingExhausted(mu));
                        }
                        stop = StopReason::DampingExhausted;
                        break 'epochs;
                    }
                }
            }
        }
        tracker.record(&model, cost, true);
        if tracker.early.should_stop() {
            stop = StopReason::ValidationPatience;
            break;
        }
    }
    Ok(tracker.finish(model, TrainMethod::Lm, stop))
}

/// Moller's scaled conjugate gradient; one iteration per epoch.
pub fn train_scg<M: Regressor>(
    mut model: M,
    train: (&[Vec<f64>], &[f64]),
    val: (&[Vec<f64>], &[f64]),
    cfg: &TrainConfig,
) -> Result<(M, TrainReport)> {
    check_inputs(&model, train, val, cfg)?;
    let (xs, ys) = train;
    let eval = |m: &M, p: &[f64]| {
        let mut probe = m.clone();
        probe.set_params(p);
        cost_and_gradient(&probe, xs, ys)
    };

    let mut x = model.params();
    let n = x.len();
    let (mut f_old, mut grad_new) = cost_and_gradient(&model, xs, ys);
    let g0 = norm(&grad_new);
    if g0 < cfg.min_grad {
        return Err(Error::GradientVanished(g0));
    }
    let mut tracker = Tracker::new(&model, f_old, val.0, val.1, cfg.patience);

    let mut grad_old = grad_new.clone();
    let mut d: Vec<f64> = grad_new.iter().map(|g| -g).collect();
    let mut success = true;
    let mut n_success = 0usize;
    let mut beta = cfg.scg.lambda0;
    let (beta_min, beta_max) = (1e-15, 1e100);
    let (mut mu, mut kappa, mut theta) = (0.0, 0.0, 0.0);

    let mut stop = StopReason::MaxEpochs;
    for _ in 0..cfg.max_epochs {
        if success {
            mu = dot(&d, &grad_new);
            if mu >= 0.0 {
                d = grad_new.iter().map(|g| -g).collect();
                mu = dot(&d, &grad_new);
            }
            kappa = dot(&d, &d);
            if kappa < f64::EPSILON {
                stop = StopReason::GradientVanished;
                break;
            }
            let sigma = cfg.scg.sigma / kappa.sqrt();
            let x_plus: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + sigma * b).collect();
            let (_, g_plus) = eval(&model, &x_plus);
            theta = d
                .iter()
                .zip(g_plus.iter().zip(&grad_new))
                .map(|(di, (gp, gn))| di * (gp - gn))
                .sum::<f64>()
                / sigma;
        }

        let mut delta = theta + beta * kappa;
        if delta <= 0.0 {
            delta = beta * kappa;
            beta -= theta / kappa;
        }
        let alpha = -mu / delta;
        let x_new: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
        let mut probe = model.clone();
        probe.set_params(&x_new);
        let f_new = cost_unchecked(&probe, xs, ys);

        let ratio = 2.0 * (f_new - f_old) / (alpha * mu);
        let ratio = if ratio.is_finite() { ratio } else { f64::NEG_INFINITY };
        if ratio >= 0.0 && f_new <= f_old {
            success = true;
            n_success += 1;
            x = x_new;
            model.set_params(&x);
            f_old = f_new;
            tracker.accepted += 1;
        } else {
            success = false;
        }

        if ratio < 0.25 {
            beta = (4.0 * beta).min(beta_max);
        }
        if ratio > 0.75 {
            beta = (0.5 * beta).max(beta_min);
        }

        if success {
            grad_old = std::mem::replace(&mut grad_new, cost_and_gradient(&model, xs, ys).1);
        }
        tracker.record(&model, f_old, success);
        if tracker.early.should_stop() {
            stop = StopReason::ValidationPatience;
            break;
        }
        if success && norm(&grad_new) < cfg.min_grad {
            stop = StopReason::GradientVanished;
            break;
        }

        if n_success == n {
            d = grad_new.iter().map(|g| -g).collect();
            n_success = 0;
        } else if success {
            let gamma = grad_old.iter().zip(&grad_new).map(|(o, g)| (o - g) * g).sum::<f64>() / mu;
            d = d.iter().zip(&grad_new).map(|(di, g)| gamma * di - g).collect();
        }
    }
    Ok(tracker.finish(model, TrainMethod::Scg, stop))
}
