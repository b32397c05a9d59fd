//! Projected ascent loops: full-gradient ascent (FGD), stochastic gradient
//! ascent (SGD), Nesterov-accelerated SGD (ASGD) and ASGD with
//! gradient-based restart (rASGD).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::gradients::GradientSource;
use crate::linalg::{all_finite, Vector};
use crate::models::Bounds;
use crate::rng::{tags, StreamKey};

/// Positive root of `l1^2 = (1 - l1) l^2 + q l1`.
pub fn lambda_next(lambda: f64, q: f64) -> f64 {
    let b = lambda * lambda - q;
    (-b + (b * b + 4.0 * lambda * lambda).sqrt()) / 2.0
}

/// Momentum coefficient `l (1 - l) / (l^2 + l1)`.
pub fn gamma_next(lambda: f64, lambda_next: f64) -> f64 {
    lambda * (1.0 - lambda) / (lambda * lambda + lambda_next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fgd,
    Sgd,
    Asgd,
    Rasgd,
}

impl Method {
    pub fn accelerated(self) -> bool {
        matches!(self, Self::Asgd | Self::Rasgd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// `alpha_k = alpha_0 / sqrt(k + 1)`, `k = 0, 1, ...`
    InvSqrt,
}

impl Schedule {
    pub fn alpha(self, alpha0: f64, k: usize) -> f64 {
        match self {
            Self::Constant => alpha0,
            Self::InvSqrt => alpha0 / ((k + 1) as f64).sqrt(),
        }
    }
}

/// When rASGD resets its momentum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartPolicy {
    /// Restart when the gradient opposes the last displacement.
    #[default]
    Gradient,
    /// Restart every iteration (degenerates to SGD; used in tests).
    Always,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub alpha0: f64,
    /// Momentum parameter for ASGD; rASGD always uses 0.
    #[serde(default)]
    pub q: f64,
    /// Defaults to constant for FGD and inverse square root otherwise.
    #[serde(default)]
    pub schedule: Option<Schedule>,
    pub max_iters: usize,
    #[serde(default)]
    pub max_ncfm: Option<u64>,
    /// Known optimum; the run stops once an iterate is within `tol` of it.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub restart: RestartPolicy,
    /// Keep every `trace_every`-th row (plus the last one).
    #[serde(default = "one")]
    pub trace_every: usize,
}

fn one() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-2
}

impl OptimizerConfig {
    pub fn new(method: Method, alpha0: f64, max_iters: usize) -> Self {
        Self {
            method,
            alpha0,
            q: 0.0,
            schedule: None,
            max_iters,
            max_ncfm: None,
            target: None,
            tol: default_tol(),
            restart: RestartPolicy::default(),
            trace_every: 1,
        }
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule.unwrap_or(match self.method {
            Method::Fgd => Schedule::Constant,
            _ => Schedule::InvSqrt,
        })
    }

    /// Effective momentum parameter.
    pub fn q(&self) -> f64 {
        match self.method {
            Method::Rasgd => 0.0,
            _ => self.q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return Err(OedError::Config(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(OedError::Config(format!("q must lie in [0, 1], got {}", self.q)));
        }
        if self.method == Method::Fgd && self.schedule() != Schedule::Constant {
            return Err(OedError::Config("fgd uses a constant step size".into()));
        }
        if self.trace_every == 0 {
            return Err(OedError::Config("trace_every must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(OedError::Config(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Nesterov momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub lambda: f64,
    pub z_prev: Vector,
    pub restart_count: usize,
}

impl MomentumState {
    pub fn new(xi0: &Vector) -> Self {
        Self {
            lambda: 1.0,
            z_prev: xi0.clone(),
            restart_count: 0,
        }
    }

    /// Drop the momentum: the next extrapolation coefficient is zero.
    pub fn restart(&mut self) {
        self.lambda = 1.0;
        self.restart_count += 1;
    }
}

/// One projected ascent step from `xi` along `grad`. Returns the new iterate
/// and the momentum coefficient that was applied.
pub fn step(
    method: Method,
    state: &mut MomentumState,
    xi: &Vector,
    grad: &Vector,
    alpha: f64,
    q: f64,
    bounds: &Bounds,
) -> (Vector, f64) {
    let z = bounds.project(&(xi + grad * alpha));
    if !method.accelerated() {
        return (z, 0.0);
    }
    let lambda1 = lambda_next(state.lambda, q);
    let gamma = gamma_next(state.lambda, lambda1);
    // Skipping the zero extrapolation keeps q = 1 bitwise equal to SGD.
    let next = if gamma == 0.0 {
        z.clone()
    } else {
        bounds.project(&(&z + (&z - &state.z_prev) * gamma))
    };
    state.z_prev = z;
    state.lambda = lambda1;
    (next, gamma)
}

/// `G . (xi_k - xi_{k-1}) < 0`.
pub fn restart_check(grad: &Vector, xi: &Vector, xi_prev: &Vector) -> bool {
    grad.dot(&(xi - xi_prev)) < 0.0
}

/// Step-size weighted mean of `xis[i]` over `ceil(k/2) <= i <= k`.
pub fn sliding_average(xis: &[Vector], alphas: &[f64], k: usize) -> Vector {
    let lo = k.div_ceil(2);
    let mut num = Vector::zeros(xis[k].len());
    let mut den = 0.0;
    for i in lo..=k {
        num += &xis[i] * alphas[i];
        den += alphas[i];
    }
    num / den
}

/// Running form of [`sliding_average`] that keeps only the iterates still
/// inside the window.
struct SlidingWindow {
    items: VecDeque<(Vector, f64)>,
    num: Vector,
    den: f64,
}

impl SlidingWindow {
    fn new(dim: usize) -> Self {
        Self {
            items: VecDeque::new(),
            num: Vector::zeros(dim),
            den: 0.0,
        }
    }

    /// Append iterate `k` and drop everything below `ceil(k/2)`.
    fn push(&mut self, xi: &Vector, alpha: f64, k: usize) {
        self.num += xi * alpha;
        self.den += alpha;
        self.items.push_back((xi.clone(), alpha));
        while self.items.len() > k - k.div_ceil(2) + 1 {
            let (x, a) = self.items.pop_front().expect("window is non-empty");
            self.num -= x * a;
            self.den -= a;
        }
    }

    fn value(&self) -> Vector {
        &self.num / self.den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub xi: Vec<f64>,
    pub xibar: Vec<f64>,
    pub alpha: f64,
    /// Momentum coefficient of the step taken from `xi` (NaN if none).
    pub gamma: f64,
    pub restart: bool,
    /// Norm of the gradient estimate at `xi` (NaN if none was drawn).
    pub grad_norm: f64,
    /// Model calls spent before reaching `xi`.
    pub ncfm: u64,
    /// Single-sample gradients spent before reaching `xi`.
    pub grad_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum RunStatus {
    /// An iterate came within `tol` of the target.
    Converged,
    MaxIters,
    Budget,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    pub final_xi: Vec<f64>,
    pub final_xibar: Vec<f64>,
    pub iterations: usize,
    pub restarts: usize,
    pub ncfm: u64,
    pub grad_evals: u64,
}

impl OptimizerTrace {
    /// Model calls spent up to the first recorded iterate within `tol` of
    /// `target`.
    pub fn ncfm_to_reach(&self, target: &[f64], tol: f64) -> Option<u64> {
        self.first_within(target, tol).map(|r| r.ncfm)
    }

    pub fn grad_evals_to_reach(&self, target: &[f64], tol: f64) -> Option<u64> {
        self.first_within(target, tol).map(|r| r.grad_evals)
    }

    fn first_within(&self, target: &[f64], tol: f64) -> Option<&TraceRow> {
        self.rows.iter().find(|r| distance(&r.xi, target) <= tol)
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Maximize from `xi0`, drawing iteration `k`'s gradient from the stream
/// `key.child(OPTIMIZER).child(k)`. Gradient or model failures end the run
/// with [`RunStatus::Failed`] instead of an error, so the partial trace
/// survives.
pub fn run(
    source: &dyn GradientSource,
    cfg: &OptimizerConfig,
    xi0: &Vector,
    key: StreamKey,
) -> Result<OptimizerTrace> {
    cfg.validate()?;
    let bounds = source.bounds();
    if xi0.len() != source.dim() || !bounds.contains(xi0) {
        return Err(OedError::Config(format!(
            "initial design {:?} is not inside the design box",
            xi0.as_slice()
        )));
    }
    if let Some(t) = &cfg.target {
        if t.len() != source.dim() {
            return Err(OedError::Config("target has the wrong dimension".into()));
        }
    }
    let schedule = cfg.schedule();
    let q = cfg.q();
    let stream = key.child(tags::OPTIMIZER);

    let mut state = MomentumState::new(xi0);
    let mut xi = xi0.clone();
    let mut xi_prev = xi0.clone();
    let mut rows: Vec<TraceRow> = Vec::new();
    let (mut ncfm, mut grad_evals) = (0u64, 0u64);
    let mut status = RunStatus::MaxIters;
    let mut k = 0;
    let mut window = SlidingWindow::new(xi0.len());

    loop {
        let alpha = schedule.alpha(cfg.alpha0, k);
        window.push(&xi, alpha, k);
        // The average is a convex combination of feasible points; projecting
        // only removes rounding that can land it a few ulps outside the box.
        let mut current = TraceRow {
            k,
            xi: xi.iter().copied().collect(),
            xibar: bounds.project(&window.value()).iter().copied().collect(),
            alpha,
            gamma: f64::NAN,
            restart: false,
            grad_norm: f64::NAN,
            ncfm,
            grad_evals,
        };
        if let Some(t) = &cfg.target {
            if distance(xi.as_slice(), t) <= cfg.tol {
                status = RunStatus::Converged;
                rows.push(current);
                break;
            }
        }
        if k >= cfg.max_iters {
            rows.push(current);
            break;
        }
        if cfg.max_ncfm.is_some_and(|b| ncfm >= b) {
            status = RunStatus::Budget;
            rows.push(current);
            break;
        }

        let est = match source.estimate(&xi, stream.child(k as u64)) {
            Ok(e) => e,
            Err(e) => {
                status = RunStatus::Failed(e.to_string());
                rows.push(current);
                break;
            }
        };
        if !all_finite(&est.grad) {
            status = RunStatus::Failed(OedError::NonFiniteGradient { iteration: k }.to_string());
            rows.push(current);
            break;
        }
        ncfm += est.ncfm;
        grad_evals += est.grad_evals;

        let restart = cfg.method == Method::Rasgd
            && k > 0
            && match cfg.restart {
                RestartPolicy::Gradient => restart_check(&est.grad, &xi, &xi_prev),
                RestartPolicy::Always => true,
            };
        if restart {
            state.restart();
        }
        let (next, gamma) = step(cfg.method, &mut state, &xi, &est.grad, alpha, q, &bounds);
        debug_assert!(bounds.contains(&next));

        current.gamma = gamma;
        current.restart = restart;
        current.grad_norm = est.grad.norm();
        if k % cfg.trace_every == 0 {
            rows.push(current);
        }

        xi_prev = std::mem::replace(&mut xi, next);
        k += 1;
    }

    let last = rows.last().expect("trace has at least one row");
    Ok(OptimizerTrace {
        final_xi: last.xi.clone(),
        final_xibar: last.xibar.clone(),
        iterations: k,
        restarts: state.restart_count,
        ncfm,
        grad_evals,
        status,
        rows,
    })
}
