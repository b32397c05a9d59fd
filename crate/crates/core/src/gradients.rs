//! Stochastic gradients of the expected information gain with respect to the
//! design.
//!
//! SG_MC and SG_MCIS differentiate the single-sample log-ratio
//! `log p(Y|theta) - log evidence(Y)` by finite differences in `xi` with all
//! randomness frozen: `theta`, the noise `eps`, the inner samples and (for
//! SG_MCIS) the Laplace proposal. The data move with the design,
//! `Y(xi') = g(xi', theta) + eps`, so the numerator only sees `eps` and is
//! the same number at every stencil point.
//!
//! SG_LA is the exact design derivative of the Laplace integrand
//! `-1/2 log det(2 pi Sigma(xi, theta))`, built from the mixed Jacobian.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{laplace_from_jacobian, BayesProblem, LaplaceFit, NelderMeadConfig};
use crate::error::{OedError, Result};
use crate::estimators::{laplace_proposal, log_mean_exp, outer_sample, Proposal, MAX_REJECTIONS};
use crate::linalg::{check_len, Matrix, Vector};
use crate::models::{
    cross_jac, jac_xi, Bounds, Example1Quadratic, FdMode, FdScheme, ForwardModel,
};
use crate::rng::{tags, StreamKey};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    SgMc,
    SgLa,
    SgMcis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientConfig {
    pub kind: GradientKind,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default = "one")]
    pub m_inner: usize,
    #[serde(default)]
    pub fd_scheme: FdScheme,
    #[serde(default)]
    pub nelder_mead: NelderMeadConfig,
    #[serde(default)]
    pub proposal: Proposal,
    /// Keep every per-sample gradient in the estimate.
    #[serde(default)]
    pub keep_samples: bool,
}

fn one() -> usize {
    1
}

impl GradientConfig {
    pub fn new(kind: GradientKind, batch: usize, m_inner: usize) -> Self {
        Self {
            kind,
            batch,
            m_inner,
            fd_scheme: FdScheme::default(),
            nelder_mead: NelderMeadConfig::default(),
            proposal: Proposal::default(),
            keep_samples: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(OedError::Config("gradient batch must be at least 1".into()));
        }
        if self.kind != GradientKind::SgLa && self.m_inner == 0 {
            return Err(OedError::Config("m_inner must be at least 1".into()));
        }
        self.fd_scheme.validate()
    }

    /// Model calls per sample for the fixed-cost kinds in forward mode;
    /// SG_MCIS adds the realized MAP cost on top of this.
    pub fn forward_cost_per_sample(&self, dim_xi: usize, dim_theta: usize) -> u64 {
        let (p, d, m) = (dim_xi as u64, dim_theta as u64, self.m_inner as u64);
        match self.kind {
            GradientKind::SgMc => (p + 1) * (m + 1),
            GradientKind::SgLa => (p + 1) * (d + 1),
            GradientKind::SgMcis => (d + 1) + (p + 1) * m + (p + 1),
        }
    }
}

/// One single-sample gradient.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub grad: Vector,
    pub ncfm: u64,
    pub fallback: bool,
    pub rejections: usize,
    /// Log-likelihood numerator at every stencil point (pathwise kinds).
    pub numerators: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Ascent direction for the information gain.
    pub grad: Vector,
    /// Forward-model calls consumed.
    pub ncfm: u64,
    /// Number of single-sample gradients averaged.
    pub grad_evals: u64,
    pub fallbacks: usize,
    pub rejections: usize,
    pub per_sample: Option<Vec<Vector>>,
}

impl GradientEstimate {
    fn from_samples(samples: Vec<GradientSample>, keep: bool) -> Result<Self> {
        let b = samples.len();
        let dim = samples.first().map_or(0, |s| s.grad.len());
        let mut grad = Vector::zeros(dim);
        for s in &samples {
            grad += &s.grad;
        }
        grad /= b as f64;
        Ok(Self {
            ncfm: samples.iter().map(|s| s.ncfm).sum(),
            grad_evals: b as u64,
            fallbacks: samples.iter().filter(|s| s.fallback).count(),
            rejections: samples.iter().map(|s| s.rejections).sum(),
            per_sample: keep.then(|| samples.into_iter().map(|s| s.grad).collect()),
            grad,
        })
    }
}

/// Finite-difference gradient of `f` at `xi`; `f` receives each stencil point.
fn fd_gradient<F>(xi: &Vector, scheme: &FdScheme, mut f: F) -> Result<Vector>
where
    F: FnMut(&Vector) -> Result<f64>,
{
    let n = xi.len();
    let mut grad = Vector::zeros(n);
    match scheme.mode {
        FdMode::Forward => {
            let f0 = f(xi)?;
            for s in 0..n {
                let mut xp = xi.clone();
                let (v, h) = scheme.perturb(xi[s], 1.0);
                xp[s] = v;
                grad[s] = (f(&xp)? - f0) / h;
            }
        }
        FdMode::Central => {
            for s in 0..n {
                let (mut xp, mut xm) = (xi.clone(), xi.clone());
                let (vp, hp) = scheme.perturb(xi[s], 1.0);
                let (vm, hm) = scheme.perturb(xi[s], -1.0);
                xp[s] = vp;
                xm[s] = vm;
                grad[s] = (f(&xp)? - f(&xm)?) / (hp + hm);
            }
        }
    }
    Ok(grad)
}

/// A frozen inner sample: parameter and log importance weight
/// `log pi - log q` (zero for prior draws, `-inf` outside the support).
struct InnerSample {
    theta: Vector,
    log_weight: f64,
}

/// Pathwise FD gradient of `log p(Y|theta) - log mean_m w_m p(Y|theta*_m)`.
fn pathwise_log_ratio_gradient(
    problem: &BayesProblem,
    xi: &Vector,
    theta: &Vector,
    eps: &Matrix,
    base_g: &Vector,
    inner: &[InnerSample],
    scheme: &FdScheme,
) -> Result<(Vector, u64, Vec<f64>)> {
    let mut calls = 0u64;
    let mut numerators = Vec::new();
    let grad = fd_gradient(xi, scheme, |x| {
        let g = if x == xi {
            base_g.clone()
        } else {
            calls += 1;
            problem.model.eval(x, theta)?
        };
        let y = problem.observations_from(&g, eps);
        let numerator = problem.log_likelihood_of_residuals(eps);
        numerators.push(numerator);
        let mut terms = Vec::with_capacity(inner.len());
        for s in inner {
            if s.log_weight == f64::NEG_INFINITY {
                terms.push(f64::NEG_INFINITY);
                continue;
            }
            calls += 1;
            let gs = problem.model.eval(x, &s.theta)?;
            terms.push(problem.log_likelihood_given(&y, &gs) + s.log_weight);
        }
        Ok(numerator - log_mean_exp(&terms))
    })?;
    Ok((grad, calls, numerators))
}

fn prior_inner(problem: &BayesProblem, key: StreamKey, s: u64, m: usize) -> Vec<InnerSample> {
    let mut rng = key.child(tags::SG_MC).rng(s);
    (0..m)
        .map(|_| InnerSample {
            theta: problem.prior.sample(&mut rng),
            log_weight: 0.0,
        })
        .collect()
}

fn sg_mc_sample(problem: &BayesProblem, xi: &Vector, cfg: &GradientConfig, key: StreamKey, s: u64) -> Result<GradientSample> {
    let outer = outer_sample(problem, xi, key, s)?;
    let inner = prior_inner(problem, key, s, cfg.m_inner);
    let (grad, calls, numerators) =
        pathwise_log_ratio_gradient(problem, xi, &outer.theta, &outer.eps, &outer.g, &inner, &cfg.fd_scheme)?;
    Ok(GradientSample {
        grad,
        ncfm: 1 + calls,
        fallback: false,
        rejections: 0,
        numerators,
    })
}

fn sg_mcis_sample(problem: &BayesProblem, xi: &Vector, cfg: &GradientConfig, key: StreamKey, s: u64) -> Result<GradientSample> {
    let outer = outer_sample(problem, xi, key, s)?;
    let mut ncfm = 1u64;
    let (fit, fallback) = match cfg.proposal {
        Proposal::Prior => (None, false),
        Proposal::Laplace => {
            let (fit, c) = laplace_proposal(problem, xi, &outer.y, &cfg.nelder_mead, &cfg.fd_scheme)?;
            ncfm += c;
            let fb = fit.is_none();
            (fit, fb)
        }
    };
    let inner = match &fit {
        Some(fit) => laplace_inner(problem, fit, key, s, cfg.m_inner),
        None => prior_inner(problem, key, s, cfg.m_inner),
    };
    let (grad, calls, numerators) =
        pathwise_log_ratio_gradient(problem, xi, &outer.theta, &outer.eps, &outer.g, &inner, &cfg.fd_scheme)?;
    Ok(GradientSample {
        grad,
        ncfm: ncfm + calls,
        fallback,
        rejections: 0,
        numerators,
    })
}

fn laplace_inner(problem: &BayesProblem, fit: &LaplaceFit, key: StreamKey, s: u64, m: usize) -> Vec<InnerSample> {
    let mut rng = key.child(tags::SG_MCIS).rng(s);
    (0..m)
        .map(|_| {
            let theta = fit.sample(&mut rng);
            let lp = problem.prior.logpdf(&theta);
            let log_weight = if lp == f64::NEG_INFINITY {
                lp
            } else {
                lp - fit.logpdf(&theta)
            };
            InnerSample { theta, log_weight }
        })
        .collect()
}

/// `-1/2 log det(2 pi Sigma) - d/2 - log pi(theta)` at a given `theta`.
pub fn mcla_integrand(problem: &BayesProblem, xi: &Vector, theta: &Vector, scheme: &FdScheme) -> Result<f64> {
    let fit = crate::bayes::laplace_covariance(problem, xi, theta, scheme)?;
    Ok(fit.neg_half_logdet_2pi() - 0.5 * problem.dim_theta() as f64 - problem.prior.logpdf(theta))
}

/// Design gradient of [`mcla_integrand`] at a fixed `theta`:
/// `N_e tr(Sigma C_s^T Sigma_eps^-1 J)` for each design coordinate `s`,
/// where `C_s` is the mixed derivative slice. Returns the gradient, the fit
/// and the model calls spent.
pub fn la_gradient_at(
    problem: &BayesProblem,
    xi: &Vector,
    theta: &Vector,
    scheme: &FdScheme,
) -> Result<(Vector, LaplaceFit, u64)> {
    let cj = cross_jac(&problem.model, xi, theta, scheme)?;
    let calls = scheme.cross_cost(problem.dim_xi(), problem.dim_theta());
    let fit = laplace_from_jacobian(problem, theta, &cj.jac_theta)?;
    let wj = &problem.noise.cov.inverse * &cj.jac_theta;
    let ne = problem.n_exp as f64;
    let grad = Vector::from_iterator(
        cj.cross.len(),
        cj.cross
            .iter()
            .map(|c| ne * (&fit.cov * (c.transpose() * &wj)).trace()),
    );
    Ok((grad, fit, calls))
}

fn sg_la_sample(problem: &BayesProblem, xi: &Vector, cfg: &GradientConfig, key: StreamKey, s: u64) -> Result<GradientSample> {
    let mut rng = key.child(tags::OUTER).rng(s);
    let cost = cfg.fd_scheme.cross_cost(problem.dim_xi(), problem.dim_theta());
    let mut rejections = 0;
    loop {
        let theta = problem.prior.sample(&mut rng);
        match la_gradient_at(problem, xi, &theta, &cfg.fd_scheme) {
            Ok((grad, _, calls)) => {
                return Ok(GradientSample {
                    grad,
                    ncfm: calls + rejections as u64 * cost,
                    fallback: false,
                    rejections,
                    numerators: Vec::new(),
                })
            }
            Err(OedError::SingularFit(msg)) => {
                rejections += 1;
                if rejections > MAX_REJECTIONS {
                    return Err(OedError::SingularFit(format!(
                        "{MAX_REJECTIONS} consecutive redraws failed; last: {msg}"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Single-sample gradient number `s` of the stream `key`.
pub fn gradient_sample(
    problem: &BayesProblem,
    xi: &Vector,
    cfg: &GradientConfig,
    key: StreamKey,
    s: u64,
) -> Result<GradientSample> {
    match cfg.kind {
        GradientKind::SgMc => sg_mc_sample(problem, xi, cfg, key, s),
        GradientKind::SgLa => sg_la_sample(problem, xi, cfg, key, s),
        GradientKind::SgMcis => sg_mcis_sample(problem, xi, cfg, key, s),
    }
}

/// Mini-batch average of `cfg.batch` single-sample gradients.
pub fn stochastic_gradient(
    problem: &BayesProblem,
    xi: &Vector,
    cfg: &GradientConfig,
    key: StreamKey,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    check_len("design", problem.dim_xi(), xi.len())?;
    let samples = (0..cfg.batch as u64)
        .into_par_iter()
        .map(|s| gradient_sample(problem, xi, cfg, key, s))
        .collect::<Result<Vec<_>>>()?;
    GradientEstimate::from_samples(samples, cfg.keep_samples)
}

pub fn sg_mc(problem: &BayesProblem, xi: &Vector, cfg: &GradientConfig, key: StreamKey) -> Result<GradientEstimate> {
    stochastic_gradient(problem, xi, &GradientConfig { kind: GradientKind::SgMc, ..cfg.clone() }, key)
}

pub fn sg_la(problem: &BayesProblem, xi: &Vector, cfg: &GradientConfig, key: StreamKey) -> Result<GradientEstimate> {
    stochastic_gradient(problem, xi, &GradientConfig { kind: GradientKind::SgLa, ..cfg.clone() }, key)
}

pub fn sg_mcis(problem: &BayesProblem, xi: &Vector, cfg: &GradientConfig, key: StreamKey) -> Result<GradientEstimate> {
    stochastic_gradient(problem, xi, &GradientConfig { kind: GradientKind::SgMcis, ..cfg.clone() }, key)
}

/// Gradient of the `N`-sample estimator, i.e. a batch of size `N`.
pub fn full_gradient(
    problem: &BayesProblem,
    xi: &Vector,
    kind: GradientKind,
    n: usize,
    m: usize,
    key: StreamKey,
) -> Result<GradientEstimate> {
    stochastic_gradient(problem, xi, &GradientConfig::new(kind, n, m), key)
}

/// `-1/2 tr(Sigma^-1 dSigma_s)` for each design coordinate.
pub fn trace_form(sigma: &Matrix, dsigma: &[Matrix]) -> Result<Vector> {
    let inv = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| OedError::Numerical("covariance is not positive definite".into()))?
        .inverse();
    Ok(Vector::from_iterator(
        dsigma.len(),
        dsigma.iter().map(|d| -0.5 * (&inv * d).trace()),
    ))
}

/// `-sum_k dsigma_k / sigma_k`, where `sigma_k^2` are the eigenvalues of
/// `Sigma` and `d(sigma_k^2) = v_k^T dSigma v_k`.
pub fn eigen_form(sigma: &Matrix, dsigma: &[Matrix]) -> Vector {
    let eig = sigma.clone().symmetric_eigen();
    Vector::from_iterator(
        dsigma.len(),
        dsigma.iter().map(|d| {
            (0..eig.eigenvalues.len())
                .map(|k| {
                    let v = eig.eigenvectors.column(k);
                    let dvar = (v.transpose() * d * v)[(0, 0)];
                    let sd = eig.eigenvalues[k].sqrt();
                    // d(sigma_k) = d(sigma_k^2) / (2 sigma_k)
                    -(dvar / (2.0 * sd)) / sd
                })
                .sum::<f64>()
        }),
    )
}

/// Anything the optimizers can draw ascent directions from.
pub trait GradientSource: Send + Sync {
    fn dim(&self) -> usize;
    fn bounds(&self) -> Bounds;
    /// Gradient estimate for one iteration, using only the stream `key`.
    fn estimate(&self, xi: &Vector, key: StreamKey) -> Result<GradientEstimate>;
}

/// Information-gain gradients of a Bayesian design problem.
#[derive(Debug, Clone)]
pub struct OedGradient {
    pub problem: BayesProblem,
    pub config: GradientConfig,
}

impl GradientSource for OedGradient {
    fn dim(&self) -> usize {
        self.problem.dim_xi()
    }
    fn bounds(&self) -> Bounds {
        self.problem.model.bounds()
    }
    fn estimate(&self, xi: &Vector, key: StreamKey) -> Result<GradientEstimate> {
        stochastic_gradient(&self.problem, xi, &self.config, key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadraticPath {
    /// Closed form `-A(xi + theta)`; costs no model calls.
    Analytic,
    /// Finite differences of the model in `xi`.
    FiniteDifference { scheme: FdScheme },
}

/// Stochastic gradients of the quadratic benchmark with
/// `theta ~ N(0, sigma^2 I)`.
#[derive(Debug, Clone)]
pub struct QuadraticGradient {
    pub quad: Example1Quadratic,
    pub model: Arc<ForwardModel>,
    pub sigma: f64,
    pub batch: usize,
    pub path: QuadraticPath,
}

impl QuadraticGradient {
    pub fn new(n: usize, sigma: f64, batch: usize, path: QuadraticPath) -> Result<Self> {
        if n == 0 || batch == 0 || !(sigma >= 0.0) {
            return Err(OedError::Config(
                "quadratic benchmark needs n >= 1, batch >= 1 and sigma >= 0".into(),
            ));
        }
        if let QuadraticPath::FiniteDifference { scheme } = &path {
            scheme.validate()?;
        }
        let quad = Example1Quadratic::new(n);
        Ok(Self {
            model: ForwardModel::shared(quad.clone()),
            quad,
            sigma,
            batch,
            path,
        })
    }

    fn sample(&self, xi: &Vector, key: StreamKey, s: u64) -> Result<GradientSample> {
        let mut rng = key.child(tags::OUTER).rng(s);
        let n = xi.len();
        let theta = Vector::from_iterator(
            n,
            (0..n).map(|_| self.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)),
        );
        let (grad, ncfm) = match &self.path {
            QuadraticPath::Analytic => (self.quad.gradient(xi, &theta), 0),
            QuadraticPath::FiniteDifference { scheme } => {
                let j = jac_xi(&self.model, xi, &theta, scheme)?;
                (j.row(0).transpose(), scheme.jacobian_cost(n))
            }
        };
        Ok(GradientSample {
            grad,
            ncfm,
            fallback: false,
            rejections: 0,
            numerators: Vec::new(),
        })
    }
}

impl GradientSource for QuadraticGradient {
    fn dim(&self) -> usize {
        self.quad.diag.len()
    }
    fn bounds(&self) -> Bounds {
        Bounds::unbounded(self.dim())
    }
    fn estimate(&self, xi: &Vector, key: StreamKey) -> Result<GradientEstimate> {
        check_len("design", self.dim(), xi.len())?;
        let samples = (0..self.batch as u64)
            .into_par_iter()
            .map(|s| self.sample(xi, key, s))
            .collect::<Result<Vec<_>>>()?;
        GradientEstimate::from_samples(samples, false)
    }
}
