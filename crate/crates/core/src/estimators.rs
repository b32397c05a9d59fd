//! Expected-information-gain estimators: double-loop Monte Carlo (DLMC),
//! Monte Carlo Laplace (MCLA) and DLMC with Laplace-based importance
//! sampling (DLMCIS).
//!
//! Outer samples `(theta_n, eps_n)` are drawn from the stream
//! `key.child(OUTER).rng(n)`, which is shared by all estimators, so two
//! estimators run with the same key see the same outer samples. Inner
//! samples come from a per-estimator stream.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{
    laplace_covariance, map_estimate, BayesProblem, LaplaceFit, NelderMeadConfig, Observations,
};
use crate::error::{OedError, Result};
use crate::linalg::{check_len, logsumexp, mean_and_std_error, Matrix, Vector};
use crate::models::FdScheme;
use crate::rng::{tags, StreamKey};

/// Maximum number of singular Laplace fits tolerated per MCLA slot.
pub const MAX_REJECTIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Dlmc,
    Mcla,
    Dlmcis,
}

/// Inner-loop sampling density for DLMCIS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Laplace approximation of the posterior at the MAP point.
    #[default]
    Laplace,
    /// The prior itself; reduces DLMCIS to DLMC (testing aid).
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub n_outer: usize,
    #[serde(default = "default_m_inner")]
    pub m_inner: usize,
    #[serde(default)]
    pub fd_scheme: FdScheme,
    #[serde(default)]
    pub nelder_mead: NelderMeadConfig,
    #[serde(default)]
    pub proposal: Proposal,
}

fn default_m_inner() -> usize {
    1
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind, n_outer: usize, m_inner: usize) -> Self {
        Self {
            kind,
            n_outer,
            m_inner,
            fd_scheme: FdScheme::default(),
            nelder_mead: NelderMeadConfig::default(),
            proposal: Proposal::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_outer == 0 {
            return Err(OedError::Config("n_outer must be at least 1".into()));
        }
        if self.kind != EstimatorKind::Mcla && self.m_inner == 0 {
            return Err(OedError::Config("m_inner must be at least 1".into()));
        }
        self.fd_scheme.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigEstimate {
    /// Estimated expected information gain in nats.
    pub value: f64,
    pub std_error: f64,
    /// Forward-model calls consumed.
    pub ncfm: u64,
    /// DLMCIS outer samples that fell back to the prior proposal.
    pub fallbacks: usize,
    /// MCLA samples redrawn after a singular Laplace fit.
    pub rejections: usize,
    #[serde(skip)]
    pub summands: Vec<f64>,
}

/// One joint draw `(theta_n, Y_n)` together with the noise that produced it.
#[derive(Debug, Clone)]
pub struct OuterSample {
    pub theta: Vector,
    /// `g(xi, theta_n)`.
    pub g: Vector,
    pub eps: Matrix,
    pub y: Observations,
    /// `log p(Y_n | theta_n)`, computed from the noise alone.
    pub log_lik: f64,
}

/// Draw outer sample `n` (one model call).
pub fn outer_sample(problem: &BayesProblem, xi: &Vector, key: StreamKey, n: u64) -> Result<OuterSample> {
    let mut rng = key.child(tags::OUTER).rng(n);
    let theta = problem.prior.sample(&mut rng);
    let eps = problem.draw_noise(&mut rng);
    let g = problem.model.eval(xi, &theta)?;
    let y = problem.observations_from(&g, &eps);
    let log_lik = problem.log_likelihood_of_residuals(&eps);
    Ok(OuterSample {
        theta,
        g,
        eps,
        y,
        log_lik,
    })
}

/// `log((1/M) sum_m exp(terms_m))`.
pub fn log_mean_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return logsumexp(terms);
    }
    // Scaling inside the log keeps equal terms exact: mean of ones is one.
    let mean = terms.iter().map(|t| (t - max).exp()).sum::<f64>() / terms.len() as f64;
    max + mean.ln()
}

fn finish(summands: Vec<f64>, ncfm: u64, fallbacks: usize, rejections: usize) -> Result<EigEstimate> {
    let (value, std_error) = mean_and_std_error(&summands);
    if !value.is_finite() || !std_error.is_finite() {
        return Err(OedError::Numerical(format!(
            "non-finite information gain estimate {value} (std error {std_error})"
        )));
    }
    Ok(EigEstimate {
        value,
        std_error,
        ncfm,
        fallbacks,
        rejections,
        summands,
    })
}

/// Log-likelihoods of `y` at prior draws `theta*_1..M`; `M` model calls.
fn prior_inner_terms<R: Rng + ?Sized>(
    problem: &BayesProblem,
    xi: &Vector,
    y: &Observations,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    (0..m)
        .map(|_| {
            let th = problem.prior.sample(rng);
            Ok(problem.log_likelihood_given(y, &problem.model.eval(xi, &th)?))
        })
        .collect()
}

/// Importance-weighted log terms `log p + log pi - log pi_LA` at Laplace
/// draws. Draws outside the prior support get weight zero without a model
/// call. Returns the terms and the number of model calls.
fn laplace_inner_terms<R: Rng + ?Sized>(
    problem: &BayesProblem,
    xi: &Vector,
    y: &Observations,
    fit: &LaplaceFit,
    m: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, u64)> {
    let mut calls = 0;
    let mut terms = Vec::with_capacity(m);
    for _ in 0..m {
        let th = fit.sample(rng);
        let lp = problem.prior.logpdf(&th);
        if lp == f64::NEG_INFINITY {
            terms.push(f64::NEG_INFINITY);
            continue;
        }
        calls += 1;
        let ll = problem.log_likelihood_given(y, &problem.model.eval(xi, &th)?);
        terms.push(ll + lp - fit.logpdf(&th));
    }
    Ok((terms, calls))
}

pub fn eig_dlmc(problem: &BayesProblem, xi: &Vector, cfg: &EstimatorConfig, key: StreamKey) -> Result<EigEstimate> {
    cfg.validate()?;
    check_len("design", problem.dim_xi(), xi.len())?;
    let inner = key.child(tags::DLMC);
    let m = cfg.m_inner;
    let summands = (0..cfg.n_outer as u64)
        .into_par_iter()
        .map(|n| {
            let outer = outer_sample(problem, xi, key, n)?;
            let terms = prior_inner_terms(problem, xi, &outer.y, m, &mut inner.rng(n))?;
            Ok(outer.log_lik - log_mean_exp(&terms))
        })
        .collect::<Result<Vec<f64>>>()?;
    finish(summands, cfg.n_outer as u64 * (1 + m as u64), 0, 0)
}

/// Laplace fit at a prior draw, redrawing after singular fits. Returns the
/// draw, the fit, the number of rejections and the model calls spent.
pub(crate) fn fit_at_prior_draw<R: Rng + ?Sized>(
    problem: &BayesProblem,
    fit: impl Fn(&Vector) -> Result<LaplaceFit>,
    cost_per_try: u64,
    rng: &mut R,
) -> Result<(Vector, LaplaceFit, usize, u64)> {
    let mut rejections = 0;
    loop {
        let theta = problem.prior.sample(rng);
        match fit(&theta) {
            Ok(f) => return Ok((theta, f, rejections, (rejections as u64 + 1) * cost_per_try)),
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

pub fn eig_mcla(problem: &BayesProblem, xi: &Vector, cfg: &EstimatorConfig, key: StreamKey) -> Result<EigEstimate> {
    cfg.validate()?;
    check_len("design", problem.dim_xi(), xi.len())?;
    let d = problem.dim_theta() as f64;
    let scheme = cfg.fd_scheme;
    let cost = scheme.jacobian_cost(problem.dim_theta());
    let results = (0..cfg.n_outer as u64)
        .into_par_iter()
        .map(|n| {
            let mut rng = key.child(tags::OUTER).rng(n);
            let (theta, fit, rejections, calls) = fit_at_prior_draw(
                problem,
                |t| laplace_covariance(problem, xi, t, &scheme),
                cost,
                &mut rng,
            )?;
            let summand = fit.neg_half_logdet_2pi() - 0.5 * d - problem.prior.logpdf(&theta);
            Ok((summand, rejections, calls))
        })
        .collect::<Result<Vec<_>>>()?;
    let rejections = results.iter().map(|r| r.1).sum();
    let ncfm = results.iter().map(|r| r.2).sum();
    finish(results.into_iter().map(|r| r.0).collect(), ncfm, 0, rejections)
}

/// Laplace proposal for an observed `Y`: MAP search then covariance fit.
/// `Ok(None)` means the caller should fall back to the prior proposal.
pub(crate) fn laplace_proposal(
    problem: &BayesProblem,
    xi: &Vector,
    y: &Observations,
    cfg_nm: &NelderMeadConfig,
    scheme: &FdScheme,
) -> Result<(Option<LaplaceFit>, u64)> {
    let map = map_estimate(problem, y, xi, cfg_nm)?;
    let mut calls = map.map_cost;
    if !map.converged {
        return Ok((None, calls));
    }
    calls += scheme.jacobian_cost(problem.dim_theta());
    match laplace_covariance(problem, xi, &map.theta, scheme) {
        Ok(mut fit) => {
            fit.map_cost = map.map_cost;
            Ok((Some(fit), calls))
        }
        Err(OedError::SingularFit(_)) | Err(OedError::PriorBoundary(_)) => Ok((None, calls)),
        Err(e) => Err(e),
    }
}

pub fn eig_dlmcis(problem: &BayesProblem, xi: &Vector, cfg: &EstimatorConfig, key: StreamKey) -> Result<EigEstimate> {
    cfg.validate()?;
    check_len("design", problem.dim_xi(), xi.len())?;
    let m = cfg.m_inner;
    let results = (0..cfg.n_outer as u64)
        .into_par_iter()
        .map(|n| {
            let outer = outer_sample(problem, xi, key, n)?;
            let mut calls = 1u64;
            let (fit, fallback) = match cfg.proposal {
                Proposal::Prior => (None, false),
                Proposal::Laplace => {
                    let (fit, c) = laplace_proposal(problem, xi, &outer.y, &cfg.nelder_mead, &cfg.fd_scheme)?;
                    calls += c;
                    let fallback = fit.is_none();
                    (fit, fallback)
                }
            };
            let terms = match &fit {
                Some(fit) => {
                    let (t, c) = laplace_inner_terms(
                        problem,
                        xi,
                        &outer.y,
                        fit,
                        m,
                        &mut key.child(tags::DLMCIS).rng(n),
                    )?;
                    calls += c;
                    t
                }
                None => {
                    // The prior stream is the DLMC one, so the prior proposal
                    // reproduces DLMC sample for sample.
                    calls += m as u64;
                    prior_inner_terms(problem, xi, &outer.y, m, &mut key.child(tags::DLMC).rng(n))?
                }
            };
            Ok((outer.log_lik - log_mean_exp(&terms), fallback, calls))
        })
        .collect::<Result<Vec<_>>>()?;
    let fallbacks = results.iter().filter(|r| r.1).count();
    let ncfm = results.iter().map(|r| r.2).sum();
    finish(results.into_iter().map(|r| r.0).collect(), ncfm, fallbacks, 0)
}

pub fn estimate_eig(problem: &BayesProblem, xi: &Vector, cfg: &EstimatorConfig, key: StreamKey) -> Result<EigEstimate> {
    match cfg.kind {
        EstimatorKind::Dlmc => eig_dlmc(problem, xi, cfg, key),
        EstimatorKind::Mcla => eig_mcla(problem, xi, cfg, key),
        EstimatorKind::Dlmcis => eig_dlmcis(problem, xi, cfg, key),
    }
}

/// Closed-form information gain `1/2 log(det Sigma_pr / det Sigma_post)` for
/// a model linear in `theta` with Jacobian `jac` and a Gaussian prior.
pub fn linear_gaussian_eig(problem: &BayesProblem, jac: &Matrix) -> Result<f64> {
    let crate::bayes::Prior::Gaussian(g) = &problem.prior else {
        return Err(OedError::Config("closed-form EIG needs a Gaussian prior".into()));
    };
    let w = &problem.noise.cov.inverse;
    let prec = jac.transpose() * w * jac * problem.n_exp as f64 + &g.cov.inverse;
    let post = crate::linalg::SpdFactor::new(prec)
        .ok_or_else(|| OedError::Numerical("posterior precision not SPD".into()))?;
    // log det Sigma_post = -log det prec
    Ok(0.5 * (g.cov.logdet + post.logdet))
}
