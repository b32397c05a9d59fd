//! Priors, Gaussian measurement noise, synthetic data and log-likelihoods,
//! plus the Laplace (MAP + Gauss-Newton covariance) machinery.
//!
//! Everything here works in log space. Likelihoods are never exponentiated,
//! so tiny evidence values cannot underflow to zero.

mod laplace;
mod nelder_mead;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::linalg::{check_len, Matrix, SpdFactor, Vector};
use crate::models::ForwardModel;

pub use laplace::{
    laplace_covariance, laplace_from_jacobian, map_estimate, LaplaceFit, MapEstimate,
};
pub use nelder_mead::{nelder_mead, NelderMeadConfig, NelderMeadResult};

fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: Vector,
    pub cov: SpdFactor,
}

#[derive(Debug, Clone)]
pub struct UniformPrior {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Prior density `pi(theta)`.
#[derive(Debug, Clone)]
pub enum Prior {
    Gaussian(GaussianPrior),
    Uniform(UniformPrior),
}

impl Prior {
    pub fn gaussian(mean: Vector, cov: Matrix) -> Result<Self> {
        check_len("prior covariance", mean.len(), cov.nrows())?;
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax() {
            return Err(OedError::Config("prior covariance must be symmetric".into()));
        }
        let cov = SpdFactor::new(cov).ok_or_else(|| {
            OedError::Config("prior covariance must be positive definite".into())
        })?;
        Ok(Self::Gaussian(GaussianPrior { mean, cov }))
    }

    pub fn gaussian_diag(mean: Vector, std: &[f64]) -> Result<Self> {
        check_len("prior std", mean.len(), std.len())?;
        let cov = Matrix::from_diagonal(&Vector::from_iterator(
            std.len(),
            std.iter().map(|s| s * s),
        ));
        Self::gaussian(mean, cov)
    }

    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_len("uniform prior", lo.len(), hi.len())?;
        if lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(OedError::Config(format!(
                "uniform prior needs finite lo < hi componentwise, got {lo:?} / {hi:?}"
            )));
        }
        Ok(Self::Uniform(UniformPrior { lo, hi }))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.mean.len(),
            Self::Uniform(u) => u.lo.len(),
        }
    }

    /// Prior mean for Gaussians, box midpoint for uniforms.
    pub fn center(&self) -> Vector {
        match self {
            Self::Gaussian(g) => g.mean.clone(),
            Self::Uniform(u) => {
                Vector::from_iterator(u.lo.len(), u.lo.iter().zip(&u.hi).map(|(l, h)| 0.5 * (l + h)))
            }
        }
    }

    /// Per-coordinate spread: standard deviation for Gaussians, range for uniforms.
    pub fn scale(&self) -> Vec<f64> {
        match self {
            Self::Gaussian(g) => (0..g.mean.len()).map(|i| g.cov.matrix[(i, i)].sqrt()).collect(),
            Self::Uniform(u) => u.lo.iter().zip(&u.hi).map(|(l, h)| h - l).collect(),
        }
    }

    pub fn in_support(&self, theta: &Vector) -> bool {
        match self {
            Self::Gaussian(_) => true,
            Self::Uniform(u) => theta
                .iter()
                .zip(u.lo.iter().zip(&u.hi))
                .all(|(&t, (&l, &h))| l <= t && t <= h),
        }
    }

    /// `log pi(theta)`; `-inf` outside a uniform support.
    pub fn logpdf(&self, theta: &Vector) -> f64 {
        match self {
            Self::Gaussian(g) => {
                let d = g.mean.len() as f64;
                let diff = theta - &g.mean;
                -0.5 * (d * (2.0 * PI).ln() + g.cov.logdet) - 0.5 * g.cov.inv_quad(&diff)
            }
            Self::Uniform(u) => {
                if self.in_support(theta) {
                    -u.lo.iter().zip(&u.hi).map(|(l, h)| (h - l).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            Self::Gaussian(g) => {
                let z = standard_normal_vector(g.mean.len(), rng);
                &g.mean + &g.cov.lower * z
            }
            Self::Uniform(u) => Vector::from_iterator(
                u.lo.len(),
                u.lo.iter().zip(&u.hi).map(|(&l, &h)| l + (h - l) * rng.random::<f64>()),
            ),
        }
    }

    /// Hessian of `-log pi` at `theta`: the prior precision for Gaussians and
    /// zero in the interior of a uniform support.
    pub fn neg_log_hessian(&self, theta: &Vector) -> Result<Matrix> {
        check_len("prior hessian", self.dim(), theta.len())?;
        match self {
            Self::Gaussian(g) => Ok(g.cov.inverse.clone()),
            Self::Uniform(u) => {
                let interior = theta
                    .iter()
                    .zip(u.lo.iter().zip(&u.hi))
                    .all(|(&t, (&l, &h))| l < t && t < h);
                if interior {
                    Ok(Matrix::zeros(theta.len(), theta.len()))
                } else {
                    Err(OedError::PriorBoundary(theta.iter().copied().collect()))
                }
            }
        }
    }
}

/// Additive Gaussian measurement noise `N(0, Sigma_eps)`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub cov: SpdFactor,
}

impl NoiseModel {
    pub fn new(cov: Matrix) -> Result<Self> {
        let cov = SpdFactor::new(cov)
            .ok_or_else(|| OedError::Config("noise covariance must be positive definite".into()))?;
        Ok(Self { cov })
    }

    pub fn diagonal(std: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&Vector::from_iterator(
            std.len(),
            std.iter().map(|s| s * s),
        )))
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    /// `log det(2 pi Sigma_eps)`.
    pub fn logdet_2pi(&self) -> f64 {
        self.dim() as f64 * (2.0 * PI).ln() + self.cov.logdet
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        &self.cov.lower * standard_normal_vector(self.dim(), rng)
    }
}

/// Observed data: one row per repeated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub y: Matrix,
}

impl Observations {
    pub fn n_exp(&self) -> usize {
        self.y.nrows()
    }
}

/// Prior, noise and repetition count bundled with a forward model.
#[derive(Debug, Clone)]
pub struct BayesProblem {
    pub model: Arc<ForwardModel>,
    pub prior: Prior,
    pub noise: NoiseModel,
    pub n_exp: usize,
}

impl BayesProblem {
    pub fn new(model: Arc<ForwardModel>, prior: Prior, noise: NoiseModel, n_exp: usize) -> Result<Self> {
        check_len("prior vs model parameters", model.dim_theta(), prior.dim())?;
        check_len("noise vs model outputs", model.dim_out(), noise.dim())?;
        if n_exp == 0 {
            return Err(OedError::Config("n_exp must be at least 1".into()));
        }
        Ok(Self {
            model,
            prior,
            noise,
            n_exp,
        })
    }

    pub fn dim_xi(&self) -> usize {
        self.model.dim_xi()
    }

    pub fn dim_theta(&self) -> usize {
        self.model.dim_theta()
    }

    /// `N_e x r` matrix of i.i.d. noise draws.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let r = self.noise.dim();
        let mut eps = Matrix::zeros(self.n_exp, r);
        for i in 0..self.n_exp {
            eps.set_row(i, &self.noise.sample(rng).transpose());
        }
        eps
    }

    /// Rows `g + eps_i`.
    pub fn observations_from(&self, g: &Vector, eps: &Matrix) -> Observations {
        let mut y = eps.clone();
        for mut row in y.row_iter_mut() {
            row += g.transpose();
        }
        Observations { y }
    }

    /// Log-likelihood from the residual rows `y_i - g`.
    pub fn log_likelihood_of_residuals(&self, residuals: &Matrix) -> f64 {
        let quad: f64 = residuals
            .row_iter()
            .map(|row| self.noise.cov.inv_quad(&row.transpose()))
            .sum();
        -0.5 * residuals.nrows() as f64 * self.noise.logdet_2pi() - 0.5 * quad
    }

    /// Log-likelihood of `y` given an already evaluated response `g`.
    pub fn log_likelihood_given(&self, y: &Observations, g: &Vector) -> f64 {
        let mut res = y.y.clone();
        for mut row in res.row_iter_mut() {
            row -= g.transpose();
        }
        self.log_likelihood_of_residuals(&res)
    }
}

/// `y_i = g(xi, theta_t) + eps_i`, `i = 1..N_e`, with a single model call.
pub fn synthesize_data<R: Rng + ?Sized>(
    problem: &BayesProblem,
    xi: &Vector,
    theta_t: &Vector,
    rng: &mut R,
) -> Result<Observations> {
    let g = problem.model.eval(xi, theta_t)?;
    let eps = problem.draw_noise(rng);
    Ok(problem.observations_from(&g, &eps))
}

/// `log p(Y | theta, xi)`; one model call.
pub fn log_likelihood(
    problem: &BayesProblem,
    y: &Observations,
    xi: &Vector,
    theta: &Vector,
) -> Result<f64> {
    check_len("observation columns", problem.noise.dim(), y.y.ncols())?;
    let g = problem.model.eval(xi, theta)?;
    Ok(problem.log_likelihood_given(y, &g))
}

/// How the prior enters a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian {
        mean: Vec<f64>,
        #[serde(default)]
        std: Option<Vec<f64>>,
        /// Row-major full covariance; mutually exclusive with `std`.
        #[serde(default)]
        cov: Option<Vec<Vec<f64>>>,
    },
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl PriorSpec {
    /// Build the prior, multiplying every location/scale by `unit`.
    pub fn build(&self, unit: f64) -> Result<Prior> {
        match self {
            Self::Gaussian { mean, std, cov } => {
                let mean = Vector::from_iterator(mean.len(), mean.iter().map(|m| m * unit));
                match (std, cov) {
                    (Some(s), None) => {
                        let s: Vec<f64> = s.iter().map(|v| v * unit).collect();
                        Prior::gaussian_diag(mean, &s)
                    }
                    (None, Some(c)) => {
                        let m = matrix_from_rows(c)? * (unit * unit);
                        Prior::gaussian(mean, m)
                    }
                    _ => Err(OedError::Config(
                        "gaussian prior needs exactly one of `std` or `cov`".into(),
                    )),
                }
            }
            Self::Uniform { lo, hi } => Prior::uniform(
                lo.iter().map(|v| v * unit).collect(),
                hi.iter().map(|v| v * unit).collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub std: Option<Vec<f64>>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
}

impl NoiseSpec {
    pub fn build(&self) -> Result<NoiseModel> {
        match (&self.std, &self.cov) {
            (Some(s), None) => NoiseModel::diagonal(s),
            (None, Some(c)) => NoiseModel::new(matrix_from_rows(c)?),
            _ => Err(OedError::Config("noise needs exactly one of `std` or `cov`".into())),
        }
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(OedError::Config("matrix rows must be non-empty and equal length".into()));
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}
