use std::f64::consts::PI;

use rand::Rng;

use super::{
    nelder_mead, standard_normal_vector, BayesProblem, NelderMeadConfig, Observations, Prior,
};
use crate::error::{OedError, Result};
use crate::linalg::{check_len, symmetrize, Matrix, SpdFactor, Vector};
use crate::models::{jac_theta, FdScheme};

#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub theta: Vector,
    /// Negative unnormalized log-posterior at `theta`, up to a constant.
    pub objective: f64,
    /// Model calls spent by the search.
    pub map_cost: u64,
    pub iterations: usize,
    pub converged: bool,
}

fn interior_clamp(prior: &Prior) -> impl Fn(&Vector) -> Vector + '_ {
    move |x: &Vector| match prior {
        Prior::Gaussian(_) => x.clone(),
        Prior::Uniform(u) => Vector::from_iterator(
            x.len(),
            x.iter().zip(u.lo.iter().zip(&u.hi)).map(|(&v, (&l, &h))| {
                let pad = 1e-9 * (h - l);
                v.clamp(l + pad, h - pad)
            }),
        ),
    }
}

/// Minimize `1/2 sum_i |y_i - g(xi, theta)|^2_{Sigma_eps^-1} - log pi(theta)`
/// with Nelder-Mead started at the prior center. Every objective evaluation
/// is one model call; failed evaluations count as `+inf`.
pub fn map_estimate(
    problem: &BayesProblem,
    y: &Observations,
    xi: &Vector,
    cfg: &NelderMeadConfig,
) -> Result<MapEstimate> {
    check_len("observation columns", problem.noise.dim(), y.y.ncols())?;
    check_len("model design", problem.dim_xi(), xi.len())?;
    let prior = &problem.prior;
    let objective = |theta: &Vector| -> f64 {
        let lp = prior.logpdf(theta);
        if lp == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        match problem.model.eval(xi, theta) {
            Ok(g) => {
                let misfit: f64 = y
                    .y
                    .row_iter()
                    .map(|row| problem.noise.cov.inv_quad(&(row.transpose() - &g)))
                    .sum();
                0.5 * misfit - lp
            }
            Err(_) => f64::INFINITY,
        }
    };
    let r = nelder_mead(objective, &prior.center(), &prior.scale(), interior_clamp(prior), cfg);
    Ok(MapEstimate {
        theta: r.x,
        objective: r.fx,
        map_cost: r.evaluations,
        iterations: r.iterations,
        converged: r.converged,
    })
}

/// Gaussian approximation `N(theta_hat, Sigma)` of the posterior.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub theta_hat: Vector,
    pub cov: Matrix,
    pub prec: Matrix,
    pub logdet_cov: f64,
    /// Model calls spent locating `theta_hat` (zero when it was given).
    pub map_cost: u64,
    /// Model calls spent on the Jacobian.
    pub fit_cost: u64,
    /// Whether the diagonal jitter was needed to factor the precision.
    pub jittered: bool,
    prec_factor: SpdFactor,
}

impl LaplaceFit {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn logpdf(&self, theta: &Vector) -> f64 {
        let d = self.dim() as f64;
        let diff = theta - &self.theta_hat;
        let quad = (diff.transpose() * &self.prec * &diff)[(0, 0)];
        -0.5 * (d * (2.0 * PI).ln() + self.logdet_cov) - 0.5 * quad
    }

    /// `theta_hat + L^{-T} z` where `prec = L L^T`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = standard_normal_vector(self.dim(), rng);
        let step = self
            .prec_factor
            .lower
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.theta_hat + step
    }

    /// `-1/2 log det(2 pi Sigma)`.
    pub fn neg_half_logdet_2pi(&self) -> f64 {
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.logdet_cov)
    }
}

/// Laplace fit from a known `r x d` Jacobian: Gauss-Newton precision
/// `N_e J^T Sigma_eps^-1 J + H_prior`.
pub fn laplace_from_jacobian(
    problem: &BayesProblem,
    theta_hat: &Vector,
    jac: &Matrix,
) -> Result<LaplaceFit> {
    let d = problem.dim_theta();
    check_len("laplace parameter", d, theta_hat.len())?;
    check_len("jacobian columns", d, jac.ncols())?;
    check_len("jacobian rows", problem.noise.dim(), jac.nrows())?;
    let w = &problem.noise.cov.inverse;
    let prec = symmetrize(
        &((jac.transpose() * w * jac) * problem.n_exp as f64
            + problem.prior.neg_log_hessian(theta_hat)?),
    );
    let (factor, jittered) = match SpdFactor::new(prec.clone()) {
        Some(f) => (f, false),
        None => {
            let tr = prec.trace();
            if !(tr > 0.0) || !tr.is_finite() {
                return Err(OedError::SingularFit(format!(
                    "precision has non-positive trace {tr} at theta = {:?}",
                    theta_hat.as_slice()
                )));
            }
            let jitter = 1e-10 * tr / d as f64;
            let jittered = &prec + Matrix::identity(d, d) * jitter;
            let f = SpdFactor::new(jittered).ok_or_else(|| {
                OedError::SingularFit(format!(
                    "precision not positive definite after jitter at theta = {:?}",
                    theta_hat.as_slice()
                ))
            })?;
            (f, true)
        }
    };
    Ok(LaplaceFit {
        theta_hat: theta_hat.clone(),
        cov: factor.inverse.clone(),
        prec: factor.matrix.clone(),
        logdet_cov: -factor.logdet,
        map_cost: 0,
        fit_cost: 0,
        jittered,
        prec_factor: factor,
    })
}

/// Laplace fit at `theta_hat`, with the theta-Jacobian from finite differences.
pub fn laplace_covariance(
    problem: &BayesProblem,
    xi: &Vector,
    theta_hat: &Vector,
    scheme: &FdScheme,
) -> Result<LaplaceFit> {
    let jac = jac_theta(&problem.model, xi, theta_hat, scheme)?;
    let mut fit = laplace_from_jacobian(problem, theta_hat, &jac)?;
    fit.fit_cost = scheme.jacobian_cost(problem.dim_theta());
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::bayes::{log_likelihood, synthesize_data, NoiseModel};
    use crate::models::{builtin, BuiltinModel};

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn linear_problem(n_exp: usize) -> (BayesProblem, Matrix) {
        let rows = vec![vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, 0.1]];
        let j = Matrix::from_fn(3, 2, |r, c| rows[r][c]);
        let model = Arc::new(
            builtin(&BuiltinModel::LinearGaussian {
                jac: rows,
                dim_xi: 1,
                design_gain: 0.0,
            })
            .unwrap(),
        );
        let prior = Prior::gaussian(
            v(&[0.5, -0.2]),
            Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.6]),
        )
        .unwrap();
        let noise = NoiseModel::diagonal(&[0.3, 0.5, 0.4]).unwrap();
        (BayesProblem::new(model, prior, noise, n_exp).unwrap(), j)
    }

    fn conjugate_posterior(p: &BayesProblem, j: &Matrix, y: &Observations) -> (Vector, Matrix) {
        let Prior::Gaussian(g) = &p.prior else { unreachable!() };
        let w = &p.noise.cov.inverse;
        let prec = j.transpose() * w * j * p.n_exp as f64 + &g.cov.inverse;
        let cov = prec.try_inverse().unwrap();
        let ysum = y.y.row_iter().fold(Vector::zeros(3), |a, r| a + r.transpose());
        let mean = &cov * (j.transpose() * w * ysum + &g.cov.inverse * &g.mean);
        (mean, cov)
    }

    #[test]
    fn linear_gaussian_map_and_covariance_are_conjugate() {
        let (p, j) = linear_problem(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xi = v(&[0.0]);
        let y = synthesize_data(&p, &xi, &v(&[0.9, -0.6]), &mut rng).unwrap();
        let (mean, cov) = conjugate_posterior(&p, &j, &y);

        let before = p.model.calls();
        let map = map_estimate(&p, &y, &xi, &NelderMeadConfig::default()).unwrap();
        assert_eq!(p.model.calls() - before, map.map_cost);
        assert!(map.converged);
        assert!((&map.theta - &mean).amax() < 1e-4, "{} vs {}", map.theta, mean);

        let before = p.model.calls();
        let fit = laplace_covariance(&p, &xi, &map.theta, &FdScheme::central()).unwrap();
        assert_eq!(p.model.calls() - before, fit.fit_cost);
        assert!((&fit.cov - &cov).amax() < 1e-8 * cov.amax());
        assert!((&fit.prec * &fit.cov - Matrix::identity(2, 2)).amax() <= 1e-8);
        assert!((fit.logdet_cov - cov.determinant().ln()).abs() < 1e-10);
        assert!(!fit.jittered);
    }

    #[test]
    fn map_is_a_local_maximum_of_the_posterior() {
        let (p, _) = linear_problem(2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xi = v(&[0.0]);
        let y = synthesize_data(&p, &xi, &v(&[0.1, 0.4]), &mut rng).unwrap();
        let map = map_estimate(&p, &y, &xi, &NelderMeadConfig::default()).unwrap();
        let post = |t: &Vector| log_likelihood(&p, &y, &xi, t).unwrap() + p.prior.logpdf(t);
        let at = post(&map.theta);
        let tol = 1e-8 * (1.0 + at.abs());
        for _ in 0..4 {
            let dir = Vector::from_fn(2, |_, _| rng.random::<f64>() - 0.5).normalize();
            for s in [1e-3, -1e-3] {
                assert!(post(&(&map.theta + &dir * s)) <= at + tol);
            }
        }
    }

    #[test]
    fn precision_matches_fd_hessian_of_negative_log_posterior() {
        let (p, _) = linear_problem(2);
        let xi = v(&[0.0]);
        let y = Observations {
            y: Matrix::from_row_slice(2, 3, &[0.3, -0.1, 0.5, 0.2, 0.4, -0.3]),
        };
        let at = v(&[0.2, 0.1]);
        let f = |t: &Vector| -(log_likelihood(&p, &y, &xi, t).unwrap() + p.prior.logpdf(t));
        let h = 1e-3;
        let fit = laplace_covariance(&p, &xi, &at, &FdScheme::forward()).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let e = |k: usize| Vector::from_fn(2, |r, _| if r == k { h } else { 0.0 });
                let fd = (f(&(&at + e(a) + e(b))) - f(&(&at + e(a) - e(b)))
                    - f(&(&at - e(a) + e(b)))
                    + f(&(&at - e(a) - e(b))))
                    / (4.0 * h * h);
                let rel = (fd - fit.prec[(a, b)]).abs() / fit.prec.amax();
                assert!(rel < 1e-6, "{a}{b}: {fd} vs {}", fit.prec[(a, b)]);
            }
        }
    }

    #[test]
    fn uninformative_model_returns_prior_covariance() {
        let model = Arc::new(
            builtin(&BuiltinModel::LinearGaussian {
                jac: vec![vec![0.0, 0.0]],
                dim_xi: 1,
                design_gain: 0.0,
            })
            .unwrap(),
        );
        let cov = Matrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let p = BayesProblem::new(
            model,
            Prior::gaussian(v(&[0.0, 0.0]), cov.clone()).unwrap(),
            NoiseModel::diagonal(&[1.0]).unwrap(),
            5,
        )
        .unwrap();
        let fit = laplace_covariance(&p, &v(&[0.0]), &v(&[0.3, 0.3]), &FdScheme::forward()).unwrap();
        assert!((&fit.cov - &cov).amax() < 1e-12);
    }

    #[test]
    fn more_repetitions_shrink_the_likelihood_covariance() {
        let model = Arc::new(builtin(&BuiltinModel::default_timoshenko()).unwrap());
        let prior = Prior::uniform(vec![1e4, 4e3], vec![5e4, 2e4]).unwrap();
        let noise = NoiseModel::diagonal(&[1e-5, 1e-5]).unwrap();
        let xi = v(&[5500.0, -500.0]);
        let th = v(&[3e4, 1.15e4]);
        let eig = |n: usize| {
            let p = BayesProblem::new(model.clone(), prior.clone(), noise.clone(), n).unwrap();
            let fit = laplace_covariance(&p, &xi, &th, &FdScheme::forward()).unwrap();
            fit.cov.symmetric_eigenvalues()
        };
        let (a, b) = (eig(1), eig(2));
        let mut a: Vec<f64> = a.iter().copied().collect();
        let mut b: Vec<f64> = b.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 0.5 * x).abs() <= 1e-9 * x);
        }
    }

    #[test]
    fn laplace_density_mode_quadrature_and_sampling() {
        let model = Arc::new(builtin(&BuiltinModel::from_name("linear_gaussian").unwrap()).unwrap());
        let p = BayesProblem::new(
            model,
            Prior::gaussian_diag(v(&[0.0]), &[1.0]).unwrap(),
            NoiseModel::diagonal(&[0.5]).unwrap(),
            2,
        )
        .unwrap();
        let fit = laplace_covariance(&p, &v(&[0.0]), &v(&[0.7]), &FdScheme::forward()).unwrap();
        let var = fit.cov[(0, 0)];
        assert!((fit.logpdf(&v(&[0.7])) + 0.5 * (2.0 * PI * var).ln()).abs() < 1e-14);

        let sd = var.sqrt();
        let (lo, hi, n) = (0.7 - 12.0 * sd, 0.7 + 12.0 * sd, 20_000);
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..n)
            .map(|i| fit.logpdf(&v(&[lo + (i as f64 + 0.5) * h])).exp() * h)
            .sum();
        assert!((integral - 1.0).abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = 100_000;
        let mean = (0..m).map(|_| fit.sample(&mut rng)[0]).sum::<f64>() / m as f64;
        assert!((mean - 0.7).abs() < 3.0 * sd / (m as f64).sqrt());
    }

    #[test]
    fn sample_covariance_matches_fit() {
        let (p, _) = linear_problem(1);
        let fit = laplace_covariance(&p, &v(&[0.0]), &v(&[0.0, 0.0]), &FdScheme::forward()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 100_000;
        let mut emp = Matrix::zeros(2, 2);
        for _ in 0..n {
            let s = fit.sample(&mut rng);
            emp += &s * s.transpose();
        }
        emp /= n as f64;
        assert!((emp - &fit.cov).amax() < 0.02 * fit.cov.amax());
    }

    #[test]
    fn zero_noise_data_recovers_truth() {
        let model = Arc::new(builtin(&BuiltinModel::default_quadratic_oed()).unwrap());
        let p = BayesProblem::new(
            model,
            Prior::gaussian_diag(v(&[0.0]), &[100.0]).unwrap(),
            NoiseModel::diagonal(&[1e-8]).unwrap(),
            1,
        )
        .unwrap();
        let xi = v(&[1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let y = synthesize_data(&p, &xi, &v(&[0.6]), &mut rng).unwrap();
        let map = map_estimate(&p, &y, &xi, &NelderMeadConfig::default()).unwrap();
        assert!((map.theta[0] - 0.6).abs() < 1e-6, "{}", map.theta[0]);
    }

    #[test]
    fn quadratic_oed_map_is_calibrated() {
        let model = Arc::new(builtin(&BuiltinModel::default_quadratic_oed()).unwrap());
        let p = BayesProblem::new(
            model,
            Prior::gaussian_diag(v(&[0.0]), &[1.0]).unwrap(),
            NoiseModel::diagonal(&[0.05]).unwrap(),
            1,
        )
        .unwrap();
        let xi = v(&[1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut inside = 0;
        for _ in 0..100 {
            let th = p.prior.sample(&mut rng);
            let y = synthesize_data(&p, &xi, &th, &mut rng).unwrap();
            let map = map_estimate(&p, &y, &xi, &NelderMeadConfig::default()).unwrap();
            let fit = laplace_covariance(&p, &xi, &map.theta, &FdScheme::forward()).unwrap();
            if (map.theta[0] - th[0]).abs() <= 3.0 * fit.cov[(0, 0)].sqrt() {
                inside += 1;
            }
        }
        assert!(inside >= 99, "{inside}");
    }

    #[test]
    fn uniform_prior_map_stays_interior() {
        let model = Arc::new(builtin(&BuiltinModel::from_name("linear_gaussian").unwrap()).unwrap());
        let p = BayesProblem::new(
            model,
            Prior::uniform(vec![0.0], vec![1.0]).unwrap(),
            NoiseModel::diagonal(&[0.1]).unwrap(),
            1,
        )
        .unwrap();
        let y = Observations {
            y: Matrix::from_element(1, 1, 5.0),
        };
        let map = map_estimate(&p, &y, &v(&[0.0]), &NelderMeadConfig::default()).unwrap();
        assert!(map.theta[0] < 1.0 && map.theta[0] > 1.0 - 1e-8);
        assert!(p.prior.neg_log_hessian(&map.theta).is_ok());
    }

    #[test]
    fn singular_precision_is_reported() {
        let model = Arc::new(
            builtin(&BuiltinModel::LinearGaussian {
                jac: vec![vec![0.0]],
                dim_xi: 1,
                design_gain: 0.0,
            })
            .unwrap(),
        );
        let p = BayesProblem::new(
            model,
            Prior::uniform(vec![0.0], vec![1.0]).unwrap(),
            NoiseModel::diagonal(&[0.1]).unwrap(),
            1,
        )
        .unwrap();
        let err = laplace_covariance(&p, &v(&[0.0]), &v(&[0.5]), &FdScheme::forward()).unwrap_err();
        assert!(matches!(err, OedError::SingularFit(_)));
    }
}
