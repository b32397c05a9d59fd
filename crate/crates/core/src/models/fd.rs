use serde::{Deserialize, Serialize};

use super::ForwardModel;
use crate::error::{OedError, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdMode {
    Forward,
    Central,
}

/// Finite-difference stencil. The step on coordinate `i` is
/// `rel_step * max(1, |x_i|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdScheme {
    pub mode: FdMode,
    pub rel_step: f64,
}

impl Default for FdScheme {
    fn default() -> Self {
        Self::forward()
    }
}

impl FdScheme {
    pub const MAX_REL_STEP: f64 = 1e-2;

    pub fn new(mode: FdMode, rel_step: f64) -> Result<Self> {
        let s = Self { mode, rel_step };
        s.validate()?;
        Ok(s)
    }

    pub fn forward() -> Self {
        Self {
            mode: FdMode::Forward,
            rel_step: 1e-6,
        }
    }

    pub fn central() -> Self {
        Self {
            mode: FdMode::Central,
            rel_step: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rel_step > 0.0 && self.rel_step <= Self::MAX_REL_STEP {
            Ok(())
        } else {
            Err(OedError::Config(format!(
                "finite-difference rel_step must lie in (0, {}], got {}",
                Self::MAX_REL_STEP,
                self.rel_step
            )))
        }
    }

    /// Perturbed coordinate and the step actually represented in floating point.
    pub fn perturb(&self, x: f64, sign: f64) -> (f64, f64) {
        let h = self.rel_step * x.abs().max(1.0);
        let xp = x + sign * h;
        (xp, (xp - x) * sign)
    }

    /// Model calls needed for one Jacobian with `n` columns.
    pub fn jacobian_cost(&self, n: usize) -> u64 {
        match self.mode {
            FdMode::Forward => n as u64 + 1,
            FdMode::Central => 2 * n as u64,
        }
    }

    /// Model calls needed for [`cross_jac`].
    pub fn cross_cost(&self, dim_xi: usize, dim_theta: usize) -> u64 {
        match self.mode {
            FdMode::Forward => (dim_xi as u64 + 1) * (dim_theta as u64 + 1),
            FdMode::Central => 2 * dim_theta as u64 * (2 * dim_xi as u64 + 1),
        }
    }
}

/// Jacobian of a vector function by finite differences. `f0` is `f(x)` when
/// already known (forward mode only uses it).
pub(crate) fn fd_jacobian<F>(
    mut f: F,
    x: &Vector,
    f0: Option<&Vector>,
    scheme: &FdScheme,
) -> Result<Matrix>
where
    F: FnMut(&Vector) -> Result<Vector>,
{
    let n = x.len();
    match scheme.mode {
        FdMode::Forward => {
            let base = match f0 {
                Some(v) => v.clone(),
                None => f(x)?,
            };
            let mut jac = Matrix::zeros(base.len(), n);
            for j in 0..n {
                let mut xp = x.clone();
                let (v, h) = scheme.perturb(x[j], 1.0);
                xp[j] = v;
                let fp = f(&xp)?;
                jac.set_column(j, &((fp - &base) / h));
            }
            Ok(jac)
        }
        FdMode::Central => {
            let mut jac: Option<Matrix> = None;
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                let (vp, hp) = scheme.perturb(x[j], 1.0);
                let (vm, hm) = scheme.perturb(x[j], -1.0);
                xp[j] = vp;
                xm[j] = vm;
                let fp = f(&xp)?;
                let fm = f(&xm)?;
                let col = (fp - fm) / (hp + hm);
                jac.get_or_insert_with(|| Matrix::zeros(col.len(), n))
                    .set_column(j, &col);
            }
            Ok(jac.unwrap_or_else(|| Matrix::zeros(0, 0)))
        }
    }
}

/// `r x d` Jacobian of `g` with respect to `theta`.
pub fn jac_theta(
    model: &ForwardModel,
    xi: &Vector,
    theta: &Vector,
    scheme: &FdScheme,
) -> Result<Matrix> {
    fd_jacobian(|t| model.eval(xi, t), theta, None, scheme)
}

/// `r x dim_xi` Jacobian of `g` with respect to the design.
pub fn jac_xi(
    model: &ForwardModel,
    xi: &Vector,
    theta: &Vector,
    scheme: &FdScheme,
) -> Result<Matrix> {
    fd_jacobian(|x| model.eval(x, theta), xi, None, scheme)
}

/// Mixed second derivatives `d^2 g / (d xi_s d theta_l)` together with the
/// theta-Jacobian at the base design, which the nested stencil yields for free.
#[derive(Debug, Clone)]
pub struct CrossJacobian {
    /// `r x d` Jacobian at the base design.
    pub jac_theta: Matrix,
    /// One `r x d` slice per design coordinate.
    pub cross: Vec<Matrix>,
}

pub fn cross_jac(
    model: &ForwardModel,
    xi: &Vector,
    theta: &Vector,
    scheme: &FdScheme,
) -> Result<CrossJacobian> {
    let base = jac_theta(model, xi, theta, scheme)?;
    let mut cross = Vec::with_capacity(xi.len());
    for s in 0..xi.len() {
        let slice = match scheme.mode {
            FdMode::Forward => {
                let mut xp = xi.clone();
                let (v, h) = scheme.perturb(xi[s], 1.0);
                xp[s] = v;
                (jac_theta(model, &xp, theta, scheme)? - &base) / h
            }
            FdMode::Central => {
                let mut xp = xi.clone();
                let mut xm = xi.clone();
                let (vp, hp) = scheme.perturb(xi[s], 1.0);
                let (vm, hm) = scheme.perturb(xi[s], -1.0);
                xp[s] = vp;
                xm[s] = vm;
                let jp = jac_theta(model, &xp, theta, scheme)?;
                let jm = jac_theta(model, &xm, theta, scheme)?;
                (jp - jm) / (hp + hm)
            }
        };
        cross.push(slice);
    }
    Ok(CrossJacobian {
        jac_theta: base,
        cross,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{builtin, BuiltinModel};

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn rel_step_range_is_enforced() {
        assert!(FdScheme::new(FdMode::Forward, 0.0).is_err());
        assert!(FdScheme::new(FdMode::Forward, 0.02).is_err());
        assert!(FdScheme::new(FdMode::Central, 1e-2).is_ok());
    }

    #[test]
    fn linear_model_jacobian_is_exact() {
        let j = vec![vec![1.0, -2.0, 0.5], vec![3.0, 0.25, -1.0]];
        let m = builtin(&BuiltinModel::LinearGaussian {
            jac: j.clone(),
            dim_xi: 2,
            design_gain: 0.0,
        })
        .unwrap();
        let jm = Matrix::from_fn(2, 3, |r, c| j[r][c]);
        for scheme in [FdScheme::forward(), FdScheme::central()] {
            let est = jac_theta(&m, &v(&[0.3, -0.1]), &v(&[0.2, 1.0, -4.0]), &scheme).unwrap();
            let tol = 1e2 * f64::EPSILON * jm.norm() / scheme.rel_step;
            assert!((est - &jm).amax() <= tol, "scheme {scheme:?}");

            // No cancellation at the origin: exact to a few ulps.
            let est = jac_theta(&m, &v(&[0.3, -0.1]), &Vector::zeros(3), &scheme).unwrap();
            assert!((est - &jm).amax() <= 1e2 * f64::EPSILON * jm.norm());
        }
    }

    #[test]
    fn quadratic_oed_theta_derivative_at_zero() {
        let m = builtin(&BuiltinModel::default_quadratic_oed()).unwrap();
        let xi = v(&[1.0, 0.5]);
        // xi.A.xi - 8 with A = [[1, -0.2], [-0.2, 0.5]]
        let expected = 1.0 - 0.2 + 0.125 - 8.0;
        let j = jac_theta(&m, &xi, &v(&[0.0]), &FdScheme::central()).unwrap();
        assert!((j[(0, 0)] - expected).abs() < 1e-8);
    }

    #[test]
    fn quadratic_oed_design_derivative() {
        let m = builtin(&BuiltinModel::default_quadratic_oed()).unwrap();
        // 2 (A xi) theta - (A 1) theta^2 at xi = (1, 0), theta = 1
        // A xi = (1, -0.2), A 1 = (0.8, 0.3)  ->  (2 - 0.8, -0.4 - 0.3)
        let j = jac_xi(&m, &v(&[1.0, 0.0]), &v(&[1.0]), &FdScheme::central()).unwrap();
        assert!((j[(0, 0)] - 1.2).abs() < 1e-8);
        assert!((j[(0, 1)] + 0.7).abs() < 1e-8);
    }

    #[test]
    fn quadratic_oed_cross_derivative() {
        let m = builtin(&BuiltinModel::default_quadratic_oed()).unwrap();
        let c = cross_jac(&m, &v(&[1.0, 0.0]), &v(&[0.0]), &FdScheme::central()).unwrap();
        assert!((c.cross[0][(0, 0)] - 2.0).abs() < 1e-6);
        assert!((c.cross[1][(0, 0)] + 0.4).abs() < 1e-6);
    }

    #[test]
    fn constant_in_design_gives_zero_design_jacobian() {
        let m = builtin(&BuiltinModel::LinearGaussian {
            jac: vec![vec![2.0]],
            dim_xi: 3,
            design_gain: 0.0,
        })
        .unwrap();
        let j = jac_xi(&m, &v(&[0.1, 0.2, 0.3]), &v(&[1.5]), &FdScheme::forward()).unwrap();
        assert_eq!(j.amax(), 0.0);
        let c = cross_jac(&m, &v(&[0.1, 0.2, 0.3]), &v(&[1.5]), &FdScheme::forward()).unwrap();
        assert!(c.cross.iter().all(|s| s.amax() == 0.0));
    }

    #[test]
    fn costs_match_counter_deltas() {
        let m = builtin(&BuiltinModel::default_timoshenko()).unwrap();
        let xi = v(&[5500.0, -100.0]);
        let th = v(&[30000.0, 11540.0]);
        for scheme in [FdScheme::forward(), FdScheme::central()] {
            let c0 = m.calls();
            jac_theta(&m, &xi, &th, &scheme).unwrap();
            assert_eq!(m.calls() - c0, scheme.jacobian_cost(2));
            let c0 = m.calls();
            jac_xi(&m, &xi, &th, &scheme).unwrap();
            assert_eq!(m.calls() - c0, scheme.jacobian_cost(2));
            let c0 = m.calls();
            cross_jac(&m, &xi, &th, &scheme).unwrap();
            assert_eq!(m.calls() - c0, scheme.cross_cost(2, 2));
        }
        assert_eq!(FdScheme::forward().cross_cost(2, 2), 9);
    }
}
