//! Forward models `g(xi, theta)` and finite-difference derivative operators.
//!
//! A [`Response`] is the pure mathematical map. [`ForwardModel`] wraps one and
//! counts every evaluation; the counter is the single source of truth for the
//! model-call cost (NCFM) reported everywhere else.

mod builtin;
mod fd;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{OedError, Result};
use crate::linalg::{all_finite, check_len, Vector};

pub use builtin::{
    builtin, BuiltinModel, Example1Quadratic, LinearGaussian, QuadraticOed, Timoshenko,
};
pub use fd::{cross_jac, jac_theta, jac_xi, CrossJacobian, FdMode, FdScheme};

/// Per-coordinate box `[lo, hi]` on the design vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_len("bounds", lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || l.is_nan() || h.is_nan()) {
            return Err(OedError::Config(format!(
                "bounds require lo <= hi componentwise, got lo = {lo:?}, hi = {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Clamp each coordinate into its interval.
    pub fn project(&self, xi: &Vector) -> Vector {
        Vector::from_iterator(
            xi.len(),
            xi.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .map(|(&x, (&l, &h))| x.clamp(l, h)),
        )
    }

    pub fn contains(&self, xi: &Vector) -> bool {
        xi.len() == self.dim()
            && xi
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&x, (&l, &h))| l <= x && x <= h)
    }
}

/// A deterministic experiment response `g(xi, theta)`.
///
/// Implementations must be pure: the same inputs always give the same
/// output, and evaluation must be safe from several threads at once.
/// Models must also accept designs slightly outside [`Response::bounds`],
/// since finite-difference stencils step over the box edge.
pub trait Response: Send + Sync {
    fn name(&self) -> &str;
    fn dim_xi(&self) -> usize;
    fn dim_theta(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn bounds(&self) -> Bounds;
    fn response(&self, xi: &Vector, theta: &Vector) -> Vector;
}

/// A [`Response`] with an evaluation counter.
pub struct ForwardModel {
    inner: Box<dyn Response>,
    calls: AtomicU64,
}

impl fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardModel")
            .field("name", &self.inner.name())
            .field("dim_xi", &self.dim_xi())
            .field("dim_theta", &self.dim_theta())
            .field("dim_out", &self.dim_out())
            .field("calls", &self.calls())
            .finish()
    }
}

impl ForwardModel {
    pub fn new(response: impl Response + 'static) -> Self {
        Self {
            inner: Box::new(response),
            calls: AtomicU64::new(0),
        }
    }

    pub fn shared(response: impl Response + 'static) -> Arc<Self> {
        Arc::new(Self::new(response))
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }

    pub fn dim_xi(&self) -> usize {
        self.inner.dim_xi()
    }

    pub fn dim_theta(&self) -> usize {
        self.inner.dim_theta()
    }

    pub fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }

    pub fn bounds(&self) -> Bounds {
        self.inner.bounds()
    }

    /// Total number of evaluations so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Evaluate `g(xi, theta)`, counting exactly one call.
    pub fn eval(&self, xi: &Vector, theta: &Vector) -> Result<Vector> {
        check_len("model design", self.dim_xi(), xi.len())?;
        check_len("model parameter", self.dim_theta(), theta.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let g = self.inner.response(xi, theta);
        check_len("model output", self.dim_out(), g.len())?;
        if !all_finite(&g) {
            return Err(OedError::Evaluation {
                xi: xi.iter().copied().collect(),
                theta: theta.iter().copied().collect(),
            });
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_clamps_each_coordinate() {
        let b = Bounds::new(vec![-2.0, 0.0], vec![2.0, 1.0]).unwrap();
        let p = b.project(&Vector::from_vec(vec![3.0, -0.5]));
        assert_eq!(p.as_slice(), &[2.0, 0.0]);
        assert!(b.contains(&p));
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn eval_counts_and_checks_dimensions() {
        let m = builtin(&BuiltinModel::default_quadratic_oed()).unwrap();
        let xi = Vector::zeros(2);
        let th = Vector::zeros(1);
        assert_eq!(m.calls(), 0);
        m.eval(&xi, &th).unwrap();
        m.eval(&xi, &th).unwrap();
        assert_eq!(m.calls(), 2);
        let err = m.eval(&Vector::zeros(3), &th).unwrap_err();
        assert!(matches!(err, OedError::Dimension { .. }));
    }

    struct Blowup;
    impl Response for Blowup {
        fn name(&self) -> &str {
            "blowup"
        }
        fn dim_xi(&self) -> usize {
            1
        }
        fn dim_theta(&self) -> usize {
            1
        }
        fn dim_out(&self) -> usize {
            1
        }
        fn bounds(&self) -> Bounds {
            Bounds::unbounded(1)
        }
        fn response(&self, xi: &Vector, theta: &Vector) -> Vector {
            Vector::from_element(1, xi[0] / theta[0])
        }
    }

    #[test]
    fn non_finite_output_is_reported_with_the_point() {
        let m = ForwardModel::new(Blowup);
        let err = m
            .eval(&Vector::from_element(1, 1.0), &Vector::zeros(1))
            .unwrap_err();
        match err {
            OedError::Evaluation { xi, theta } => {
                assert_eq!(xi, vec![1.0]);
                assert_eq!(theta, vec![0.0]);
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
