use serde::{Deserialize, Serialize};

use super::{Bounds, ForwardModel, Response};
use crate::error::{OedError, Result};
use crate::linalg::{Matrix, Vector};

/// Stochastic quadratic `f(xi, theta) = -(xi.A.xi / 2 + xi.A.theta)` with a
/// diagonal `A`. Not an experiment model: used to exercise the optimizers on
/// an objective with known optimum `xi* = 0`.
#[derive(Debug, Clone)]
pub struct Example1Quadratic {
    pub diag: Vec<f64>,
}

impl Example1Quadratic {
    /// `A_jj = j` for `j = 1..=n`.
    pub fn new(n: usize) -> Self {
        Self {
            diag: (1..=n).map(|j| j as f64).collect(),
        }
    }

    /// Closed-form design gradient `-A (xi + theta)`.
    pub fn gradient(&self, xi: &Vector, theta: &Vector) -> Vector {
        Vector::from_iterator(
            self.diag.len(),
            self.diag
                .iter()
                .zip(xi.iter().zip(theta.iter()))
                .map(|(a, (x, t))| -a * (x + t)),
        )
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.diag.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.diag.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Momentum parameter `mu / L` that is optimal for Nesterov's scheme.
    pub fn optimal_q(&self) -> f64 {
        self.smallest_eigenvalue() / self.largest_eigenvalue()
    }

    /// Step size `2 / (L + mu)`.
    pub fn optimal_step(&self) -> f64 {
        2.0 / (self.largest_eigenvalue() + self.smallest_eigenvalue())
    }
}

impl Response for Example1Quadratic {
    fn name(&self) -> &str {
        "example1_quadratic"
    }
    fn dim_xi(&self) -> usize {
        self.diag.len()
    }
    fn dim_theta(&self) -> usize {
        self.diag.len()
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn bounds(&self) -> Bounds {
        Bounds::unbounded(self.diag.len())
    }
    fn response(&self, xi: &Vector, theta: &Vector) -> Vector {
        let v: f64 = self
            .diag
            .iter()
            .zip(xi.iter().zip(theta.iter()))
            .map(|(a, (x, t))| a * x * (0.5 * x + t))
            .sum();
        Vector::from_element(1, -v)
    }
}

/// Scalar model `g = (xi.A.xi) theta - (xi.A.1) theta^2 - 8 theta - 1` on
/// `[-2, 2]^2`.
#[derive(Debug, Clone)]
pub struct QuadraticOed {
    pub a: Matrix,
    pub half_width: f64,
}

impl Default for QuadraticOed {
    fn default() -> Self {
        Self {
            a: Matrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5]),
            half_width: 2.0,
        }
    }
}

impl Response for QuadraticOed {
    fn name(&self) -> &str {
        "example2_quadratic_oed"
    }
    fn dim_xi(&self) -> usize {
        2
    }
    fn dim_theta(&self) -> usize {
        1
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn bounds(&self) -> Bounds {
        Bounds::uniform(2, -self.half_width, self.half_width)
    }
    fn response(&self, xi: &Vector, theta: &Vector) -> Vector {
        let t = theta[0];
        let a_xi = &self.a * xi;
        let quad = xi.dot(&a_xi);
        let lin = a_xi.sum(); // xi.A.1 (A is symmetric)
        Vector::from_element(1, quad * t - lin * t * t - 8.0 * t - 1.0)
    }
}

/// Timoshenko beam strain gauge: `g = (eps11, eps12)` at gauge position
/// `xi = (x1, x2)` for `theta = (E, G)`.
///
/// Lengths in mm, moduli in MPa, load in N/mm.
#[derive(Debug, Clone)]
pub struct Timoshenko {
    pub length: f64,
    pub height: f64,
    pub load: f64,
    pub shear_coef: f64,
    pub inertia: f64,
    pub area: f64,
}

impl Timoshenko {
    /// Rectangular cross-section `base x height`.
    pub fn rectangular(length: f64, height: f64, base: f64, load: f64, shear_coef: f64) -> Self {
        Self {
            length,
            height,
            load,
            shear_coef,
            inertia: base * height.powi(3) / 12.0,
            area: base * height,
        }
    }
}

impl Default for Timoshenko {
    fn default() -> Self {
        Self::rectangular(10_000.0, 2_000.0, 100.0, 1_000.0, 5.0 / 6.0)
    }
}

impl Response for Timoshenko {
    fn name(&self) -> &str {
        "timoshenko"
    }
    fn dim_xi(&self) -> usize {
        2
    }
    fn dim_theta(&self) -> usize {
        2
    }
    fn dim_out(&self) -> usize {
        2
    }
    fn bounds(&self) -> Bounds {
        Bounds {
            lo: vec![0.0, -0.5 * self.height],
            hi: vec![self.length, 0.5 * self.height],
        }
    }
    fn response(&self, xi: &Vector, theta: &Vector) -> Vector {
        let (x1, x2) = (xi[0], xi[1]);
        let (e, g) = (theta[0], theta[1]);
        let q = self.load;
        let moment = q * self.length * x1 - q * x1 * x1;
        let eps11 = x2 * moment / (2.0 * e * self.inertia);
        let eps12 = (0.5 * self.length * q - q * x1) / (self.shear_coef * g * self.area);
        Vector::from_vec(vec![eps11, eps12])
    }
}

/// `g = (1 + gain |xi|^2) J theta`. With `gain = 0` the response does not
/// depend on the design at all. Laplace is exact for this model, which makes
/// it the oracle for every estimator.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    pub jac: Matrix,
    pub dim_xi: usize,
    pub design_gain: f64,
}

impl LinearGaussian {
    pub fn design_scale(&self, xi: &Vector) -> f64 {
        1.0 + self.design_gain * xi.norm_squared()
    }
}

impl Response for LinearGaussian {
    fn name(&self) -> &str {
        "linear_gaussian"
    }
    fn dim_xi(&self) -> usize {
        self.dim_xi
    }
    fn dim_theta(&self) -> usize {
        self.jac.ncols()
    }
    fn dim_out(&self) -> usize {
        self.jac.nrows()
    }
    fn bounds(&self) -> Bounds {
        Bounds::uniform(self.dim_xi, -10.0, 10.0)
    }
    fn response(&self, xi: &Vector, theta: &Vector) -> Vector {
        (&self.jac * theta) * self.design_scale(xi)
    }
}

fn default_n() -> usize {
    20
}
fn default_quad_a() -> [[f64; 2]; 2] {
    [[1.0, -0.2], [-0.2, 0.5]]
}
fn default_half_width() -> f64 {
    2.0
}
fn default_length() -> f64 {
    10_000.0
}
fn default_height() -> f64 {
    2_000.0
}
fn default_base() -> f64 {
    100.0
}
fn default_load_kn() -> f64 {
    1.0
}
fn default_shear_coef() -> f64 {
    5.0 / 6.0
}
fn default_dim_xi() -> usize {
    1
}

/// Built-in models, selectable by name from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinModel {
    Example1Quadratic {
        #[serde(default = "default_n")]
        n: usize,
    },
    #[serde(rename = "example2_quadratic_oed")]
    QuadraticOed {
        #[serde(default = "default_quad_a")]
        a: [[f64; 2]; 2],
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    Timoshenko {
        #[serde(default = "default_length")]
        length_mm: f64,
        #[serde(default = "default_height")]
        height_mm: f64,
        #[serde(default = "default_base")]
        base_mm: f64,
        #[serde(default = "default_load_kn")]
        load_kn_per_mm: f64,
        #[serde(default = "default_shear_coef")]
        shear_coef: f64,
    },
    LinearGaussian {
        /// Row-major `r x d` matrix.
        jac: Vec<Vec<f64>>,
        #[serde(default = "default_dim_xi")]
        dim_xi: usize,
        #[serde(default)]
        design_gain: f64,
    },
}

impl BuiltinModel {
    pub fn default_example1() -> Self {
        Self::Example1Quadratic { n: default_n() }
    }

    pub fn default_quadratic_oed() -> Self {
        Self::QuadraticOed {
            a: default_quad_a(),
            half_width: default_half_width(),
        }
    }

    pub fn default_timoshenko() -> Self {
        Self::Timoshenko {
            length_mm: default_length(),
            height_mm: default_height(),
            base_mm: default_base(),
            load_kn_per_mm: default_load_kn(),
            shear_coef: default_shear_coef(),
        }
    }

    /// Look up a model by name with default parameters. `linear_gaussian`
    /// defaults to the scalar identity map.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "example1_quadratic" => Ok(Self::default_example1()),
            "example2_quadratic_oed" => Ok(Self::default_quadratic_oed()),
            "timoshenko" => Ok(Self::default_timoshenko()),
            "linear_gaussian" => Ok(Self::LinearGaussian {
                jac: vec![vec![1.0]],
                dim_xi: 1,
                design_gain: 0.0,
            }),
            other => Err(OedError::Config(format!("unknown built-in model `{other}`"))),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(OedError::Config(format!("{name} must be positive, got {v}")))
    }
}

/// Instantiate a built-in model.
pub fn builtin(spec: &BuiltinModel) -> Result<ForwardModel> {
    match spec {
        BuiltinModel::Example1Quadratic { n } => {
            if *n == 0 {
                return Err(OedError::Config("example1_quadratic needs n >= 1".into()));
            }
            Ok(ForwardModel::new(Example1Quadratic::new(*n)))
        }
        BuiltinModel::QuadraticOed { a, half_width } => {
            positive("half_width", *half_width)?;
            if a[0][1] != a[1][0] {
                return Err(OedError::Config("quadratic OED matrix must be symmetric".into()));
            }
            Ok(ForwardModel::new(QuadraticOed {
                a: Matrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]),
                half_width: *half_width,
            }))
        }
        BuiltinModel::Timoshenko {
            length_mm,
            height_mm,
            base_mm,
            load_kn_per_mm,
            shear_coef,
        } => {
            positive("length_mm", *length_mm)?;
            positive("height_mm", *height_mm)?;
            positive("base_mm", *base_mm)?;
            positive("load_kn_per_mm", *load_kn_per_mm)?;
            positive("shear_coef", *shear_coef)?;
            Ok(ForwardModel::new(Timoshenko::rectangular(
                *length_mm,
                *height_mm,
                *base_mm,
                load_kn_per_mm * 1_000.0,
                *shear_coef,
            )))
        }
        BuiltinModel::LinearGaussian {
            jac,
            dim_xi,
            design_gain,
        } => {
            let r = jac.len();
            let d = jac.first().map_or(0, Vec::len);
            if r == 0 || d == 0 || jac.iter().any(|row| row.len() != d) || *dim_xi == 0 {
                return Err(OedError::Config(
                    "linear_gaussian needs a non-empty rectangular jac and dim_xi >= 1".into(),
                ));
            }
            Ok(ForwardModel::new(LinearGaussian {
                jac: Matrix::from_fn(r, d, |i, j| jac[i][j]),
                dim_xi: *dim_xi,
                design_gain: *design_gain,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{jac_xi, FdScheme};

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn quadratic_oed_at_origin() {
        let m = builtin(&BuiltinModel::default_quadratic_oed()).unwrap();
        assert_eq!(m.eval(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap()[0], -1.0);
        assert_eq!(m.bounds(), Bounds::uniform(2, -2.0, 2.0));
    }

    #[test]
    fn quadratic_oed_default_matrix() {
        let q = QuadraticOed::default();
        assert_eq!(q.a, Matrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5]));
        let spec: BuiltinModel = BuiltinModel::default_quadratic_oed();
        assert_eq!(spec, BuiltinModel::from_name("example2_quadratic_oed").unwrap());
    }

    #[test]
    fn timoshenko_shear_vanishes_at_midspan() {
        let m = builtin(&BuiltinModel::default_timoshenko()).unwrap();
        let g = m.eval(&v(&[5_000.0, -1_000.0]), &v(&[30_000.0, 11_540.0])).unwrap();
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn timoshenko_hand_evaluation() {
        // I = 100 * 2000^3 / 12 = 6.6667e10 mm^4, M(5000) = 1000*1e4*5000 - 1000*5000^2
        // eps11 = -1000 * 2.5e10 / (2 * 3e4 * 6.6667e10) = -6.25e-3
        let m = builtin(&BuiltinModel::default_timoshenko()).unwrap();
        let g = m.eval(&v(&[5_000.0, -1_000.0]), &v(&[30_000.0, 11_540.0])).unwrap();
        assert!((g[0] + 6.25e-3).abs() < 1e-15);

        // eps12 at the support: q L / 2 / (Ks G A) = 5e6 / (5/6 * 11540 * 2e5)
        let g = m.eval(&v(&[0.0, 0.0]), &v(&[30_000.0, 11_540.0])).unwrap();
        let expected = 5.0e6 / (5.0 / 6.0 * 11_540.0 * 2.0e5);
        assert!((g[1] - expected).abs() < 1e-15);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn example1_defaults_give_q_star() {
        let e = Example1Quadratic::new(20);
        assert_eq!(e.largest_eigenvalue(), 20.0);
        assert_eq!(e.smallest_eigenvalue(), 1.0);
        assert_eq!(e.optimal_q(), 1.0 / 20.0);
        assert_eq!(e.optimal_step(), 2.0 / 21.0);
    }

    #[test]
    fn example1_fd_gradient_matches_closed_form() {
        use rand::{Rng, SeedableRng};
        let e = Example1Quadratic::new(20);
        let m = ForwardModel::new(e.clone());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let scheme = FdScheme::central();
        for _ in 0..100 {
            let xi = Vector::from_fn(20, |_, _| rng.random_range(-2.0..2.0));
            let th = Vector::from_fn(20, |_, _| rng.random_range(-0.5..0.5));
            let fd = jac_xi(&m, &xi, &th, &scheme).unwrap();
            let exact = e.gradient(&xi, &th);
            for j in 0..20 {
                assert!((fd[(0, j)] - exact[j]).abs() < 1e-6 * (1.0 + exact[j].abs()));
            }
        }
    }

    #[test]
    fn linear_gaussian_identity_returns_theta() {
        let m = builtin(&BuiltinModel::from_name("linear_gaussian").unwrap()).unwrap();
        for xi in [-3.0, 0.0, 7.5] {
            assert_eq!(m.eval(&v(&[xi]), &v(&[0.37])).unwrap()[0], 0.37);
        }
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!(
            BuiltinModel::from_name("eit"),
            Err(OedError::Config(_))
        ));
    }
}
