//! Experiment configuration files.

use std::path::Path;
use std::sync::Arc;

use oed_core::bayes::{BayesProblem, NoiseSpec, PriorSpec};
use oed_core::estimators::EstimatorConfig;
use oed_core::gradients::{GradientConfig, GradientSource, OedGradient, QuadraticGradient, QuadraticPath};
use oed_core::models::{builtin, BuiltinModel, ForwardModel};
use oed_core::optimizers::OptimizerConfig;
use oed_core::Vector;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

/// One experiment: a design problem plus whatever the subcommands need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub model: BuiltinModel,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    /// Multiplier applied to prior locations and scales (e.g. 1000 for GPa
    /// priors on a model working in MPa).
    #[serde(default = "unit")]
    pub prior_unit: f64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default = "one")]
    pub n_exp: usize,
    /// Example 1 benchmark settings; replaces prior, noise and gradient.
    #[serde(default)]
    pub quadratic: Option<QuadraticSpec>,
    #[serde(default)]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default)]
    pub gradient: Option<GradientConfig>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    /// Starting design for `optimize`; default design for the other commands.
    #[serde(default)]
    pub xi0: Option<Vec<f64>>,
    #[serde(default = "ten")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gradcheck: Option<GradcheckSpec>,
    #[serde(default)]
    pub contour: Option<ContourSpec>,
}

fn unit() -> f64 {
    1.0
}
fn one() -> usize {
    1
}
fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    /// Standard deviation of every component of theta.
    pub sigma: f64,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default = "analytic")]
    pub path: QuadraticPath,
}

fn analytic() -> QuadraticPath {
    QuadraticPath::Analytic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSpec {
    /// Designs to check; defaults to `xi0`.
    #[serde(default)]
    pub designs: Vec<Vec<f64>>,
    #[serde(default = "gc_n")]
    pub n_outer: usize,
    #[serde(default = "gc_m")]
    pub m_inner: usize,
    /// Relative step of the central difference of the MCLA estimate.
    #[serde(default = "gc_step")]
    pub fd_rel_step: f64,
}

fn gc_n() -> usize {
    10_000
}
fn gc_m() -> usize {
    100
}
fn gc_step() -> f64 {
    1e-4
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            designs: Vec::new(),
            n_outer: gc_n(),
            m_inner: gc_m(),
            fd_rel_step: gc_step(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        (0..self.n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

/// Rectangular grid over the first two design coordinates. Missing axes span
/// the design box with 21 points.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourSpec {
    #[serde(default)]
    pub x: Option<Axis>,
    #[serde(default)]
    pub y: Option<Axis>,
}

/// Where `optimize` gets its gradients from.
pub enum Source {
    Oed(OedGradient),
    Quadratic(QuadraticGradient),
}

impl Source {
    pub fn as_dyn(&self) -> &dyn GradientSource {
        match self {
            Self::Oed(s) => s,
            Self::Quadratic(s) => s,
        }
    }
}

impl ExperimentConfig {
    /// Parse TOML, reporting schema violations with their key path.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::parse(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config(format!("{path}: {}", e.into_inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Cross-field checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let model = self.build_model()?;
        let dim = model.dim_xi();
        let is_quadratic = matches!(self.model, BuiltinModel::Example1Quadratic { .. });
        if is_quadratic {
            if self.quadratic.is_none() {
                return config_err("example1_quadratic needs a [quadratic] section");
            }
        } else {
            if self.quadratic.is_some() {
                return config_err("[quadratic] only applies to model example1_quadratic");
            }
            if self.prior.is_none() || self.noise.is_none() {
                return config_err("[prior] and [noise] are required");
            }
            self.problem()?;
        }
        if let Some(q) = &self.quadratic {
            if !(q.sigma >= 0.0) || q.batch == 0 {
                return config_err("quadratic.sigma must be >= 0 and quadratic.batch >= 1");
            }
        }
        if let Some(e) = &self.estimator {
            e.validate().map_err(|e| HarnessError::Config(format!("estimator: {e}")))?;
        }
        if let Some(g) = &self.gradient {
            g.validate().map_err(|e| HarnessError::Config(format!("gradient: {e}")))?;
        }
        if let Some(o) = &self.optimizer {
            o.validate().map_err(|e| HarnessError::Config(format!("optimizer: {e}")))?;
            if let Some(t) = &o.target {
                if t.len() != dim {
                    return config_err(&format!("optimizer.target: expected {dim} coordinates, got {}", t.len()));
                }
            }
        }
        if let Some(x) = &self.xi0 {
            if x.len() != dim {
                return config_err(&format!("xi0: expected {dim} coordinates, got {}", x.len()));
            }
            if !model.bounds().contains(&Vector::from_vec(x.clone())) {
                return config_err(&format!("xi0: {x:?} lies outside the design box"));
            }
        }
        if self.replications == 0 {
            return config_err("replications must be at least 1");
        }
        if !(self.prior_unit > 0.0) {
            return config_err("prior_unit must be positive");
        }
        if let Some(gc) = &self.gradcheck {
            if gc.n_outer == 0 || gc.m_inner == 0 || !(gc.fd_rel_step > 0.0) {
                return config_err("gradcheck sample sizes and step must be positive");
            }
            if let Some(d) = gc.designs.iter().find(|d| d.len() != dim) {
                return config_err(&format!("gradcheck.designs: {d:?} has the wrong dimension"));
            }
        }
        if let Some(c) = &self.contour {
            if dim < 2 && c.y.is_some() {
                return config_err("contour.y needs a design with at least two coordinates");
            }
            for a in [c.x, c.y].into_iter().flatten() {
                if a.n == 0 || !(a.hi >= a.lo) {
                    return config_err("contour axes need n >= 1 and hi >= lo");
                }
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ForwardModel, HarnessError> {
        builtin(&self.model).map_err(|e| HarnessError::Config(format!("model: {e}")))
    }

    pub fn problem(&self) -> Result<BayesProblem, HarnessError> {
        let (Some(prior), Some(noise)) = (&self.prior, &self.noise) else {
            return config_err("[prior] and [noise] are required");
        };
        let model = Arc::new(self.build_model()?);
        let prior = prior
            .build(self.prior_unit)
            .map_err(|e| HarnessError::Config(format!("prior: {e}")))?;
        let noise = noise.build().map_err(|e| HarnessError::Config(format!("noise: {e}")))?;
        BayesProblem::new(model, prior, noise, self.n_exp).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn source(&self) -> Result<Source, HarnessError> {
        if let (BuiltinModel::Example1Quadratic { n }, Some(q)) = (&self.model, &self.quadratic) {
            let g = QuadraticGradient::new(*n, q.sigma, q.batch, q.path)
                .map_err(|e| HarnessError::Config(format!("quadratic: {e}")))?;
            return Ok(Source::Quadratic(g));
        }
        let Some(gradient) = &self.gradient else {
            return config_err("optimize needs a [gradient] section");
        };
        Ok(Source::Oed(OedGradient {
            problem: self.problem()?,
            config: gradient.clone(),
        }))
    }

    pub fn estimator(&self) -> Result<&EstimatorConfig, HarnessError> {
        self.estimator
            .as_ref()
            .ok_or_else(|| HarnessError::Config("this command needs an [estimator] section".into()))
    }

    pub fn optimizer(&self) -> Result<&OptimizerConfig, HarnessError> {
        self.optimizer
            .as_ref()
            .ok_or_else(|| HarnessError::Config("optimize needs an [optimizer] section".into()))
    }

    /// The configured `xi0`, or the centre of the design box.
    pub fn default_design(&self) -> Result<Vector, HarnessError> {
        if let Some(x) = &self.xi0 {
            return Ok(Vector::from_vec(x.clone()));
        }
        let b = self.build_model()?.bounds();
        Ok(Vector::from_iterator(
            b.dim(),
            b.lo.iter().zip(&b.hi).map(|(l, h)| {
                if l.is_finite() && h.is_finite() {
                    0.5 * (l + h)
                } else {
                    0.0
                }
            }),
        ))
    }
}

fn config_err<T>(msg: &str) -> Result<T, HarnessError> {
    Err(HarnessError::Config(msg.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
model = { name = "example2_quadratic_oed" }
prior = { kind = "gaussian", mean = [0.0], std = [0.01] }
noise = { std = [0.01] }
xi0 = [1.0, 1.0]

[estimator]
kind = "mcla"
n_outer = 100
"#;

    #[test]
    fn parses_a_minimal_file() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.replications, 10);
        assert_eq!(cfg.n_exp, 1);
        assert_eq!(cfg.estimator.unwrap().n_outer, 100);
    }

    #[test]
    fn schema_errors_name_the_offending_key() {
        let bad = MINIMAL.replace("n_outer = 100", "n_outer = \"many\"");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("estimator.n_outer"), "{err}");

        let bad = MINIMAL.replace("kind = \"mcla\"", "kind = \"mcla\"\nbogus = 1");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn cross_field_checks() {
        let bad = MINIMAL.replace("xi0 = [1.0, 1.0]", "xi0 = [1.0]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("xi0 = [1.0, 1.0]", "xi0 = [3.0, 1.0]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replace("noise = { std = [0.01] }\n", "");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn axis_points() {
        let a = Axis { lo: -2.0, hi: 2.0, n: 5 };
        assert_eq!(a.points(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(Axis { lo: 0.5, hi: 0.5, n: 1 }.points(), vec![0.5]);
    }
}
