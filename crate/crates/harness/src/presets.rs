//! Shipped experiment presets.

use crate::config::ExperimentConfig;
use crate::error::HarnessError;

const PRESETS: &[(&str, &str)] = &[
    ("example1_deterministic", include_str!("../presets/example1_deterministic.toml")),
    ("example1_sigma001", include_str!("../presets/example1_sigma001.toml")),
    ("example1_sigma01", include_str!("../presets/example1_sigma01.toml")),
    ("example2_asgd_la", include_str!("../presets/example2_asgd_la.toml")),
    ("example2_asgd_mc", include_str!("../presets/example2_asgd_mc.toml")),
    ("example2_asgd_mcis", include_str!("../presets/example2_asgd_mcis.toml")),
    ("example2_fgd_la", include_str!("../presets/example2_fgd_la.toml")),
    ("example2_fgd_mc", include_str!("../presets/example2_fgd_mc.toml")),
    ("example2_fgd_mcis", include_str!("../presets/example2_fgd_mcis.toml")),
    ("example2_rasgd_la", include_str!("../presets/example2_rasgd_la.toml")),
    ("example2_rasgd_mc", include_str!("../presets/example2_rasgd_mc.toml")),
    ("example2_rasgd_mcis", include_str!("../presets/example2_rasgd_mcis.toml")),
    ("example2_sgd_la", include_str!("../presets/example2_sgd_la.toml")),
    ("example2_sgd_mc", include_str!("../presets/example2_sgd_mc.toml")),
    ("example2_sgd_mcis", include_str!("../presets/example2_sgd_mcis.toml")),
    ("linear_gaussian", include_str!("../presets/linear_gaussian.toml")),
    ("theta_independent", include_str!("../presets/theta_independent.toml")),
    ("timoshenko_case1", include_str!("../presets/timoshenko_case1.toml")),
    ("timoshenko_case2", include_str!("../presets/timoshenko_case2.toml")),
    ("timoshenko_case3", include_str!("../presets/timoshenko_case3.toml")),
    ("timoshenko_case4", include_str!("../presets/timoshenko_case4.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Raw TOML of a preset.
pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ExperimentConfig, HarnessError> {
    let text = source(name).ok_or_else(|| {
        HarnessError::Config(format!(
            "unknown preset `{name}` (available: {})",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    ExperimentConfig::from_toml(text).map_err(|e| HarnessError::Config(format!("preset {name}: {e}")))
}
