use std::sync::Arc;

use oed_core::bayes::{BayesProblem, NoiseModel, Prior};
use oed_core::estimators::{eig_dlmc, estimate_eig, linear_gaussian_eig, EstimatorConfig, EstimatorKind};
use oed_core::gradients::{GradientConfig, GradientKind, OedGradient};
use oed_core::models::{builtin, BuiltinModel};
use oed_core::optimizers::{run, Method, OptimizerConfig, RunStatus};
use oed_core::rng::StreamKey;
use oed_core::{Matrix, Vector};

fn linear(gain: f64) -> BayesProblem {
    let spec = BuiltinModel::LinearGaussian {
        jac: vec![vec![1.0, 0.4], vec![-0.5, 1.2]],
        dim_xi: 2,
        design_gain: gain,
    };
    BayesProblem::new(
        Arc::new(builtin(&spec).unwrap()),
        Prior::gaussian_diag(Vector::from_vec(vec![0.3, -0.2]), &[1.0, 0.5]).unwrap(),
        NoiseModel::diagonal(&[0.5, 0.8]).unwrap(),
        2,
    )
    .unwrap()
}

fn truth(p: &BayesProblem, gain: f64, xi: &Vector) -> f64 {
    let jac = Matrix::from_row_slice(2, 2, &[1.0, 0.4, -0.5, 1.2]) * (1.0 + gain * xi.norm_squared());
    linear_gaussian_eig(p, &jac).unwrap()
}

#[test]
fn every_estimator_tracks_the_closed_form_along_the_design_space() {
    let gain = 0.3;
    let p = linear(gain);
    for (i, x) in [[0.0, 0.0], [1.0, -0.5], [2.0, 1.5]].iter().enumerate() {
        let xi = Vector::from_row_slice(x);
        let exact = truth(&p, gain, &xi);
        for (kind, m) in [(EstimatorKind::Dlmc, 400), (EstimatorKind::Mcla, 1), (EstimatorKind::Dlmcis, 5)] {
            let e = estimate_eig(&p, &xi, &EstimatorConfig::new(kind, 2000, m), StreamKey::new(40 + i as u64)).unwrap();
            assert!((e.value - exact).abs() <= 3.5 * e.std_error, "{kind:?} at {x:?}: {} +- {} vs {exact}", e.value, e.std_error);
        }
    }
}

#[test]
fn dlmc_bias_shrinks_with_the_inner_sample_size() {
    let p = linear(0.0);
    let xi = Vector::zeros(2);
    let exact = truth(&p, 0.0, &xi);
    let key = StreamKey::new(41);
    let bias: Vec<f64> = [2, 8, 32]
        .iter()
        .map(|&m| eig_dlmc(&p, &xi, &EstimatorConfig::new(EstimatorKind::Dlmc, 4000, m), key).unwrap().value - exact)
        .collect();
    assert!(bias[0] > bias[1] && bias[1] > bias[2], "{bias:?}");
    assert!(bias[0] > 0.0);
}

#[test]
fn rasgd_drives_a_growing_response_to_the_box_corner() {
    let p = linear(0.3);
    let src = OedGradient {
        problem: p,
        config: GradientConfig::new(GradientKind::SgLa, 1, 1),
    };
    let cfg = OptimizerConfig::new(Method::Rasgd, 5.0, 500);
    let t = run(&src, &cfg, &Vector::from_vec(vec![1.0, -0.5]), StreamKey::new(42)).unwrap();
    assert_eq!(t.status, RunStatus::MaxIters);
    assert_eq!(t.final_xi, vec![10.0, -10.0]);
    assert!(t.ncfm > 0);
}
