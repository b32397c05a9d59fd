use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

/// Nelder-Mead coefficients and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Initial vertex offset as a fraction of the per-coordinate scale.
    pub initial_offset: f64,
    /// Stop once `max f - min f < ftol * (1 + |min f|)` over the simplex.
    pub ftol: f64,
    /// Also require every vertex within `xtol * (1 + |best|_inf)` of the best
    /// one, so a simplex straddling the minimum with tied values keeps going.
    pub xtol: f64,
    /// Iteration cap is `max_iter_per_dim * dim`.
    pub max_iter_per_dim: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_offset: 0.05,
            ftol: 1e-10,
            xtol: 1e-6,
            max_iter_per_dim: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vector,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: u64,
    pub converged: bool,
}

/// Minimize `f` from the axis-aligned simplex `x0 + offset_i * scale_i * e_i`.
///
/// `clamp` maps every trial point into the feasible region before it is
/// evaluated. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F, C>(
    mut f: F,
    x0: &Vector,
    scale: &[f64],
    clamp: C,
    cfg: &NelderMeadConfig,
) -> NelderMeadResult
where
    F: FnMut(&Vector) -> f64,
    C: Fn(&Vector) -> Vector,
{
    let n = x0.len();
    let mut evaluations = 0u64;
    let mut eval = |x: &Vector, evaluations: &mut u64| {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vector, f64)> = Vec::with_capacity(n + 1);
    let start = clamp(x0);
    let f0 = eval(&start, &mut evaluations);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut x = start.clone();
        let step = cfg.initial_offset * scale[i];
        x[i] += if step != 0.0 { step } else { cfg.initial_offset };
        let x = clamp(&x);
        let fx = eval(&x, &mut evaluations);
        simplex.push((x, fx));
    }

    let max_iter = cfg.max_iter_per_dim * n.max(1);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let xb = &simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| (x - xb).amax())
            .fold(0.0, f64::max);
        if best.is_finite()
            && worst - best < cfg.ftol * (1.0 + best.abs())
            && diameter <= cfg.xtol * (1.0 + xb.amax())
        {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let centroid = simplex[..n]
            .iter()
            .fold(Vector::zeros(n), |acc, (x, _)| acc + x)
            / n as f64;
        let xw = simplex[n].0.clone();
        let along = |t: f64| clamp(&(&centroid + (&centroid - &xw) * t));

        let xr = along(cfg.reflection);
        let fr = eval(&xr, &mut evaluations);
        if fr < simplex[0].1 {
            let xe = along(cfg.reflection * cfg.expansion);
            let fe = eval(&xe, &mut evaluations);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // Outside contraction if the reflection improved on the worst point,
        // inside contraction otherwise.
        let (xc, fc) = if fr < worst {
            let xc = along(cfg.reflection * cfg.contraction);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(-cfg.contraction);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < fr.min(worst) {
            simplex[n] = (xc, fc);
            continue;
        }
        let xb = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = clamp(&(&xb + (&vertex.0 - &xb) * cfg.shrink));
            let fx = eval(&x, &mut evaluations);
            *vertex = (x, fx);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        fx,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &Vector| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = NelderMeadConfig {
            ftol: 1e-14,
            max_iter_per_dim: 2000,
            ..Default::default()
        };
        let r = nelder_mead(f, &Vector::from_vec(vec![-1.2, 1.0]), &[1.0, 1.0], |x| x.clone(), &cfg);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn counts_every_evaluation() {
        let mut calls = 0u64;
        let r = nelder_mead(
            |x: &Vector| {
                calls += 1;
                (x[0] - 3.0).powi(2)
            },
            &Vector::from_vec(vec![0.3]),
            &[1.0],
            |x| x.clone(),
            &NelderMeadConfig::default(),
        );
        assert_eq!(r.evaluations, calls);
        assert!((r.x[0] - 3.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn respects_the_clamp() {
        let r = nelder_mead(
            |x: &Vector| x[0],
            &Vector::from_vec(vec![0.5]),
            &[1.0],
            |x| x.map(|v| v.clamp(0.1, 1.0)),
            &NelderMeadConfig::default(),
        );
        assert!((r.x[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let cfg = NelderMeadConfig {
            max_iter_per_dim: 1,
            ..Default::default()
        };
        let r = nelder_mead(
            |x: &Vector| x.norm_squared(),
            &Vector::from_vec(vec![5.0, 5.0]),
            &[1.0, 1.0],
            |x| x.clone(),
            &cfg,
        );
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
