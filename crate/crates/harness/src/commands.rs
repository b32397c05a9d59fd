//! The work behind each CLI subcommand, as library calls.

use oed_core::bayes::{matrix_from_rows, BayesProblem};
use oed_core::estimators::{estimate_eig, linear_gaussian_eig, EigEstimate, EstimatorConfig, EstimatorKind};
use oed_core::gradients::{full_gradient, GradientKind};
use oed_core::models::BuiltinModel;
use oed_core::optimizers::{run, OptimizerTrace, RunStatus};
use oed_core::rng::{tags, StreamKey};
use oed_core::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Axis, ExperimentConfig, Source};
use crate::error::HarnessError;

/// Root stream of a run; replication `r` uses `child(REPLICATION).child(r)`.
pub fn root_key(seed: u64) -> StreamKey {
    StreamKey::new(seed)
}

pub fn replication_key(seed: u64, r: usize) -> StreamKey {
    root_key(seed).child(tags::REPLICATION).child(r as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigSummary {
    pub value: f64,
    pub std_error: f64,
    pub ncfm: u64,
}

impl From<&EigEstimate> for EigSummary {
    fn from(e: &EigEstimate) -> Self {
        Self {
            value: e.value,
            std_error: e.std_error,
            ncfm: e.ncfm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: Option<String>,
    pub estimator: EstimatorKind,
    pub xi: Vec<f64>,
    pub value: f64,
    pub std_error: f64,
    pub ncfm: u64,
    pub fallbacks: usize,
    pub rejections: usize,
    /// Closed-form value when the model admits one.
    pub analytic: Option<f64>,
}

/// Exact EIG of a linear-Gaussian configuration at `xi`, if it is one.
pub fn analytic_eig(cfg: &ExperimentConfig, problem: &BayesProblem, xi: &Vector) -> Option<f64> {
    let BuiltinModel::LinearGaussian { jac, design_gain, .. } = &cfg.model else {
        return None;
    };
    let jac = matrix_from_rows(jac).ok()? * (1.0 + design_gain * xi.norm_squared());
    linear_gaussian_eig(problem, &jac).ok()
}

fn check_design(cfg: &ExperimentConfig, xi: &Vector) -> Result<(), HarnessError> {
    let b = cfg.build_model()?.bounds();
    if xi.len() != b.dim() {
        return Err(HarnessError::Config(format!(
            "design has {} coordinates, the model expects {}",
            xi.len(),
            b.dim()
        )));
    }
    if !b.contains(xi) {
        return Err(HarnessError::Config(format!("design {:?} lies outside the design box", xi.as_slice())));
    }
    Ok(())
}

pub fn estimate(cfg: &ExperimentConfig, xi: Option<Vector>, seed: u64) -> Result<EstimateReport, HarnessError> {
    let problem = cfg.problem()?;
    let est_cfg = cfg.estimator()?;
    let xi = match xi {
        Some(x) => x,
        None => cfg.default_design()?,
    };
    check_design(cfg, &xi)?;
    let est = estimate_eig(&problem, &xi, est_cfg, root_key(seed))?;
    Ok(EstimateReport {
        name: cfg.name.clone(),
        estimator: est_cfg.kind,
        xi: xi.iter().copied().collect(),
        value: est.value,
        std_error: est.std_error,
        ncfm: est.ncfm,
        fallbacks: est.fallbacks,
        rejections: est.rejections,
        analytic: analytic_eig(cfg, &problem, &xi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub seed: u64,
    pub replications: Option<usize>,
    /// Cap on model calls per replication.
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub index: usize,
    pub status: RunStatus,
    pub final_xi: Vec<f64>,
    pub final_xibar: Vec<f64>,
    pub iterations: usize,
    pub restarts: usize,
    pub ncfm: u64,
    pub grad_evals: u64,
    /// EIG at the terminal iterate, when an estimator is configured.
    pub eig_final: Option<EigSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_ncfm: f64,
    pub median_ncfm: f64,
    pub mean_grad_evals: f64,
    pub median_grad_evals: f64,
    pub mean_iterations: f64,
    pub converged: usize,
    pub failed: usize,
    pub mean_final_xi: Vec<f64>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl Aggregate {
    pub fn from_rows(rows: &[ReplicationSummary]) -> Self {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&ReplicationSummary) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mut ncfm: Vec<f64> = rows.iter().map(|r| r.ncfm as f64).collect();
        let mut evals: Vec<f64> = rows.iter().map(|r| r.grad_evals as f64).collect();
        let dim = rows.first().map_or(0, |r| r.final_xi.len());
        Self {
            mean_ncfm: mean(&|r| r.ncfm as f64),
            median_ncfm: median(&mut ncfm),
            mean_grad_evals: mean(&|r| r.grad_evals as f64),
            median_grad_evals: median(&mut evals),
            mean_iterations: mean(&|r| r.iterations as f64),
            converged: rows.iter().filter(|r| r.status == RunStatus::Converged).count(),
            failed: rows.iter().filter(|r| matches!(r.status, RunStatus::Failed(_))).count(),
            mean_final_xi: (0..dim).map(|i| mean(&|r| r.final_xi[i])).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: Option<String>,
    pub seed: u64,
    pub xi0: Vec<f64>,
    pub replications: Vec<ReplicationSummary>,
    pub aggregate: Aggregate,
    pub eig_initial: Option<EigSummary>,
    /// Model calls seen by the forward-model counter during the optimization
    /// runs; equals the sum of the per-replication `ncfm`.
    pub counter_ncfm: u64,
}

/// Independent seeded optimizations from `xi0`. Returns the report and one
/// trace per replication, in replication order.
pub fn optimize(cfg: &ExperimentConfig, opts: RunOptions) -> Result<(RunReport, Vec<OptimizerTrace>), HarnessError> {
    let source = cfg.source()?;
    let mut opt_cfg = cfg.optimizer()?.clone();
    if let Some(b) = opts.budget {
        opt_cfg.max_ncfm = Some(opt_cfg.max_ncfm.map_or(b, |m| m.min(b)));
    }
    let reps = opts.replications.unwrap_or(cfg.replications);
    if reps == 0 {
        return Err(HarnessError::Config("replications must be at least 1".into()));
    }
    let xi0 = cfg.default_design()?;
    let src = source.as_dyn();

    let counter = |s: &Source| match s {
        Source::Oed(g) => g.problem.model.calls(),
        Source::Quadratic(_) => 0,
    };
    let before = counter(&source);
    let traces: Vec<OptimizerTrace> = (0..reps)
        .into_par_iter()
        .map(|r| run(src, &opt_cfg, &xi0, replication_key(opts.seed, r)))
        .collect::<Result<_, _>>()?;
    let counter_ncfm = counter(&source) - before;

    let (eig_initial, eig_final) = match (&source, &cfg.estimator) {
        (Source::Oed(g), Some(est)) => {
            let initial = estimate_eig(&g.problem, &xi0, est, root_key(opts.seed))?;
            let finals = traces
                .iter()
                .enumerate()
                .map(|(r, t)| {
                    let xi = Vector::from_vec(t.final_xi.clone());
                    estimate_eig(&g.problem, &xi, est, replication_key(opts.seed, r)).map(|e| Some(EigSummary::from(&e)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (Some(EigSummary::from(&initial)), finals)
        }
        _ => (None, vec![None; traces.len()]),
    };

    let rows: Vec<ReplicationSummary> = traces
        .iter()
        .zip(eig_final)
        .enumerate()
        .map(|(index, (t, eig_final))| ReplicationSummary {
            index,
            status: t.status.clone(),
            final_xi: t.final_xi.clone(),
            final_xibar: t.final_xibar.clone(),
            iterations: t.iterations,
            restarts: t.restarts,
            ncfm: t.ncfm,
            grad_evals: t.grad_evals,
            eig_final,
        })
        .collect();
    let report = RunReport {
        name: cfg.name.clone(),
        seed: opts.seed,
        xi0: xi0.iter().copied().collect(),
        aggregate: Aggregate::from_rows(&rows),
        replications: rows,
        eig_initial,
        counter_ncfm,
    };
    Ok((report, traces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckPoint {
    pub xi: Vec<f64>,
    /// Mean SG_LA gradient over `n_outer` samples.
    pub sg_la: Vec<f64>,
    /// Full DLMCIS gradient with `n_outer` outer and `m_inner` inner samples.
    pub dlmcis: Vec<f64>,
    /// Central difference of the MCLA estimate under common random numbers.
    pub fd_mcla: Vec<f64>,
    pub norm_sg_la: f64,
    pub norm_dlmcis: f64,
    pub rel_la_vs_fd: f64,
    pub rel_la_vs_dlmcis: f64,
    pub max_rel_discrepancy: f64,
    pub ncfm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub name: Option<String>,
    pub n_outer: usize,
    pub m_inner: usize,
    pub points: Vec<GradcheckPoint>,
}

fn rel_diff(a: &Vector, b: &Vector) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Compare the Laplace gradient with the importance-sampled full gradient and
/// with a finite difference of the MCLA estimate at each design.
pub fn gradcheck(cfg: &ExperimentConfig, designs: &[Vector], seed: u64) -> Result<GradcheckReport, HarnessError> {
    let problem = cfg.problem()?;
    let spec = cfg.gradcheck.clone().unwrap_or_default();
    let designs: Vec<Vector> = if !designs.is_empty() {
        designs.to_vec()
    } else if !spec.designs.is_empty() {
        spec.designs.iter().map(|d| Vector::from_vec(d.clone())).collect()
    } else {
        vec![cfg.default_design()?]
    };
    let key = root_key(seed);
    let mcla = EstimatorConfig::new(EstimatorKind::Mcla, spec.n_outer, 1);
    let mut points = Vec::with_capacity(designs.len());
    for xi in &designs {
        check_design(cfg, xi)?;
        let before = problem.model.calls();
        let la = full_gradient(&problem, xi, GradientKind::SgLa, spec.n_outer, 1, key)?;
        let is = full_gradient(&problem, xi, GradientKind::SgMcis, spec.n_outer, spec.m_inner, key)?;
        let mut fd = Vector::zeros(xi.len());
        for s in 0..xi.len() {
            let h = spec.fd_rel_step * xi[s].abs().max(1.0);
            let mut plus = xi.clone();
            plus[s] += h;
            let mut minus = xi.clone();
            minus[s] -= h;
            let fp = estimate_eig(&problem, &plus, &mcla, key)?.value;
            let fm = estimate_eig(&problem, &minus, &mcla, key)?.value;
            fd[s] = (fp - fm) / (2.0 * h);
        }
        let rel_fd = rel_diff(&la.grad, &fd);
        let rel_is = rel_diff(&la.grad, &is.grad);
        points.push(GradcheckPoint {
            xi: xi.iter().copied().collect(),
            sg_la: la.grad.iter().copied().collect(),
            dlmcis: is.grad.iter().copied().collect(),
            fd_mcla: fd.iter().copied().collect(),
            norm_sg_la: la.grad.norm(),
            norm_dlmcis: is.grad.norm(),
            rel_la_vs_fd: rel_fd,
            rel_la_vs_dlmcis: rel_is,
            max_rel_discrepancy: rel_fd.max(rel_is),
            ncfm: problem.model.calls() - before,
        });
    }
    Ok(GradcheckReport {
        name: cfg.name.clone(),
        n_outer: spec.n_outer,
        m_inner: spec.m_inner,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub xi1: f64,
    pub xi2: Option<f64>,
    pub eig: f64,
    pub std_error: f64,
}

/// Evaluate the configured estimator (MCLA with 1000 outer samples if none is
/// configured) on a grid over the first two design coordinates; any further
/// coordinates stay at the default design. Every point uses the same stream,
/// so a one-point grid reproduces `estimate`.
pub fn contour(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ContourPoint>, HarnessError> {
    let problem = cfg.problem()?;
    let est = cfg
        .estimator
        .clone()
        .unwrap_or_else(|| EstimatorConfig::new(EstimatorKind::Mcla, 1000, 1));
    let bounds = problem.model.bounds();
    let spec = cfg.contour.unwrap_or_default();
    let axis = |i: usize| Axis {
        lo: bounds.lo[i],
        hi: bounds.hi[i],
        n: 21,
    };
    let xs = spec.x.unwrap_or_else(|| axis(0)).points();
    let ys: Vec<Option<f64>> = if bounds.dim() >= 2 {
        spec.y.unwrap_or_else(|| axis(1)).points().into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let base = cfg.default_design()?;
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &x in &xs {
        for &y in &ys {
            let mut xi = base.clone();
            xi[0] = x;
            if let Some(y) = y {
                xi[1] = y;
            }
            check_design(cfg, &xi)?;
            let e = estimate_eig(&problem, &xi, &est, root_key(seed))?;
            out.push(ContourPoint {
                xi1: x,
                xi2: y,
                eig: e.value,
                std_error: e.std_error,
            });
        }
    }
    Ok(out)
}
