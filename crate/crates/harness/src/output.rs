//! CSV and JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use oed_core::optimizers::OptimizerTrace;
use serde::Serialize;

use crate::commands::ContourPoint;
use crate::error::HarnessError;

pub fn trace_header(dim: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((0..dim).map(|i| format!("xi_{i}")));
    h.extend((0..dim).map(|i| format!("xibar_{i}")));
    h.extend(["alpha", "gamma", "restart", "grad_norm", "ncfm", "grad_evals"].map(String::from));
    h
}

pub fn write_trace(path: &Path, trace: &OptimizerTrace) -> Result<(), HarnessError> {
    let dim = trace.final_xi.len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trace_header(dim))?;
    for r in &trace.rows {
        let mut rec = vec![r.k.to_string()];
        rec.extend(r.xi.iter().map(f64::to_string));
        rec.extend(r.xibar.iter().map(f64::to_string));
        rec.extend([
            r.alpha.to_string(),
            r.gamma.to_string(),
            u8::from(r.restart).to_string(),
            r.grad_norm.to_string(),
            r.ncfm.to_string(),
            r.grad_evals.to_string(),
        ]);
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_contour(path: &Path, points: &[ContourPoint]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["xi1", "xi2", "eig", "std_error"])?;
    for p in points {
        w.write_record([
            p.xi1.to_string(),
            p.xi2.map_or(String::new(), |v| v.to_string()),
            p.eig.to_string(),
            p.std_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

pub fn trace_file(dir: &Path, replication: usize) -> PathBuf {
    dir.join(format!("trace_{replication:03}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(
            trace_header(2).join(","),
            "k,xi_0,xi_1,xibar_0,xibar_1,alpha,gamma,restart,grad_norm,ncfm,grad_evals"
        );
    }
}
