//! Figures and a JSON summary rebuilt from a run directory's `metrics.csv`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{read_metrics_csv, variance_trajectory, CheckpointStats, VarianceReport};
use crate::oracle::{convergence_audit, ConvergenceReport, TracePoint};
use crate::persist;

use super::svg::{line_chart, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub checkpoints: usize,
    pub final_step: usize,
    pub final_eval_mean: f64,
    pub convergence: Option<ConvergenceReport>,
    pub variance: Option<VarianceReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub summary: ReportSummary,
    pub files: Vec<PathBuf>,
}

fn trace(stats: &[CheckpointStats]) -> Vec<TracePoint> {
    stats
        .iter()
        .filter_map(|s| {
            Some(TracePoint {
                step: s.step,
                objective: s.objective?,
                grad_norm_sq: s.grad_norm_sq?,
            })
        })
        .collect()
}

/// Writes `objective.svg`, `grad_norm.svg`, `std.svg` and `summary.json`
/// into `run`. Output is a pure function of `metrics.csv`.
pub fn cmd_report(run: &Path) -> Result<ReportOutcome> {
    let metrics = run.join("metrics.csv");
    if !metrics.exists() {
        return Err(Error::Missing(metrics));
    }
    let stats = read_metrics_csv(&metrics)?;
    let tr = trace(&stats);
    let convergence = if tr.len() >= 20 {
        Some(convergence_audit(&tr)?)
    } else {
        None
    };
    let variance = if stats.len() >= 2 {
        Some(variance_trajectory(&stats)?)
    } else {
        None
    };
    let last = stats.last().expect("read_metrics_csv rejects empty files");

    let steps = |f: &dyn Fn(&CheckpointStats) -> Option<f64>| -> Vec<(f64, f64)> {
        stats.iter().filter_map(|s| Some((s.step as f64, f(s)?))).collect()
    };
    let mut files = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let p = run.join(name);
        persist::write_atomic(&p, body.as_bytes())?;
        files.push(p);
        Ok(())
    };

    let mut obj = vec![Series::new("eval utility", steps(&|s| Some(s.eval_mean)))];
    if !tr.is_empty() {
        obj.push(Series::new("L_C (exact)", steps(&|s| s.objective)));
    }
    emit("objective.svg", line_chart("Objective", "step", "value", &obj))?;

    let mut grad = vec![Series::new("||grad L_C||^2", steps(&|s| s.grad_norm_sq))];
    if let Some(c) = &convergence {
        let overlay: Vec<(f64, f64)> = tr
            .iter()
            .filter(|p| p.step > 0)
            .map(|p| (p.step as f64, c.fitted_c / (p.step as f64).sqrt()))
            .collect();
        grad.push(Series::new("C/sqrt(t)", overlay).dashed());
    }
    emit(
        "grad_norm.svg",
        line_chart("Squared gradient norm", "step", "value", &grad),
    )?;

    let std = vec![
        Series::new("consensus std", steps(&|s| Some(s.consensus_std))),
        Series::new("eval std", steps(&|s| Some(s.eval_std))).dashed(),
    ];
    emit("std.svg", line_chart("Within-group spread", "step", "std", &std))?;

    let summary = ReportSummary {
        checkpoints: stats.len(),
        final_step: last.step,
        final_eval_mean: last.eval_mean,
        convergence,
        variance,
    };
    let p = run.join("summary.json");
    persist::write_json(&p, &summary)?;
    files.push(p);
    Ok(ReportOutcome { summary, files })
}
