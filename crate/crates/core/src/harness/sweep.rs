use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{g_sweep, sweep_csv, SweepMethod, SweepRow, SweepSpec};
use crate::persist;
use crate::policy::TabularPolicy;

use super::config::RunConfig;
use super::svg::{line_chart, Series};
use super::train::run_training;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

/// Runs the best-of-G comparison from the `[sweep]` section and writes
/// `sweep.csv` and `sweep.svg` into the output directory.
pub fn cmd_sweep(cfg: &RunConfig, exec: Execution) -> Result<SweepOutcome> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
    let task = cfg.build_task()?;
    let base = task.base_policy()?;
    let trained = match (&sweep.checkpoint, sweep.train_inline) {
        (Some(p), _) => TabularPolicy::load_checkpoint(p)?,
        (None, true) => {
            log::info!(
                "no sweep checkpoint given; training inline for {} steps",
                cfg.train.horizon
            );
            let out = run_training(cfg, &task, exec)?;
            if let Some(e) = out.abort {
                return Err(e);
            }
            out.final_policy
        }
        (None, false) => return Err(Error::Missing(PathBuf::from("sweep.checkpoint"))),
    };
    if !trained.is_compatible(&base) {
        return Err(Error::Incompatible("sweep checkpoint does not match the task".into()));
    }
    let spec = SweepSpec {
        g_set: sweep.g_set.clone(),
        select_kind: cfg.utility.kind,
        kind_eval: cfg.kind_eval(),
        seeds: sweep.seeds.clone(),
        methods: sweep.methods.clone(),
    };
    let rows = g_sweep(&base, &trained, &task, &spec, exec)?;

    let out = cfg.resolved_output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let csv_path = out.join("sweep.csv");
    persist::write_atomic(&csv_path, &sweep_csv(&rows)?)?;
    let svg_path = out.join("sweep.svg");
    persist::write_atomic(&svg_path, sweep_chart(&rows).as_bytes())?;
    Ok(SweepOutcome {
        rows,
        csv_path,
        svg_path,
    })
}

/// Mean evaluation utility against G, one line per method. Methods that do
/// not depend on G are drawn dashed.
pub fn sweep_chart(rows: &[SweepRow]) -> String {
    let mut series = Vec::new();
    for m in SweepMethod::ALL {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| (r.g as f64, r.mean))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let s = Series::new(m.name(), pts);
        series.push(if m == SweepMethod::Mbr { s } else { s.dashed() });
    }
    line_chart("Evaluation utility vs G", "G", "mean utility", &series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::SweepConfig;

    fn cfg(dir: &std::path::Path) -> RunConfig {
        let mut c = RunConfig::default();
        c.output_dir = dir.to_path_buf();
        c.task.vocab = 3;
        c.task.l_max = 2;
        c.task.prompts = 2;
        c.train.group_size = 4;
        c.train.horizon = 4;
        c.train.checkpoint_every = 2;
        c.eval.g_eval = 4;
        c.sweep = Some(SweepConfig {
            g_set: vec![1, 4],
            seeds: vec![0, 1],
            ..SweepConfig::default()
        });
        c
    }

    #[test]
    fn writes_csv_and_chart() {
        let dir = tempfile::tempdir().unwrap();
        let out = cmd_sweep(&cfg(dir.path()), Execution::default()).unwrap();
        assert_eq!(out.rows.len(), 4);
        let text = std::fs::read_to_string(&out.csv_path).unwrap();
        assert!(text.starts_with("G,method,mean,std,wall_time_s,seed_count\n"));
        assert!(std::fs::read_to_string(&out.svg_path)
            .unwrap()
            .contains("cgrpo_trained"));
    }

    #[test]
    fn missing_section_or_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(dir.path());
        c.sweep.as_mut().unwrap().train_inline = false;
        assert!(matches!(cmd_sweep(&c, Execution::default()), Err(Error::Missing(_))));
        c.sweep = None;
        assert!(matches!(cmd_sweep(&c, Execution::default()), Err(Error::Config(_))));
    }
}
