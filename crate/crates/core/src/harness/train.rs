use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{attach_oracle, eval_checkpoint, write_metrics_csv, CheckpointStats};
use crate::optimizer::Trainer;
use crate::oracle::{convergence_audit, ConvergenceReport, Instance, TracePoint};
use crate::persist;
use crate::policy::TabularPolicy;
use crate::seqcore::space_size;
use crate::tasks::TaskSpec;

use super::config::RunConfig;

/// Largest output space for which checkpoints get exact oracle values.
const ORACLE_SPACE_LIMIT: u128 = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_hash: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub task_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_stats: CheckpointStats,
    pub convergence: Option<ConvergenceReport>,
    /// Mean `||g_hat||^2` over the applied steps.
    pub mean_estimator_sq: f64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:06}.json")
}

/// Everything a training run produces, before anything is written.
pub struct TrainOutcome {
    pub final_policy: TabularPolicy,
    pub stats: Vec<CheckpointStats>,
    /// `(step, policy)` at every checkpoint, including step 0 and T.
    pub checkpoints: Vec<(usize, TabularPolicy)>,
    pub mean_estimator_sq: f64,
    /// Set when the run stopped on a non-finite parameter.
    pub abort: Option<Error>,
}

impl TrainOutcome {
    pub fn trace(&self) -> Vec<TracePoint> {
        self.stats
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
}

/// Runs the training loop in memory. Training only receives the task's
/// reference-free view; references are read by checkpoint evaluation alone.
pub fn run_training(cfg: &RunConfig, task: &TaskSpec, exec: Execution) -> Result<TrainOutcome> {
    let view = task.training_view();
    let base = view.base_policy()?;
    let mut trainer = Trainer::new(cfg.trainer_config(), base)?.with_execution(exec);
    let inst = if cfg.train.oracle && space_size(view.vocab_size, view.l_max) <= ORACLE_SPACE_LIMIT {
        Some(Instance::new(cfg.utility.kind, &trainer.state().policy)?.with_execution(exec))
    } else {
        None
    };
    let kind_eval = cfg.kind_eval();
    let horizon = cfg.train.horizon;
    let every = cfg.train.checkpoint_every;
    let mut stats = Vec::new();
    let mut checkpoints = Vec::new();
    let mut abort = None;

    let record = |trainer: &Trainer,
                  stats: &mut Vec<CheckpointStats>,
                  checkpoints: &mut Vec<(usize, TabularPolicy)>|
     -> Result<()> {
        let state = trainer.state();
        let mut s = eval_checkpoint(
            &state.policy,
            task,
            cfg.eval.g_eval,
            kind_eval,
            cfg.eval.seed,
            state.step,
            exec,
        )?;
        if let Some(inst) = &inst {
            // u_m under the current sampling snapshot.
            attach_oracle(&mut s, inst, &state.policy, &state.old_policy);
        }
        log::info!(
            "step {} eval {:.4} consensus std {:.4} objective {:?}",
            s.step,
            s.eval_mean,
            s.consensus_std,
            s.objective
        );
        stats.push(s);
        checkpoints.push((state.step, state.policy.clone()));
        Ok(())
    };

    record(&trainer, &mut stats, &mut checkpoints)?;
    while !trainer.state().is_done() {
        match trainer.step() {
            Ok(_) => {}
            Err(e @ Error::NumericalAbort { .. }) => {
                log::error!("{e}");
                abort = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        let t = trainer.state().step;
        if t % every == 0 || t == horizon {
            record(&trainer, &mut stats, &mut checkpoints)?;
        }
    }
    let state = trainer.into_state();
    // After an abort the live parameters are non-finite; keep the last good ones.
    let final_policy = match abort {
        Some(_) => checkpoints.last().expect("step 0 is always recorded").1.clone(),
        None => state.policy.clone(),
    };
    Ok(TrainOutcome {
        mean_estimator_sq: state.mean_estimator_sq(),
        final_policy,
        stats,
        checkpoints,
        abort,
    })
}

/// Trains and writes the run directory:
/// `config.toml`, `task.json`, `checkpoints/step_XXXXXX.json`,
/// `checkpoint.json`, `metrics.csv` and `run.json`.
pub fn cmd_train(cfg: &RunConfig, exec: Execution) -> Result<RunRecord> {
    let started = unix_now();
    let out = cfg.resolved_output_dir();
    write_run_preamble(cfg, &out)?;
    let task = cfg.build_task()?;
    let task_path = out.join("task.json");
    task.save(&task_path)?;
    let outcome = run_training(cfg, &task, exec)?;
    write_run(cfg, &out, task_path, &outcome, started)
}

fn write_run_preamble(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
    persist::write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())
}

fn write_run(
    cfg: &RunConfig,
    out: &Path,
    task_path: PathBuf,
    outcome: &TrainOutcome,
    started: u64,
) -> Result<RunRecord> {
    let mut ck_paths = Vec::new();
    for (step, policy) in &outcome.checkpoints {
        let p = out.join("checkpoints").join(checkpoint_name(*step));
        policy.save_checkpoint(&p)?;
        ck_paths.push(p);
    }
    let final_checkpoint = out.join("checkpoint.json");
    outcome.final_policy.save_checkpoint(&final_checkpoint)?;
    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&metrics_path, &outcome.stats)?;

    let trace = outcome.trace();
    let convergence = if trace.len() >= 20 {
        Some(convergence_audit(&trace)?)
    } else {
        None
    };
    let record = RunRecord {
        config: cfg.clone(),
        config_hash: cfg.content_hash()?,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        task_path,
        checkpoints: ck_paths,
        final_checkpoint,
        metrics_path,
        summary: RunSummary {
            steps: outcome.checkpoints.last().map(|c| c.0).unwrap_or(0),
            final_stats: outcome.stats.last().cloned().expect("step 0 is always recorded"),
            convergence,
            mean_estimator_sq: outcome.mean_estimator_sq,
        },
    };
    persist::write_json(&out.join("run.json"), &record)?;
    if let Some(Error::NumericalAbort { step }) = &outcome.abort {
        return Err(Error::NumericalAbort { step: *step });
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;

    fn small(dir: &Path, horizon: usize) -> RunConfig {
        let mut c = RunConfig::default();
        c.output_dir = dir.to_path_buf();
        c.task.vocab = 3;
        c.task.l_max = 2;
        c.task.prompts = 2;
        c.train.group_size = 4;
        c.train.horizon = horizon;
        c.train.checkpoint_every = 2;
        c.eval.g_eval = 4;
        c
    }

    #[test]
    fn zero_horizon_checkpoint_is_the_initialisation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path(), 0);
        let rec = cmd_train(&cfg, Execution::default()).unwrap();
        let task = TaskSpec::load(&rec.task_path).unwrap();
        let ck = TabularPolicy::load_checkpoint(&rec.final_checkpoint).unwrap();
        assert_eq!(ck, task.base_policy().unwrap());
        assert_eq!(rec.checkpoints.len(), 1);
    }

    #[test]
    fn reruns_reproduce_metrics_and_checkpoints() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = cmd_train(&small(a.path(), 5), Execution::Parallel).unwrap();
        let rb = cmd_train(&small(b.path(), 5), Execution::Sequential).unwrap();
        let read = |p: &Path| std::fs::read(p).unwrap();
        assert_eq!(read(&ra.metrics_path), read(&rb.metrics_path));
        assert_eq!(read(&ra.final_checkpoint), read(&rb.final_checkpoint));
        // Steps 0, 2, 4 and the horizon.
        assert_eq!(ra.checkpoints.len(), 4);
        assert!(ra.checkpoints[3].ends_with("step_000005.json"));
    }
}
