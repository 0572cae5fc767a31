//! Checkpoint statistics, within-group variance trajectories and G sweeps.
//!
//! Every statistic is a pure function of its inputs and a seed. Per-prompt
//! work runs through [`Execution`]; aggregation happens afterwards in prompt
//! order.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::mbr::mbr_select;
use crate::optimizer::mean_std;
use crate::oracle::Instance;
use crate::persist;
use crate::policy::TabularPolicy;
use crate::seqcore::Sequence;
use crate::tasks::TaskSpec;
use crate::utility::{pair_utility, UtilityKind, UtilityMatrix};

const EVAL_STREAM: u64 = 0xe7a1;
const SWEEP_STREAM: u64 = 0x5bee;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub prompt_id: usize,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub consensus_mean: f64,
    pub consensus_std: f64,
    pub objective: Option<f64>,
    pub grad_norm_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub step: usize,
    pub g_eval: usize,
    pub prompts: Vec<PromptStats>,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub consensus_mean: f64,
    pub consensus_std: f64,
    /// Mean of the per-prompt objectives.
    pub objective: Option<f64>,
    /// `||grad L_C||^2` of the prompt-averaged objective.
    pub grad_norm_sq: Option<f64>,
}

/// Samples `g_eval` outputs per prompt, scores them against the reference
/// with `kind_eval`, and records consensus rewards within the sample.
pub fn eval_checkpoint(
    policy: &TabularPolicy,
    task: &TaskSpec,
    g_eval: usize,
    kind_eval: UtilityKind,
    seed: u64,
    step: usize,
    exec: Execution,
) -> Result<CheckpointStats> {
    if g_eval < 2 {
        return Err(Error::Invalid(format!("G_eval must be >= 2, got {g_eval}")));
    }
    let n = task.prompts.len();
    let prompts = exec.map(n, |q| {
        let mut rng = stream_rng(seed, &[EVAL_STREAM, q as u64]);
        let samples: Vec<Sequence> = (0..g_eval).map(|_| policy.sample(q, &mut rng)).collect();
        let reference = task.reference(q);
        let scores: Vec<f64> = samples.iter().map(|y| pair_utility(kind_eval, y, reference)).collect();
        let consensus = UtilityMatrix::build_with(kind_eval, &samples, Execution::Sequential).row_means(false);
        let (eval_mean, eval_std) = mean_std(&scores);
        let (consensus_mean, consensus_std) = mean_std(&consensus);
        PromptStats {
            prompt_id: q,
            eval_mean,
            eval_std,
            consensus_mean,
            consensus_std,
            objective: None,
            grad_norm_sq: None,
        }
    });
    let avg = |f: fn(&PromptStats) -> f64| prompts.iter().map(f).sum::<f64>() / n as f64;
    Ok(CheckpointStats {
        step,
        g_eval,
        eval_mean: avg(|p| p.eval_mean),
        eval_std: avg(|p| p.eval_std),
        consensus_mean: avg(|p| p.consensus_mean),
        consensus_std: avg(|p| p.consensus_std),
        prompts,
        objective: None,
        grad_norm_sq: None,
    })
}

/// Fills in `L_C` and `||grad L_C||^2` with `u_m` taken under `reference`.
pub fn attach_oracle(stats: &mut CheckpointStats, inst: &Instance, policy: &TabularPolicy, reference: &TabularPolicy) {
    let n = stats.prompts.len();
    let per = inst.exec.map(n, |q| {
        (
            inst.prompt_objective(policy, reference, q),
            inst.prompt_gradient(policy, reference, q).norm_sq(),
        )
    });
    for (p, (obj, gn)) in stats.prompts.iter_mut().zip(&per) {
        p.objective = Some(*obj);
        p.grad_norm_sq = Some(*gn);
    }
    // Prompt blocks are disjoint, so the averaged gradient's squared norm is
    // the sum of block norms over n^2.
    stats.objective = Some(per.iter().map(|x| x.0).sum::<f64>() / n as f64);
    stats.grad_norm_sq = Some(per.iter().map(|x| x.1).sum::<f64>() / (n * n) as f64);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub steps: Vec<usize>,
    pub eval_mean: Vec<f64>,
    pub eval_std: Vec<f64>,
    pub consensus_mean: Vec<f64>,
    pub consensus_std: Vec<f64>,
    pub std_first: f64,
    pub std_last: f64,
    pub eval_std_first: f64,
    pub eval_std_last: f64,
    /// Spearman correlation of consensus std against step (0 for a flat series).
    pub std_trend: f64,
}

pub fn variance_trajectory(stats: &[CheckpointStats]) -> Result<VarianceReport> {
    if stats.len() < 2 {
        return Err(Error::TraceTooShort {
            len: stats.len(),
            min: 2,
        });
    }
    let mut sorted: Vec<&CheckpointStats> = stats.iter().collect();
    sorted.sort_by_key(|s| s.step);
    let steps: Vec<usize> = sorted.iter().map(|s| s.step).collect();
    let series = |f: fn(&CheckpointStats) -> f64| sorted.iter().map(|s| f(s)).collect::<Vec<f64>>();
    let consensus_std = series(|s| s.consensus_std);
    let eval_std = series(|s| s.eval_std);
    let x: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    Ok(VarianceReport {
        std_first: consensus_std[0],
        std_last: *consensus_std.last().unwrap(),
        eval_std_first: eval_std[0],
        eval_std_last: *eval_std.last().unwrap(),
        std_trend: spearman(&x, &consensus_std),
        eval_mean: series(|s| s.eval_mean),
        consensus_mean: series(|s| s.consensus_mean),
        consensus_std,
        eval_std,
        steps,
    })
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, sx) = mean_std(&rx);
    let (my, sy) = mean_std(&ry);
    if sx == 0.0 || sy == 0.0 {
        return 0.0;
    }
    let cov = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / rx.len() as f64;
    cov / (sx * sy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    /// Sample G candidates from the base policy and keep the consensus winner.
    Mbr,
    /// One greedy pass of the trained policy.
    CgrpoTrained,
    /// One greedy pass of the base policy.
    Greedy,
    /// One sample from the base policy.
    Sample,
}

impl SweepMethod {
    pub const ALL: [SweepMethod; 4] = [
        SweepMethod::Mbr,
        SweepMethod::CgrpoTrained,
        SweepMethod::Greedy,
        SweepMethod::Sample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepMethod::Mbr => "mbr",
            SweepMethod::CgrpoTrained => "cgrpo_trained",
            SweepMethod::Greedy => "greedy",
            SweepMethod::Sample => "sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "G")]
    pub g: usize,
    pub method: SweepMethod,
    pub mean: f64,
    pub std: f64,
    /// Per prompt and seed; not covered by the determinism guarantee.
    pub wall_time_s: f64,
    pub seed_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub g_set: Vec<usize>,
    /// Utility used for MBR selection (the training utility).
    pub select_kind: UtilityKind,
    /// Utility used against the evaluation references.
    pub kind_eval: UtilityKind,
    pub seeds: Vec<u64>,
    pub methods: Vec<SweepMethod>,
}

/// One row per `(G, method)`. For a given seed and prompt the MBR candidate
/// sets are nested prefixes of one sample stream, so larger G only ever adds
/// candidates.
pub fn g_sweep(
    base: &TabularPolicy,
    trained: &TabularPolicy,
    task: &TaskSpec,
    spec: &SweepSpec,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if spec.g_set.is_empty() {
        return Err(Error::Config("G set must not be empty".into()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    if let Some(g) = spec.g_set.iter().find(|&&g| g < 1) {
        return Err(Error::Config(format!("G must be >= 1, got {g}")));
    }
    let n = task.prompts.len();
    let cells = n * spec.seeds.len();
    let mut rows = Vec::new();
    for &g in &spec.g_set {
        for &method in &spec.methods {
            let start = Instant::now();
            let scores: Vec<Result<f64>> = exec.map(cells, |c| {
                let (s, q) = (spec.seeds[c / n], c % n);
                let reference = task.reference(q);
                let y = match method {
                    SweepMethod::Mbr => {
                        let mut rng = stream_rng(s, &[SWEEP_STREAM, q as u64]);
                        let cands: Vec<Sequence> = (0..g).map(|_| base.sample(q, &mut rng)).collect();
                        let pick = mbr_select(spec.select_kind, &cands)?;
                        cands[pick.index].clone()
                    }
                    SweepMethod::Sample => base.sample(q, &mut stream_rng(s, &[SWEEP_STREAM, q as u64])),
                    SweepMethod::Greedy => base.greedy_decode(q),
                    SweepMethod::CgrpoTrained => trained.greedy_decode(q),
                };
                Ok(pair_utility(spec.kind_eval, &y, reference))
            });
            let elapsed = start.elapsed().as_secs_f64();
            let scores: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
            // Mean over seeds of the per-seed prompt average; equal to the
            // grand mean since every seed covers every prompt.
            let (mean, std) = mean_std(&scores);
            rows.push(SweepRow {
                g,
                method,
                mean,
                std,
                wall_time_s: elapsed / cells as f64,
                seed_count: spec.seeds.len(),
            });
        }
    }
    Ok(rows)
}

pub const METRICS_HEADER: [&str; 8] = [
    "step",
    "prompt_id",
    "eval_mean",
    "eval_std",
    "consensus_mean",
    "consensus_std",
    "objective",
    "grad_norm_sq",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per `(checkpoint, prompt)`; oracle columns are empty when absent.
pub fn metrics_csv(stats: &[CheckpointStats]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for s in stats {
        for p in &s.prompts {
            w.write_record([
                s.step.to_string(),
                p.prompt_id.to_string(),
                p.eval_mean.to_string(),
                p.eval_std.to_string(),
                p.consensus_mean.to_string(),
                p.consensus_std.to_string(),
                opt(p.objective),
                opt(p.grad_norm_sq),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Invalid(format!("csv buffer: {e}")))
}

pub fn write_metrics_csv(path: &Path, stats: &[CheckpointStats]) -> Result<()> {
    persist::write_atomic(path, &metrics_csv(stats)?)
}

/// Rebuilds checkpoint statistics from `metrics.csv`. `g_eval` is not stored
/// in the file and comes back as 0.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<CheckpointStats>> {
    let text = persist::read_to_string(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out: Vec<CheckpointStats> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", METRICS_HEADER[k])))
        };
        let onum = |k: usize| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let step: usize = rec[0].parse().map_err(|e| bad(format!("step: {e}")))?;
        let prompt_id: usize = rec[1].parse().map_err(|e| bad(format!("prompt_id: {e}")))?;
        let p = PromptStats {
            prompt_id,
            eval_mean: num(2)?,
            eval_std: num(3)?,
            consensus_mean: num(4)?,
            consensus_std: num(5)?,
            objective: onum(6)?,
            grad_norm_sq: onum(7)?,
        };
        match out.last_mut() {
            Some(s) if s.step == step => s.prompts.push(p),
            _ => out.push(CheckpointStats {
                step,
                g_eval: 0,
                prompts: vec![p],
                eval_mean: 0.0,
                eval_std: 0.0,
                consensus_mean: 0.0,
                consensus_std: 0.0,
                objective: None,
                grad_norm_sq: None,
            }),
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("{} holds no metrics rows", path.display())));
    }
    for s in &mut out {
        let n = s.prompts.len() as f64;
        let avg = |f: &dyn Fn(&PromptStats) -> f64| s.prompts.iter().map(f).sum::<f64>() / n;
        s.eval_mean = avg(&|p| p.eval_mean);
        s.eval_std = avg(&|p| p.eval_std);
        s.consensus_mean = avg(&|p| p.consensus_mean);
        s.consensus_std = avg(&|p| p.consensus_std);
        if s.prompts
            .iter()
            .all(|p| p.objective.is_some() && p.grad_norm_sq.is_some())
        {
            s.objective = Some(avg(&|p| p.objective.unwrap()));
            s.grad_norm_sq = Some(s.prompts.iter().map(|p| p.grad_norm_sq.unwrap()).sum::<f64>() / (n * n));
        }
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["G", "method", "mean", "std", "wall_time_s", "seed_count"])?;
    for r in rows {
        w.write_record([
            r.g.to_string(),
            r.method.name().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.wall_time_s.to_string(),
            r.seed_count.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Invalid(format!("csv buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_copy_task, InitSpec};

    fn point_on_reference(task: &TaskSpec) -> TabularPolicy {
        let vocab = task.vocab();
        let mut p = TabularPolicy::uniform(vocab.clone(), task.l_max, task.prompts.len()).unwrap();
        for q in 0..task.prompts.len() {
            let mut state = vocab.bos();
            let r = task.reference(q).clone();
            for &t in r.tokens() {
                p.set_logit(q, state, t as usize, 60.0);
                state = t as usize;
            }
            if r.content_len() < task.l_max {
                p.set_logit(q, state, vocab.eos(), 60.0);
            }
        }
        p
    }

    #[test]
    fn point_mass_on_reference() {
        let task = make_copy_task(4, 4, 3, 1, InitSpec::Uniform).unwrap();
        let p = point_on_reference(&task);
        let s = eval_checkpoint(&p, &task, 16, UtilityKind::LcsF, 0, 0, Execution::default()).unwrap();
        assert_eq!((s.eval_mean, s.eval_std, s.consensus_std), (1.0, 0.0, 0.0));
        assert!(eval_checkpoint(&p, &task, 1, UtilityKind::LcsF, 0, 0, Execution::default()).is_err());
    }

    #[test]
    fn bernoulli_mean_and_determinism() {
        // V=2, l_max=1, stop suppressed: a fair coin between <0> and <1>.
        let vocab = crate::seqcore::Vocab::new(2).unwrap();
        let mut p = TabularPolicy::uniform(vocab.clone(), 1, 1).unwrap();
        p.set_logit(0, vocab.bos(), vocab.eos(), -60.0);
        let task = TaskSpec {
            name: "coin".into(),
            vocab_size: 2,
            l_max: 1,
            prompts: vec![crate::seqcore::Prompt::new(0, "")],
            eval_references: vec![Sequence::new(vec![0])],
            init: InitSpec::Uniform,
            base_logits: p.logits().to_vec(),
        };
        let s = eval_checkpoint(&p, &task, 20_000, UtilityKind::ExactMatch, 3, 0, Execution::default()).unwrap();
        assert!((s.eval_mean - 0.5).abs() < 0.02);
        let again = eval_checkpoint(&p, &task, 20_000, UtilityKind::ExactMatch, 3, 0, Execution::Sequential).unwrap();
        assert_eq!(s, again);
    }

    fn stats(step: usize, std: f64) -> CheckpointStats {
        CheckpointStats {
            step,
            g_eval: 4,
            prompts: vec![],
            eval_mean: 0.5,
            eval_std: std,
            consensus_mean: 0.5,
            consensus_std: std,
            objective: None,
            grad_norm_sq: None,
        }
    }

    #[test]
    fn variance_trajectory_examples() {
        let flat: Vec<_> = (0..5).map(|t| stats(t * 10, 0.2)).collect();
        let rep = variance_trajectory(&flat).unwrap();
        assert_eq!(rep.consensus_std, vec![0.2; 5]);
        assert_eq!(rep.std_trend, 0.0);

        let falling: Vec<_> = (0..5).map(|t| stats(t * 10, 0.5 - 0.1 * t as f64)).collect();
        let rep = variance_trajectory(&falling).unwrap();
        assert!(rep.std_last <= rep.std_first);
        assert!((rep.std_trend + 1.0).abs() < 1e-12);

        let mut shuffled = falling.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 4);
        assert_eq!(variance_trajectory(&shuffled).unwrap(), rep);
        assert!(variance_trajectory(&falling[..1]).is_err());
    }

    #[test]
    fn sweep_rows() {
        let task = make_copy_task(
            3,
            3,
            4,
            2,
            InitSpec::ReferencePrior {
                strength: 1.5,
                noise: 0.3,
            },
        )
        .unwrap();
        let base = task.base_policy().unwrap();
        let trained = point_on_reference(&task);
        let spec = SweepSpec {
            g_set: vec![4, 8, 16, 32],
            select_kind: UtilityKind::LcsF,
            kind_eval: UtilityKind::LcsF,
            seeds: vec![0, 1, 2],
            methods: vec![SweepMethod::Mbr, SweepMethod::CgrpoTrained],
        };
        let rows = g_sweep(&base, &trained, &task, &spec, Execution::default()).unwrap();
        assert_eq!(rows.len(), 8);
        for r in rows.iter().filter(|r| r.method == SweepMethod::CgrpoTrained) {
            assert_eq!((r.mean, r.std), (1.0, 0.0));
        }
        let single = SweepSpec {
            g_set: vec![8],
            ..spec.clone()
        };
        assert_eq!(
            g_sweep(&base, &trained, &task, &single, Execution::default())
                .unwrap()
                .len(),
            2
        );
        let empty = SweepSpec { g_set: vec![], ..spec };
        assert!(matches!(
            g_sweep(&base, &trained, &task, &empty, Execution::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let task = make_copy_task(3, 3, 2, 2, InitSpec::SeededNoise { scale: 1.0 }).unwrap();
        let p = task.base_policy().unwrap();
        let inst = Instance::new(UtilityKind::LcsF, &p).unwrap();
        let mut all = Vec::new();
        for step in [0, 10] {
            let mut s = eval_checkpoint(&p, &task, 8, UtilityKind::LcsF, 1, step, Execution::default()).unwrap();
            attach_oracle(&mut s, &inst, &p, &p);
            all.push(s);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &all).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        for (a, b) in all.iter().zip(&back) {
            assert_eq!(a.prompts, b.prompts);
            assert_eq!(a.consensus_std, b.consensus_std);
            assert_eq!(a.grad_norm_sq, b.grad_norm_sq);
        }
        std::fs::write(&path, METRICS_HEADER.join(",") + "\n").unwrap();
        assert!(read_metrics_csv(&path).is_err());
    }
}
