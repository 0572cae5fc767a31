//! Synthetic tasks and candidate files.
//!
//! A [`TaskSpec`] owns evaluation references, but training code only ever sees
//! a [`TrainingView`], which has no way to reach them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::stream_rng;
use crate::persist;
use crate::policy::TabularPolicy;
use crate::seqcore::{Prompt, Sequence, SequenceSpace, Vocab};

/// How the base (initial) policy of a task is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Uniform,
    /// Logits drawn uniformly from `[-scale, scale]`.
    SeededNoise {
        scale: f64,
    },
    /// Stand-in for a pretrained base model: the transitions spelling each
    /// prompt's target get `strength` extra logit, on top of seeded noise.
    /// Sampling is then biased towards the target without being concentrated
    /// on it, which is the regime where consensus decoding helps.
    ReferencePrior {
        strength: f64,
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub vocab_size: usize,
    pub l_max: usize,
    pub prompts: Vec<Prompt>,
    /// Evaluation only.
    pub eval_references: Vec<Sequence>,
    pub init: InitSpec,
    /// Base policy logits, materialised when the task is generated.
    pub base_logits: Vec<f64>,
}

/// What the optimiser is allowed to see of a task.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub name: &'a str,
    pub vocab_size: usize,
    pub l_max: usize,
    pub prompts: &'a [Prompt],
    base_logits: &'a [f64],
}

impl TrainingView<'_> {
    pub fn base_policy(&self) -> Result<TabularPolicy> {
        TabularPolicy::from_logits(
            Vocab::new(self.vocab_size)?,
            self.l_max,
            self.prompts.len(),
            self.base_logits.to_vec(),
        )
    }
}

impl TaskSpec {
    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.vocab_size).expect("task vocabulary is non-empty")
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            name: &self.name,
            vocab_size: self.vocab_size,
            l_max: self.l_max,
            prompts: &self.prompts,
            base_logits: &self.base_logits,
        }
    }

    pub fn base_policy(&self) -> Result<TabularPolicy> {
        self.training_view().base_policy()
    }

    pub fn reference(&self, prompt: usize) -> &Sequence {
        &self.eval_references[prompt]
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = Vocab::new(self.vocab_size)?;
        if self.prompts.is_empty() {
            return Err(Error::Invalid("task has no prompts".into()));
        }
        if self.eval_references.len() != self.prompts.len() {
            return Err(Error::Invalid(format!(
                "{} prompts but {} references",
                self.prompts.len(),
                self.eval_references.len()
            )));
        }
        for (i, p) in self.prompts.iter().enumerate() {
            if p.id != i {
                return Err(Error::Invalid(format!("prompt at position {i} has id {}", p.id)));
            }
        }
        for r in &self.eval_references {
            r.validate(&vocab, self.l_max)?;
        }
        self.base_policy().map(|_| ())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let task: TaskSpec = serde_json::from_str(&persist::read_to_string(path)?)?;
        task.validate()?;
        Ok(task)
    }
}

fn base_logits(vocab: &Vocab, l_max: usize, refs: &[Sequence], init: InitSpec, seed: u64) -> Result<Vec<f64>> {
    let n = refs.len();
    let mut policy = TabularPolicy::uniform(vocab.clone(), l_max, n)?;
    let mut rng = stream_rng(seed, &[0x1417]);
    let noise = match init {
        InitSpec::Uniform => 0.0,
        InitSpec::SeededNoise { scale } => scale,
        InitSpec::ReferencePrior { noise, .. } => noise,
    };
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Invalid(format!(
            "noise scale must be finite and >= 0, got {noise}"
        )));
    }
    if noise > 0.0 {
        let params = policy
            .params()
            .0
            .iter()
            .map(|_| rng.gen_range(-noise..=noise))
            .collect();
        policy.set_params(&crate::policy::ParamVector(params));
    }
    if let InitSpec::ReferencePrior { strength, .. } = init {
        if !strength.is_finite() {
            return Err(Error::Invalid(format!("prior strength must be finite, got {strength}")));
        }
        for (q, r) in refs.iter().enumerate() {
            let mut state = vocab.bos();
            for &t in r.tokens() {
                let v = policy.logit(q, state, t as usize);
                policy.set_logit(q, state, t as usize, v + strength);
                state = t as usize;
            }
            if r.content_len() < l_max {
                let v = policy.logit(q, state, vocab.eos());
                policy.set_logit(q, state, vocab.eos(), v + strength);
            }
        }
    }
    Ok(policy.logits().to_vec())
}

/// Random targets of `1..=min(l_max - 1, V)` distinct tokens (empty when
/// `l_max <= 1`), one per prompt. Distinct tokens keep every target reachable
/// by a first-order policy without conflicting transitions.
pub fn make_copy_task(v: usize, l_max: usize, n_prompts: usize, seed: u64, init: InitSpec) -> Result<TaskSpec> {
    if v < 2 {
        return Err(Error::Invalid(format!("copy task needs V >= 2, got {v}")));
    }
    if n_prompts == 0 {
        return Err(Error::Invalid("copy task needs at least one prompt".into()));
    }
    let vocab = Vocab::new(v)?;
    let max_len = l_max.saturating_sub(1).min(v);
    let mut rng = stream_rng(seed, &[0xc0]);
    let mut refs = Vec::with_capacity(n_prompts);
    let mut prompts = Vec::with_capacity(n_prompts);
    for i in 0..n_prompts {
        let len = if max_len == 0 { 0 } else { rng.gen_range(1..=max_len) };
        let mut tokens: Vec<u32> = (0..v as u32).collect();
        tokens.shuffle(&mut rng);
        tokens.truncate(len);
        let target = Sequence::new(tokens);
        prompts.push(Prompt::new(i, format!("copy {}", vocab.render(&target))));
        refs.push(target);
    }
    let base_logits = base_logits(&vocab, l_max, &refs, init, seed)?;
    let task = TaskSpec {
        name: "copy".into(),
        vocab_size: v,
        l_max,
        prompts,
        eval_references: refs,
        init,
        base_logits,
    };
    task.validate()?;
    Ok(task)
}

/// Smallest logit used for transitions that carry no mass.
const MODE_FLOOR: f64 = -30.0;

/// One-prompt task whose base policy reproduces `mode_weights` exactly (up to
/// the `e^-30` floor). The heaviest sequence is the designated outlier; the
/// evaluation reference is the heaviest of the others.
pub fn make_mode_task(v: usize, l_max: usize, mode_weights: &[(Sequence, f64)]) -> Result<(TaskSpec, TabularPolicy)> {
    let vocab = Vocab::new(v)?;
    if mode_weights.is_empty() {
        return Err(Error::Invalid("mode task needs at least one weighted sequence".into()));
    }
    let total: f64 = mode_weights.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-9 || mode_weights.iter().any(|(_, w)| w.is_nan() || *w <= 0.0) {
        return Err(Error::Invalid(format!(
            "mode weights must be positive and sum to 1, got sum {total}"
        )));
    }
    for (y, _) in mode_weights {
        y.validate(&vocab, l_max)?;
    }
    let w = v + 1;
    // Mass flowing through each (state, action) decision.
    let mut mass = vec![0.0; w * w];
    for (y, p) in mode_weights {
        let mut state = vocab.bos();
        for &t in y.tokens() {
            mass[state * w + t as usize] += p;
            state = t as usize;
        }
        if y.content_len() < l_max {
            mass[state * w + vocab.eos()] += p;
        }
    }
    let mut policy = TabularPolicy::uniform(vocab.clone(), l_max, 1)?;
    for s in 0..w {
        let out: f64 = mass[s * w..(s + 1) * w].iter().sum();
        if out == 0.0 {
            continue;
        }
        for a in 0..w {
            let m = mass[s * w + a];
            policy.set_logit(0, s, a, if m > 0.0 { (m / out).ln() } else { MODE_FLOOR });
        }
    }
    let space = SequenceSpace::new(&vocab, l_max)?;
    for (y, p) in mode_weights {
        let got = policy.log_prob(0, y)?.exp();
        if (got - p).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "weights are not representable by a first-order policy: {} gets {got}, wanted {p}",
                vocab.render(y)
            )));
        }
    }
    debug_assert_eq!(space.len(), policy.distribution(0, &space).len());

    let mut order: Vec<usize> = (0..mode_weights.len()).collect();
    order.sort_by(|&a, &b| mode_weights[b].1.total_cmp(&mode_weights[a].1).then(a.cmp(&b)));
    let reference = match order.get(1) {
        Some(&i) => mode_weights[i].0.clone(),
        None => mode_weights[order[0]].0.clone(),
    };
    let task = TaskSpec {
        name: "mode".into(),
        vocab_size: v,
        l_max,
        prompts: vec![Prompt::new(0, "mode")],
        eval_references: vec![reference],
        init: InitSpec::Uniform,
        base_logits: policy.logits().to_vec(),
    };
    Ok((task, policy))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateRow {
    prompt_id: usize,
    candidates: Vec<Vec<u32>>,
}

/// Reads `{"prompt_id": n, "candidates": [[ids]...]}` rows. Rows sharing a
/// prompt id are concatenated in file order.
pub fn load_candidates(path: &Path, vocab: &Vocab, l_max: usize) -> Result<BTreeMap<usize, Vec<Sequence>>> {
    let text = persist::read_to_string(path)?;
    let mut out: BTreeMap<usize, Vec<Sequence>> = BTreeMap::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: CandidateRow = serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        if row.candidates.is_empty() {
            return Err(parse_err(line, format!("prompt {} has no candidates", row.prompt_id)));
        }
        for (c, tokens) in row.candidates.into_iter().enumerate() {
            let y = Sequence::new(tokens);
            y.validate(vocab, l_max)
                .map_err(|e| parse_err(line, format!("prompt {} candidate {c}: {e}", row.prompt_id)))?;
            out.entry(row.prompt_id).or_default().push(y);
        }
    }
    if out.is_empty() {
        log::warn!("candidate file {} holds no rows", path.display());
    }
    Ok(out)
}
