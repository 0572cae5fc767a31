//! Brute-force ground truth on enumerable instances: the consensus objective
//! `L_C`, its gradient, the exact expectation of the group estimator over all
//! ordered G-tuples, and the reports built on them.
//!
//! Throughout, `u_m` is computed under a frozen reference (snapshot) policy
//! and groups are drawn i.i.d. from that same reference, so the importance
//! ratio is `pi_theta / pi_ref`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mbr::exact_expected_utilities;
use crate::optimizer::{
    accumulate_estimator, group_advantages, mean_std, AdvantageVector, AlgoVariant, Algorithm, KlTerm, RewardMode,
};
use crate::policy::{ParamVector, TabularPolicy};
use crate::seqcore::{CandidateGroup, Prompt, SequenceSpace, DEFAULT_ENUMERATION_CAP};
use crate::utility::{UtilityKind, UtilityTable};

/// Default bound on the number of ordered G-tuples the oracle will visit.
pub const DEFAULT_TUPLE_CAP: u128 = 1_000_000;

/// Tuples folded per work item; fixed so that results do not depend on the
/// execution strategy.
const TUPLE_CHUNK: usize = 2048;

/// Enumerated output space with its pairwise utility table.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: UtilityKind,
    pub space: SequenceSpace,
    pub table: UtilityTable,
    pub tuple_cap: u128,
    pub exec: Execution,
}

impl Instance {
    pub fn new(kind: UtilityKind, policy: &TabularPolicy) -> Result<Self> {
        let space = SequenceSpace::with_cap(policy.vocab(), policy.l_max(), DEFAULT_ENUMERATION_CAP)?;
        let table = UtilityTable::build(kind, space.sequences(), Execution::default())?;
        Ok(Self {
            kind,
            space,
            table,
            tuple_cap: DEFAULT_TUPLE_CAP,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_tuple_cap(mut self, cap: u128) -> Self {
        self.tuple_cap = cap;
        self
    }

    fn check(&self, policy: &TabularPolicy, reference: &TabularPolicy) -> Result<()> {
        if !policy.is_compatible(reference) {
            return Err(Error::Incompatible("policy and reference differ in shape".into()));
        }
        if policy.vocab().size() != self.space.vocab().size() || policy.l_max() != self.space.l_max() {
            return Err(Error::Incompatible("policy does not match the enumerated space".into()));
        }
        Ok(())
    }

    /// `u_m(y | q)` for every `y` of the space.
    pub fn expected_utilities(&self, reference: &TabularPolicy, prompt: usize) -> Vec<f64> {
        exact_expected_utilities(&self.table, &reference.distribution(prompt, &self.space))
    }

    /// `sum_y pi_theta(y | q) u_m(y | q)` for one prompt.
    pub fn prompt_objective(&self, policy: &TabularPolicy, reference: &TabularPolicy, prompt: usize) -> f64 {
        let um = self.expected_utilities(reference, prompt);
        let p = policy.distribution(prompt, &self.space);
        p.iter().zip(&um).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0)
    }

    /// Score-function gradient of the one-prompt objective.
    pub fn prompt_gradient(&self, policy: &TabularPolicy, reference: &TabularPolicy, prompt: usize) -> ParamVector {
        let um = self.expected_utilities(reference, prompt);
        let p = policy.distribution(prompt, &self.space);
        let mut out = ParamVector::zeros(policy.num_params());
        for ((y, pi), u) in self.space.sequences().iter().zip(&p).zip(&um) {
            if *pi > 0.0 && *u != 0.0 {
                policy.accumulate_grad_log_prob(prompt, y, pi * u, &mut out);
            }
        }
        out
    }

    pub fn objective(&self, policy: &TabularPolicy, reference: &TabularPolicy, prompts: &[Prompt]) -> Result<f64> {
        self.check(policy, reference)?;
        let ids = prompt_ids(policy, prompts)?;
        let per = self
            .exec
            .map(ids.len(), |k| self.prompt_objective(policy, reference, ids[k]));
        Ok(per.iter().sum::<f64>() / ids.len() as f64)
    }

    pub fn gradient(
        &self,
        policy: &TabularPolicy,
        reference: &TabularPolicy,
        prompts: &[Prompt],
    ) -> Result<ParamVector> {
        self.check(policy, reference)?;
        let ids = prompt_ids(policy, prompts)?;
        let per = self
            .exec
            .map(ids.len(), |k| self.prompt_gradient(policy, reference, ids[k]));
        let mut out = ParamVector::zeros(policy.num_params());
        for g in &per {
            out.axpy(1.0 / ids.len() as f64, g);
        }
        Ok(out)
    }

    fn tuple_count(&self, g: usize) -> Result<usize> {
        let n = self.space.len() as u128;
        let required = (0..g).try_fold(1u128, |acc, _| acc.checked_mul(n)).unwrap_or(u128::MAX);
        if required > self.tuple_cap {
            return Err(Error::CapExceeded {
                required,
                cap: self.tuple_cap,
            });
        }
        Ok(required as usize)
    }

    /// Visits every ordered G-tuple of space indices with its probability
    /// under `reference`, folding per-chunk accumulators in index order.
    fn fold_tuples<T, F>(
        &self,
        reference: &TabularPolicy,
        prompt: usize,
        g: usize,
        init: impl Fn() -> T + Sync + Send,
        f: F,
    ) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut T, &[usize], f64) -> Result<()> + Sync + Send,
    {
        if g < 2 {
            return Err(Error::InvalidGroup(format!("group size must be >= 2, got {g}")));
        }
        let total = self.tuple_count(g)?;
        let n = self.space.len();
        let dist = reference.distribution(prompt, &self.space);
        let chunks = self.exec.map_chunks(total, TUPLE_CHUNK, |range| -> Result<T> {
            let mut acc = init();
            let mut idx = vec![0usize; g];
            for t in range {
                let mut rest = t;
                let mut prob = 1.0;
                // Most significant digit first, so tuples run in lexicographic order.
                for slot in idx.iter_mut().rev() {
                    *slot = rest % n;
                    rest /= n;
                }
                for &i in &idx {
                    prob *= dist[i];
                }
                if prob > 0.0 {
                    f(&mut acc, &idx, prob)?;
                }
            }
            Ok(acc)
        });
        chunks.into_iter().collect()
    }

    fn tuple_group(&self, prompt: usize, idx: &[usize], ref_logp: &[f64]) -> Result<CandidateGroup> {
        let members = idx.iter().map(|&i| self.space.get(i).clone()).collect();
        let lps = idx.iter().map(|&i| ref_logp[i]).collect();
        CandidateGroup::new(Prompt::new(prompt, ""), members, lps)
    }

    fn tuple_rewards(&self, variant: &AlgoVariant, um: &[f64], idx: &[usize], shift: f64) -> Vec<f64> {
        match variant.reward_mode {
            RewardMode::Idealized => idx.iter().map(|&i| um[i] + shift).collect(),
            RewardMode::SelfConsensus => {
                let g = idx.len();
                idx.iter()
                    .enumerate()
                    .map(|(a, &i)| {
                        let (sum, n) = if variant.exclude_self {
                            let s: f64 = idx
                                .iter()
                                .enumerate()
                                .filter(|(b, _)| *b != a)
                                .map(|(_, &j)| self.table.get(i, j))
                                .sum();
                            (s, g - 1)
                        } else {
                            (idx.iter().map(|&j| self.table.get(i, j)).sum(), g)
                        };
                        sum / n as f64 + shift
                    })
                    .collect()
            }
        }
    }

    /// `E[g_hat]` over all ordered G-tuples drawn from `reference`, with every
    /// reward shifted by `reward_shift`.
    pub fn expected_estimator_shifted(
        &self,
        policy: &TabularPolicy,
        reference: &TabularPolicy,
        prompt: usize,
        g: usize,
        variant: &AlgoVariant,
        reward_shift: f64,
    ) -> Result<ParamVector> {
        self.check(policy, reference)?;
        variant.validate()?;
        let um = self.expected_utilities(reference, prompt);
        let ref_logp = reference.log_distribution(prompt, &self.space);
        let kl = (variant.kl_beta > 0.0).then_some(KlTerm {
            reference,
            space: &self.space,
        });
        let len = policy.num_params();
        let parts = self.fold_tuples(
            reference,
            prompt,
            g,
            || ParamVector::zeros(len),
            |acc, idx, prob| {
                let group = self.tuple_group(prompt, idx, &ref_logp)?;
                let rewards = self.tuple_rewards(variant, &um, idx, reward_shift);
                let adv = group_advantages(&rewards, variant);
                accumulate_estimator(policy, &group, &adv, variant, kl, prob, acc)
            },
        )?;
        let mut out = ParamVector::zeros(len);
        for p in &parts {
            out.axpy(1.0, p);
        }
        Ok(out)
    }

    pub fn expected_estimator(
        &self,
        policy: &TabularPolicy,
        reference: &TabularPolicy,
        prompt: usize,
        g: usize,
        variant: &AlgoVariant,
    ) -> Result<ParamVector> {
        self.expected_estimator_shifted(policy, reference, prompt, g, variant, 0.0)
    }

    /// `E[mean_i(1/|y_i|) / (std + eps)]` over tuples, degenerate tuples
    /// counting as zero. Scales `(G-1)/G` into a first-order GRPO prediction.
    fn grpo_scale(&self, reference: &TabularPolicy, prompt: usize, g: usize, variant: &AlgoVariant) -> Result<f64> {
        let um = self.expected_utilities(reference, prompt);
        let parts = self.fold_tuples(
            reference,
            prompt,
            g,
            || 0.0f64,
            |acc, idx, prob| {
                let rewards = self.tuple_rewards(variant, &um, idx, 0.0);
                if rewards.iter().all(|&r| r == rewards[0]) {
                    return Ok(());
                }
                let (_, std) = mean_std(&rewards);
                let inv_len = idx.iter().map(|&i| 1.0 / self.space.get(i).len() as f64).sum::<f64>() / g as f64;
                *acc += prob * inv_len / (std + variant.std_epsilon);
                Ok(())
            },
        )?;
        Ok(parts.iter().sum())
    }

    /// Compares `E[g_hat]` with `grad L_C` for one prompt.
    pub fn alignment_report(
        &self,
        policy: &TabularPolicy,
        reference: &TabularPolicy,
        prompt: usize,
        g: usize,
        variant: &AlgoVariant,
    ) -> Result<AlignmentReport> {
        let expected = self.expected_estimator(policy, reference, prompt, g, variant)?;
        let exact = self.prompt_gradient(policy, reference, prompt);
        let base = (g as f64 - 1.0) / g as f64;
        let predicted_alpha = match variant.algorithm {
            Algorithm::DrGrpo => base,
            Algorithm::Grpo => base * self.grpo_scale(reference, prompt, g, variant)?,
        };
        Ok(AlignmentReport::new(*variant, g, exact, expected, predicted_alpha))
    }
}

fn prompt_ids(policy: &TabularPolicy, prompts: &[Prompt]) -> Result<Vec<usize>> {
    if prompts.is_empty() {
        return Err(Error::Invalid("no prompts given".into()));
    }
    prompts
        .iter()
        .map(|p| {
            if p.id < policy.num_prompts() {
                Ok(p.id)
            } else {
                Err(Error::PromptOutOfRange {
                    prompt: p.id,
                    num_prompts: policy.num_prompts(),
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub variant: AlgoVariant,
    #[serde(rename = "G")]
    pub g: usize,
    pub exact_gradient: ParamVector,
    pub expected_estimator: ParamVector,
    /// `<E, grad> / ||grad||^2`.
    pub fitted_alpha: f64,
    pub predicted_alpha: f64,
    /// `None` when either vector is zero.
    pub cosine: Option<f64>,
    /// `max |E - predicted_alpha * grad|`.
    pub max_residual: f64,
    pub inner_product: f64,
}

impl AlignmentReport {
    pub fn new(
        variant: AlgoVariant,
        g: usize,
        exact: ParamVector,
        expected: ParamVector,
        predicted_alpha: f64,
    ) -> Self {
        let inner = expected.dot(&exact);
        let gn = exact.norm_sq();
        let en = expected.norm_sq();
        let fitted_alpha = if gn > 0.0 { inner / gn } else { 0.0 };
        let cosine = (gn > 0.0 && en > 0.0).then(|| (inner / (gn.sqrt() * en.sqrt())).clamp(-1.0, 1.0));
        let max_residual = expected
            .as_slice()
            .iter()
            .zip(exact.as_slice())
            .map(|(e, d)| (e - predicted_alpha * d).abs())
            .fold(0.0, f64::max);
        Self {
            variant,
            g,
            exact_gradient: exact,
            expected_estimator: expected,
            fitted_alpha,
            predicted_alpha,
            cosine,
            max_residual,
            inner_product: inner,
        }
    }

    /// `||E - fitted_alpha * grad||_2`: the part of the expected step that is
    /// not along the true gradient.
    pub fn orthogonal_residual(&self) -> f64 {
        let mut r = self.expected_estimator.clone();
        r.axpy(-self.fitted_alpha, &self.exact_gradient);
        r.norm()
    }
}

pub fn exact_objective(
    kind: UtilityKind,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    prompts: &[Prompt],
) -> Result<f64> {
    Instance::new(kind, policy)?.objective(policy, reference, prompts)
}

pub fn exact_gradient(
    kind: UtilityKind,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    prompts: &[Prompt],
) -> Result<ParamVector> {
    Instance::new(kind, policy)?.gradient(policy, reference, prompts)
}

/// `variant.reward_mode` selects idealized or self-consensus rewards.
pub fn expected_estimator(
    kind: UtilityKind,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    prompt: &Prompt,
    g: usize,
    variant: &AlgoVariant,
) -> Result<ParamVector> {
    Instance::new(kind, policy)?.expected_estimator(policy, reference, prompt.id, g, variant)
}

/// Largest component change of the expected Dr.GRPO estimator when every
/// reward is shifted by `c`.
pub fn baseline_invariance_check(
    inst: &Instance,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    prompt: usize,
    g: usize,
    c: f64,
) -> Result<f64> {
    let variant = AlgoVariant::dr_grpo().with_reward_mode(RewardMode::Idealized);
    let a = inst.expected_estimator_shifted(policy, reference, prompt, g, &variant, 0.0)?;
    let b = inst.expected_estimator_shifted(policy, reference, prompt, g, &variant, c)?;
    Ok(a.max_abs_diff(&b))
}

/// Sharper form of the same fact: adding a constant `c` directly to every
/// advantage (no re-centring) changes `E[g_hat]` by `c * E[rho grad log pi]`,
/// which is zero. Returns the largest component of that change.
pub fn score_baseline_check(
    inst: &Instance,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    prompt: usize,
    g: usize,
    c: f64,
) -> Result<f64> {
    inst.check(policy, reference)?;
    let variant = AlgoVariant::dr_grpo();
    let ref_logp = reference.log_distribution(prompt, &inst.space);
    let len = policy.num_params();
    let parts = inst.fold_tuples(
        reference,
        prompt,
        g,
        || ParamVector::zeros(len),
        |acc, idx, prob| {
            let group = inst.tuple_group(prompt, idx, &ref_logp)?;
            let adv = AdvantageVector {
                values: vec![c; g],
                algorithm: Algorithm::DrGrpo,
                group_mean: 0.0,
                group_std: 0.0,
            };
            accumulate_estimator(policy, &group, &adv, &variant, None, prob, acc)
        },
    )?;
    let mut out = ParamVector::zeros(len);
    for p in &parts {
        out.axpy(1.0, p);
    }
    Ok(out.max_abs())
}

/// Central differences of `f` around the policy's logits.
pub fn finite_difference_gradient(policy: &TabularPolicy, h: f64, f: impl Fn(&TabularPolicy) -> f64) -> ParamVector {
    let base = policy.params();
    let mut probe = policy.clone();
    let mut out = ParamVector::zeros(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p.0[i] = base.0[i] + h;
        probe.set_params(&p);
        let up = f(&probe);
        p.0[i] = base.0[i] - h;
        probe.set_params(&p);
        let down = f(&probe);
        out.0[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `max |a - b| / max(max |b|, floor)`.
pub fn relative_error(a: &ParamVector, b: &ParamVector, floor: f64) -> f64 {
    a.max_abs_diff(b) / b.max_abs().max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub objective: f64,
    pub grad_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub points: usize,
    /// Mean of `||grad L_C||^2` over the whole trace.
    pub ergodic_average: f64,
    pub first_decile_mean: f64,
    pub last_decile_mean: f64,
    /// `last / first`, defined as 0 when the first decile is all zero.
    pub decile_ratio: f64,
    pub objective_first: f64,
    pub objective_last: f64,
    pub improved: bool,
    /// Least-squares `C` in `running_average(t) ~ C / sqrt(t)`.
    pub fitted_c: f64,
    pub fit_rms_residual: f64,
}

pub fn convergence_audit(trace: &[TracePoint]) -> Result<ConvergenceReport> {
    const MIN: usize = 20;
    if trace.len() < MIN {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            min: MIN,
        });
    }
    let mut pts = trace.to_vec();
    pts.sort_by_key(|p| p.step);
    let n = pts.len();
    let d = (n / 10).max(1);
    let mean = |xs: &[TracePoint]| xs.iter().map(|p| p.grad_norm_sq).sum::<f64>() / xs.len() as f64;
    let first = mean(&pts[..d]);
    let last = mean(&pts[n - d..]);
    let ratio = if first == 0.0 { 0.0 } else { last / first };

    let mut running = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (k, p) in pts.iter().enumerate() {
        acc += p.grad_norm_sq;
        running.push((p.step, acc / (k + 1) as f64));
    }
    let fit: Vec<(f64, f64)> = running
        .iter()
        .filter(|(t, _)| *t > 0)
        .map(|&(t, a)| (1.0 / (t as f64).sqrt(), a))
        .collect();
    let (fitted_c, fit_rms_residual) = if fit.is_empty() {
        (0.0, 0.0)
    } else {
        let sxx: f64 = fit.iter().map(|(x, _)| x * x).sum();
        let sxy: f64 = fit.iter().map(|(x, y)| x * y).sum();
        let c = sxy / sxx;
        let rss: f64 = fit.iter().map(|(x, y)| (y - c * x).powi(2)).sum();
        (c, (rss / fit.len() as f64).sqrt())
    };
    let (o0, o1) = (pts[0].objective, pts[n - 1].objective);
    Ok(ConvergenceReport {
        points: n,
        ergodic_average: acc / n as f64,
        first_decile_mean: first,
        last_decile_mean: last,
        decile_ratio: ratio,
        objective_first: o0,
        objective_last: o1,
        improved: o1 >= o0,
        fitted_c,
        fit_rms_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::{Sequence, Vocab};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pair(v: usize, l: usize, seed: u64) -> (TabularPolicy, TabularPolicy) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocab::new(v).unwrap();
        let p = TabularPolicy::random(vocab.clone(), l, 1, 1.0, &mut rng).unwrap();
        let r = TabularPolicy::random(vocab, l, 1, 1.0, &mut rng).unwrap();
        (p, r)
    }

    fn q0() -> Vec<Prompt> {
        vec![Prompt::new(0, "")]
    }

    /// Puts almost all mass on `target` with the given logit gap.
    fn saturated(vocab: &Vocab, l: usize, target: &Sequence, gap: f64) -> TabularPolicy {
        let mut p = TabularPolicy::uniform(vocab.clone(), l, 1).unwrap();
        let mut state = vocab.bos();
        for &t in target.tokens() {
            p.set_logit(0, state, t as usize, gap);
            state = t as usize;
        }
        if target.content_len() < l {
            p.set_logit(0, state, vocab.eos(), gap);
        }
        p
    }

    #[test]
    fn objective_examples() {
        let vocab = Vocab::new(2).unwrap();
        let y = Sequence::new(vec![1, 0]);
        let point = saturated(&vocab, 2, &y, 60.0);
        let v = exact_objective(UtilityKind::LcsF, &point, &point, &q0()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);

        // One-step space {<>, <0>, <1>} made uniform: collision probability 1/3.
        let mut u = TabularPolicy::uniform(vocab.clone(), 1, 1).unwrap();
        u.set_logit(0, vocab.bos(), vocab.eos(), 0.0);
        let v = exact_objective(UtilityKind::ExactMatch, &u, &u, &q0()).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);

        for seed in 0..10 {
            let (p, r) = random_pair(3, 2, seed);
            for k in UtilityKind::ALL {
                let v = exact_objective(k, &p, &r, &q0()).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let (p, r) = random_pair(2 + (seed % 2) as usize, 2, seed);
            let kind = UtilityKind::ALL[seed as usize % 4];
            let inst = Instance::new(kind, &p).unwrap();
            let g = inst.gradient(&p, &r, &q0()).unwrap();
            let fd = finite_difference_gradient(&p, 1e-5, |x| inst.prompt_objective(x, &r, 0));
            let err = relative_error(&g, &fd, 1e-8);
            assert!(err <= 1e-5, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn gradient_vanishes_at_saturated_maximiser_and_single_sequence_space() {
        let vocab = Vocab::new(2).unwrap();
        let (_, r) = random_pair(2, 2, 3);
        let inst = Instance::new(UtilityKind::LcsF, &r).unwrap();
        let um = inst.expected_utilities(&r, 0);
        let best = crate::mbr::argmax(&um);
        let p = saturated(&vocab, 2, inst.space.get(best), 12.0);
        assert!(inst.prompt_gradient(&p, &r, 0).norm() <= 1e-3);

        let p = TabularPolicy::uniform(vocab, 0, 1).unwrap();
        let g = exact_gradient(UtilityKind::ExactMatch, &p, &p, &q0()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn dr_grpo_expectation_is_proportional() {
        for (g, seed) in [(2usize, 1u64), (3, 2)] {
            let (p, r) = random_pair(2, 1, seed);
            let inst = Instance::new(UtilityKind::EditSim, &p).unwrap();
            let variant = AlgoVariant::dr_grpo().with_reward_mode(RewardMode::Idealized);
            let rep = inst.alignment_report(&p, &r, 0, g, &variant).unwrap();
            assert_eq!(rep.predicted_alpha, (g as f64 - 1.0) / g as f64);
            assert!(rep.max_residual <= 1e-10, "G={g}: residual {}", rep.max_residual);
            assert!((rep.fitted_alpha - rep.predicted_alpha).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_expected_utility_gives_zero_expectation() {
        // With l_max = 0 every group is <>, <>, ... and rewards never differ.
        let p = TabularPolicy::uniform(Vocab::new(2).unwrap(), 0, 1).unwrap();
        let inst = Instance::new(UtilityKind::LcsF, &p).unwrap();
        let variant = AlgoVariant::dr_grpo().with_reward_mode(RewardMode::Idealized);
        let e = inst.expected_estimator(&p, &p, 0, 2, &variant).unwrap();
        assert_eq!(e.max_abs(), 0.0);
    }

    #[test]
    fn grpo_expectation_points_uphill() {
        for seed in 0..5 {
            let (p, r) = random_pair(2, 2, 40 + seed);
            let inst = Instance::new(UtilityKind::LcsF, &p).unwrap();
            let variant = AlgoVariant::grpo().with_reward_mode(RewardMode::Idealized);
            let rep = inst.alignment_report(&p, &r, 0, 2, &variant).unwrap();
            assert!(rep.inner_product > 0.0);
            assert!(rep.cosine.unwrap() > 0.0);
        }
    }

    #[test]
    fn baselines_do_not_move_the_expectation() {
        let (p, r) = random_pair(2, 2, 8);
        let inst = Instance::new(UtilityKind::UnigramF1, &p).unwrap();
        assert_eq!(baseline_invariance_check(&inst, &p, &r, 0, 2, 0.0).unwrap(), 0.0);
        for (g, c) in [(2, 0.37), (3, -1.0)] {
            assert!(baseline_invariance_check(&inst, &p, &r, 0, g, c).unwrap() <= 1e-12);
            assert!(score_baseline_check(&inst, &p, &r, 0, g, c).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn tuple_cap_names_requirement() {
        let (p, _) = random_pair(2, 2, 0);
        let inst = Instance::new(UtilityKind::LcsF, &p).unwrap().with_tuple_cap(100);
        let err = inst
            .expected_estimator(&p, &p, 0, 3, &AlgoVariant::dr_grpo())
            .unwrap_err();
        assert!(matches!(
            err,
            Error::CapExceeded {
                required: 343,
                cap: 100
            }
        ));
    }

    #[test]
    fn execution_modes_agree_bitwise() {
        let (p, r) = random_pair(2, 2, 5);
        let v = AlgoVariant::grpo();
        let a = Instance::new(UtilityKind::LcsF, &p)
            .unwrap()
            .with_execution(Execution::Sequential);
        let b = a.clone().with_execution(Execution::Parallel);
        let x = a.expected_estimator(&p, &r, 0, 4, &v).unwrap();
        let y = b.expected_estimator(&p, &r, 0, 4, &v).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn audit_examples() {
        let flat: Vec<TracePoint> = (0..30)
            .map(|t| TracePoint {
                step: t * 10,
                objective: 0.4,
                grad_norm_sq: 0.0,
            })
            .collect();
        let rep = convergence_audit(&flat).unwrap();
        assert_eq!((rep.ergodic_average, rep.decile_ratio), (0.0, 0.0));
        assert!(rep.improved);

        let decaying: Vec<TracePoint> = (0..40)
            .map(|t| TracePoint {
                step: t,
                objective: t as f64 / 40.0,
                grad_norm_sq: 1.0 / (1.0 + t as f64),
            })
            .collect();
        let rep = convergence_audit(&decaying).unwrap();
        assert!(rep.decile_ratio < 0.5 && rep.improved && rep.fitted_c > 0.0);
        assert!(matches!(
            convergence_audit(&decaying[..19]),
            Err(Error::TraceTooShort { len: 19, min: 20 })
        ));
    }
}
