//! Tabular autoregressive softmax policy.
//!
//! The state is the last emitted token (or the begin marker), so each prompt
//! owns a `(V+1) x (V+1)` block of logits: rows are states `0..V` plus the
//! begin state `V`, columns are actions `0..V` plus the end action `V`.
//! At generation step `l_max` the end action is forced with probability one.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist;
use crate::seqcore::{Sequence, SequenceSpace, Vocab};

/// Flat parameter / gradient vector laid out as `(prompt, state, action)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|x| *x *= s);
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// A coordinate of [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coord {
    pub prompt: usize,
    pub state: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    vocab: Vocab,
    l_max: usize,
    num_prompts: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(vocab: Vocab, l_max: usize, num_prompts: usize) -> Result<Self> {
        if num_prompts == 0 {
            return Err(Error::Invalid("a policy needs at least one prompt".into()));
        }
        let width = vocab.size() + 1;
        Ok(Self {
            logits: vec![0.0; num_prompts * width * width],
            vocab,
            l_max,
            num_prompts,
        })
    }

    pub fn from_logits(vocab: Vocab, l_max: usize, num_prompts: usize, logits: Vec<f64>) -> Result<Self> {
        let mut p = Self::uniform(vocab, l_max, num_prompts)?;
        if logits.len() != p.logits.len() {
            return Err(Error::Invalid(format!(
                "expected {} logits, got {}",
                p.logits.len(),
                logits.len()
            )));
        }
        p.logits = logits;
        Ok(p)
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(vocab: Vocab, l_max: usize, num_prompts: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::uniform(vocab, l_max, num_prompts)?;
        for x in p.logits.iter_mut() {
            *x = rng.gen_range(-scale..=scale);
        }
        Ok(p)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    /// Number of states (and of actions) per prompt.
    pub fn width(&self) -> usize {
        self.vocab.size() + 1
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    pub fn index(&self, c: Coord) -> usize {
        let w = self.width();
        (c.prompt * w + c.state) * w + c.action
    }

    pub fn coord(&self, index: usize) -> Coord {
        let w = self.width();
        Coord {
            prompt: index / (w * w),
            state: (index / w) % w,
            action: index % w,
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn params(&self) -> ParamVector {
        ParamVector(self.logits.clone())
    }

    pub fn set_params(&mut self, params: &ParamVector) {
        assert_eq!(params.len(), self.logits.len());
        self.logits.copy_from_slice(&params.0);
    }

    /// `theta += scale * direction`
    pub fn apply_update(&mut self, scale: f64, direction: &ParamVector) {
        for (x, d) in self.logits.iter_mut().zip(&direction.0) {
            *x += scale * d;
        }
    }

    pub fn logit(&self, prompt: usize, state: usize, action: usize) -> f64 {
        self.logits[self.index(Coord { prompt, state, action })]
    }

    pub fn set_logit(&mut self, prompt: usize, state: usize, action: usize, value: f64) {
        let i = self.index(Coord { prompt, state, action });
        self.logits[i] = value;
    }

    pub fn row(&self, prompt: usize, state: usize) -> &[f64] {
        let w = self.width();
        let start = (prompt * w + state) * w;
        &self.logits[start..start + w]
    }

    pub fn row_mut(&mut self, prompt: usize, state: usize) -> &mut [f64] {
        let w = self.width();
        let start = (prompt * w + state) * w;
        &mut self.logits[start..start + w]
    }

    /// Softmax over the actions of one state.
    pub fn probs(&self, prompt: usize, state: usize) -> Vec<f64> {
        softmax(self.row(prompt, state))
    }

    pub fn is_compatible(&self, other: &TabularPolicy) -> bool {
        self.vocab.size() == other.vocab.size() && self.l_max == other.l_max && self.num_prompts == other.num_prompts
    }

    fn check(&self, prompt: usize, y: &Sequence) -> Result<()> {
        if prompt >= self.num_prompts {
            return Err(Error::PromptOutOfRange {
                prompt,
                num_prompts: self.num_prompts,
            });
        }
        y.validate(&self.vocab, self.l_max)
    }

    /// Free decisions taken while emitting `y`: `(state, action)` pairs. The
    /// forced end marker at step `l_max` is not included.
    fn decisions<'a>(&'a self, y: &'a Sequence) -> impl Iterator<Item = (usize, usize)> + 'a {
        let bos = self.vocab.bos();
        let eos = self.vocab.eos();
        let toks = y.tokens();
        let free_steps = (toks.len() + 1).min(self.l_max);
        (0..free_steps).map(move |k| {
            let state = if k == 0 { bos } else { toks[k - 1] as usize };
            let action = if k < toks.len() { toks[k] as usize } else { eos };
            (state, action)
        })
    }

    pub fn log_prob(&self, prompt: usize, y: &Sequence) -> Result<f64> {
        self.check(prompt, y)?;
        Ok(self.log_prob_unchecked(prompt, y))
    }

    pub(crate) fn log_prob_unchecked(&self, prompt: usize, y: &Sequence) -> f64 {
        self.decisions(y)
            .map(|(s, a)| {
                let row = self.row(prompt, s);
                row[a] - log_sum_exp(row)
            })
            .sum()
    }

    pub fn grad_log_prob(&self, prompt: usize, y: &Sequence) -> Result<ParamVector> {
        self.check(prompt, y)?;
        let mut g = ParamVector::zeros(self.num_params());
        self.accumulate_grad_log_prob(prompt, y, 1.0, &mut g);
        Ok(g)
    }

    /// `out += scale * grad log pi(y | prompt)`; `y` must already be valid.
    pub fn accumulate_grad_log_prob(&self, prompt: usize, y: &Sequence, scale: f64, out: &mut ParamVector) {
        if scale == 0.0 {
            return;
        }
        for (s, a) in self.decisions(y) {
            let p = self.probs(prompt, s);
            let base = self.index(Coord {
                prompt,
                state: s,
                action: 0,
            });
            for (j, pj) in p.iter().enumerate() {
                let ind = if j == a { 1.0 } else { 0.0 };
                out.0[base + j] += scale * (ind - pj);
            }
        }
    }

    /// Ancestral sampling; returns the sequence and its log-probability.
    pub fn sample_with_log_prob<R: Rng + ?Sized>(&self, prompt: usize, rng: &mut R) -> (Sequence, f64) {
        let eos = self.vocab.eos();
        let mut state = self.vocab.bos();
        let mut tokens = Vec::new();
        let mut lp = 0.0;
        for _ in 0..self.l_max {
            let p = self.probs(prompt, state);
            let a = draw(&p, rng.gen::<f64>());
            lp += p[a].ln();
            if a == eos {
                break;
            }
            tokens.push(a as u32);
            state = a;
        }
        (Sequence::new(tokens), lp)
    }

    pub fn sample<R: Rng + ?Sized>(&self, prompt: usize, rng: &mut R) -> Sequence {
        self.sample_with_log_prob(prompt, rng).0
    }

    /// Argmax decoding, ties going to the lowest action id.
    pub fn greedy_decode(&self, prompt: usize) -> Sequence {
        let eos = self.vocab.eos();
        let mut state = self.vocab.bos();
        let mut tokens = Vec::new();
        for _ in 0..self.l_max {
            let row = self.row(prompt, state);
            let mut best = 0;
            for (a, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = a;
                }
            }
            if best == eos {
                break;
            }
            tokens.push(best as u32);
            state = best;
        }
        Sequence::new(tokens)
    }

    /// `pi(y | prompt)` for every `y` of `space`, in enumeration order.
    pub fn distribution(&self, prompt: usize, space: &SequenceSpace) -> Vec<f64> {
        self.log_distribution(prompt, space).into_iter().map(f64::exp).collect()
    }

    pub fn log_distribution(&self, prompt: usize, space: &SequenceSpace) -> Vec<f64> {
        // Log-softmax tables once per prompt, then one lookup per decision.
        let w = self.width();
        let mut table = vec![0.0; w * w];
        for s in 0..w {
            let row = self.row(prompt, s);
            let lse = log_sum_exp(row);
            for a in 0..w {
                table[s * w + a] = row[a] - lse;
            }
        }
        space
            .sequences()
            .iter()
            .map(|y| self.decisions(y).map(|(s, a)| table[s * w + a]).sum())
            .collect()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        persist::write_json(path, &Checkpoint::from(self))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = persist::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.into_policy()
    }
}

/// On-disk checkpoint layout: `logits[prompt][state][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub vocab_size: usize,
    pub l_max: usize,
    pub num_prompts: usize,
    pub logits: Vec<Vec<Vec<f64>>>,
}

impl From<&TabularPolicy> for Checkpoint {
    fn from(p: &TabularPolicy) -> Self {
        let w = p.width();
        let logits = (0..p.num_prompts)
            .map(|q| (0..w).map(|s| p.row(q, s).to_vec()).collect())
            .collect();
        Checkpoint {
            vocab_size: p.vocab.size(),
            l_max: p.l_max,
            num_prompts: p.num_prompts,
            logits,
        }
    }
}

impl Checkpoint {
    pub fn into_policy(self) -> Result<TabularPolicy> {
        let vocab = Vocab::new(self.vocab_size)?;
        let w = self.vocab_size + 1;
        if self.logits.len() != self.num_prompts
            || self
                .logits
                .iter()
                .any(|b| b.len() != w || b.iter().any(|r| r.len() != w))
        {
            return Err(Error::Invalid("checkpoint logits have the wrong shape".into()));
        }
        let flat = self.logits.into_iter().flatten().flatten().collect();
        TabularPolicy::from_logits(vocab, self.l_max, self.num_prompts, flat)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// `KL(pi_a || pi_b)` for one prompt, by enumeration of the output space.
pub fn kl_exact(a: &TabularPolicy, b: &TabularPolicy, prompt: usize) -> Result<f64> {
    if !a.is_compatible(b) {
        return Err(Error::Incompatible("vocabulary, l_max or prompt count differ".into()));
    }
    let space = SequenceSpace::new(a.vocab(), a.l_max())?;
    Ok(kl_exact_in(&space, a, b, prompt))
}

pub fn kl_exact_in(space: &SequenceSpace, a: &TabularPolicy, b: &TabularPolicy, prompt: usize) -> f64 {
    let la = a.log_distribution(prompt, space);
    let lb = b.log_distribution(prompt, space);
    let kl: f64 = la
        .iter()
        .zip(&lb)
        .map(|(&x, &y)| {
            let p = x.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (x - y)
            }
        })
        .sum();
    kl.max(0.0)
}

/// `grad_theta KL(pi_theta || pi_ref)` for one prompt, exact over `space`.
pub fn kl_gradient(
    space: &SequenceSpace,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    prompt: usize,
) -> ParamVector {
    let lp = policy.log_distribution(prompt, space);
    let lr = reference.log_distribution(prompt, space);
    let mut g = ParamVector::zeros(policy.num_params());
    for (i, y) in space.sequences().iter().enumerate() {
        let p = lp[i].exp();
        policy.accumulate_grad_log_prob(prompt, y, p * (lp[i] - lr[i]), &mut g);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(v: usize) -> Vocab {
        Vocab::new(v).unwrap()
    }

    fn seq(t: &[u32]) -> Sequence {
        Sequence::new(t.to_vec())
    }

    /// Central differences of `log_prob` with respect to every logit.
    fn fd_grad(p: &TabularPolicy, q: usize, y: &Sequence, h: f64) -> ParamVector {
        let mut out = ParamVector::zeros(p.num_params());
        for i in 0..p.num_params() {
            let mut plus = p.clone();
            plus.logits[i] += h;
            let mut minus = p.clone();
            minus.logits[i] -= h;
            out.0[i] = (plus.log_prob(q, y).unwrap() - minus.log_prob(q, y).unwrap()) / (2.0 * h);
        }
        out
    }

    #[test]
    fn log_prob_uniform_small() {
        let p = TabularPolicy::uniform(vocab(2), 1, 1).unwrap();
        assert!((p.log_prob(0, &seq(&[])).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((p.log_prob(0, &seq(&[0])).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!(matches!(p.log_prob(0, &seq(&[0, 1])), Err(Error::TooLong { .. })));
    }

    #[test]
    fn log_prob_peaked_end_marker() {
        let mut p = TabularPolicy::uniform(vocab(2), 1, 1).unwrap();
        p.set_logit(0, 2, 2, 10.0);
        let expected = (10f64.exp() / (10f64.exp() + 2.0)).ln();
        let got = p.log_prob(0, &seq(&[])).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!(got.abs() < 1e-4 && got.abs() > 9e-5);
    }

    #[test]
    fn probabilities_sum_to_one_over_random_policies() {
        let v = vocab(3);
        let space = SequenceSpace::new(&v, 3).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = TabularPolicy::random(v.clone(), 3, 2, 3.0, &mut rng).unwrap();
            for q in 0..2 {
                let total: f64 = p.distribution(q, &space).iter().sum();
                assert!((total - 1.0).abs() < 1e-9, "seed {seed}: {total}");
                for s in 0..p.width() {
                    assert!((p.probs(q, s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn log_distribution_matches_log_prob() {
        let v = vocab(2);
        let space = SequenceSpace::new(&v, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TabularPolicy::random(v, 3, 1, 2.0, &mut rng).unwrap();
        let ld = p.log_distribution(0, &space);
        for (i, y) in space.sequences().iter().enumerate() {
            assert!((ld[i] - p.log_prob(0, y).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn softmax_gradient_identity_at_zero_logits() {
        // V=2, l_max=1: the begin state has 3 actions.
        let p = TabularPolicy::uniform(vocab(2), 1, 1).unwrap();
        let g = p.grad_log_prob(0, &seq(&[1])).unwrap();
        let bos = 2;
        for a in 0..3 {
            let v = g.0[p.index(Coord {
                prompt: 0,
                state: bos,
                action: a,
            })];
            let want = if a == 1 { 2.0 / 3.0 } else { -1.0 / 3.0 };
            assert!((v - want).abs() < 1e-15);
        }
        // The forced end marker after token 1 contributes nothing.
        let nonzero = g.0.iter().filter(|x| **x != 0.0).count();
        assert_eq!(nonzero, 3);
        let fd = fd_grad(&p, 0, &seq(&[1]), 1e-5);
        assert!(g.max_abs_diff(&fd) < 1e-9);
    }

    #[test]
    fn saturated_policy_has_vanishing_gradient() {
        let mut p = TabularPolicy::uniform(vocab(2), 2, 1).unwrap();
        // Deterministic path BOS -> 0 -> 1 -> forced end.
        p.set_logit(0, 2, 0, 10.0);
        p.set_logit(0, 0, 1, 10.0);
        let y = seq(&[0, 1]);
        assert_eq!(p.greedy_decode(0), y);
        let g = p.grad_log_prob(0, &y).unwrap();
        assert!(g.max_abs() <= 1e-4, "{}", g.max_abs());
        let fd = fd_grad(&p, 0, &y, 1e-5);
        assert!(fd.max_abs() <= 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = vocab(3);
        let space = SequenceSpace::new(&v, 3).unwrap();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let p = TabularPolicy::random(v.clone(), 3, 2, 2.0, &mut rng).unwrap();
            let y = space.get(rng.gen_range(0..space.len())).clone();
            let q = (seed % 2) as usize;
            let g = p.grad_log_prob(q, &y).unwrap();
            let fd = fd_grad(&p, q, &y, 1e-5);
            let mut diff = g.clone();
            diff.axpy(-1.0, &fd);
            let rel = diff.norm() / fd.norm().max(1e-12);
            assert!(rel <= 1e-6, "seed {seed}: rel {rel}");
        }
    }

    #[test]
    fn score_function_has_zero_mean() {
        let v = vocab(2);
        let space = SequenceSpace::new(&v, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = TabularPolicy::random(v, 3, 1, 2.0, &mut rng).unwrap();
        let dist = p.distribution(0, &space);
        let mut acc = ParamVector::zeros(p.num_params());
        for (i, y) in space.sequences().iter().enumerate() {
            p.accumulate_grad_log_prob(0, y, dist[i], &mut acc);
        }
        assert!(acc.max_abs() <= 1e-10, "{}", acc.max_abs());
    }

    #[test]
    fn sampling_matches_exact_distribution() {
        let p = TabularPolicy::uniform(vocab(2), 1, 1).unwrap();
        let space = SequenceSpace::new(p.vocab(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 300_000;
        let mut counts = vec![0usize; space.len()];
        for _ in 0..n {
            let y = p.sample(0, &mut rng);
            counts[space.index_of(&y).unwrap()] += 1;
        }
        let exact = p.distribution(0, &space);
        let mut tv = 0.0;
        for (c, e) in counts.iter().zip(&exact) {
            let f = *c as f64 / n as f64;
            assert!((f - 1.0 / 3.0).abs() <= 0.01);
            tv += (f - e).abs();
        }
        assert!(tv / 2.0 <= 0.01);
    }

    #[test]
    fn sampled_log_prob_is_exact() {
        let v = vocab(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = TabularPolicy::random(v, 3, 1, 1.5, &mut rng).unwrap();
        for _ in 0..50 {
            let (y, lp) = p.sample_with_log_prob(0, &mut rng);
            assert!((lp - p.log_prob(0, &y).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let v = vocab(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TabularPolicy::random(v, 4, 1, 1.0, &mut rng).unwrap();
        let a = p.sample(0, &mut ChaCha8Rng::seed_from_u64(42));
        let b = p.sample(0, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        let mut det = TabularPolicy::uniform(vocab(2), 3, 1).unwrap();
        det.set_logit(0, 2, 2, 1000.0);
        for s in 0..20 {
            assert!(det.sample(0, &mut ChaCha8Rng::seed_from_u64(s)).is_empty());
        }
    }

    #[test]
    fn greedy_tie_break_and_argmax() {
        let p = TabularPolicy::uniform(vocab(2), 3, 1).unwrap();
        assert_eq!(p.greedy_decode(0), seq(&[0, 0, 0]));
        let mut p = TabularPolicy::uniform(vocab(2), 3, 1).unwrap();
        p.set_logit(0, 2, 2, 1.0);
        assert_eq!(p.greedy_decode(0), seq(&[]));
        let mut p = TabularPolicy::uniform(vocab(2), 3, 1).unwrap();
        p.set_logit(0, 2, 0, 5.0);
        p.set_logit(0, 0, 1, 5.0);
        p.set_logit(0, 1, 2, 5.0);
        assert_eq!(p.greedy_decode(0), seq(&[0, 1]));
    }

    #[test]
    fn kl_properties() {
        let v = vocab(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = TabularPolicy::random(v.clone(), 2, 1, 1.0, &mut rng).unwrap();
        assert_eq!(kl_exact(&a, &a, 0).unwrap(), 0.0);

        // l_max = 0: only the empty sequence exists.
        let u = TabularPolicy::uniform(v.clone(), 0, 1).unwrap();
        let mut shifted = u.clone();
        shifted.set_logit(0, 2, 0, 2f64.ln());
        assert_eq!(kl_exact(&u, &shifted, 0).unwrap(), 0.0);

        // l_max = 1, V = 1: two outcomes, <> and <0>, a Bernoulli pair.
        let v1 = vocab(1);
        let mut pa = TabularPolicy::uniform(v1.clone(), 1, 1).unwrap();
        pa.set_logit(0, 1, 0, 0.7);
        let mut pb = TabularPolicy::uniform(v1, 1, 1).unwrap();
        pb.set_logit(0, 1, 1, -0.4);
        let sa = 1.0 / (1.0 + (-0.7f64).exp());
        let sb = 1.0 / (1.0 + (-0.4f64).exp());
        let closed = sa * (sa / sb).ln() + (1.0 - sa) * ((1.0 - sa) / (1.0 - sb)).ln();
        assert!((kl_exact(&pa, &pb, 0).unwrap() - closed).abs() < 1e-14);
        assert!(kl_exact(&pa, &pb, 0).unwrap() > 0.0);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let v = vocab(2);
        let space = SequenceSpace::new(&v, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = TabularPolicy::random(v.clone(), 2, 1, 1.0, &mut rng).unwrap();
        let r = TabularPolicy::random(v, 2, 1, 1.0, &mut rng).unwrap();
        let g = kl_gradient(&space, &p, &r, 0);
        let h = 1e-5;
        for i in 0..p.num_params() {
            let mut plus = p.clone();
            plus.logits[i] += h;
            let mut minus = p.clone();
            minus.logits[i] -= h;
            let fd = (kl_exact_in(&space, &plus, &r, 0) - kl_exact_in(&space, &minus, &r, 0)) / (2.0 * h);
            assert!((fd - g.0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = TabularPolicy::random(vocab(3), 2, 2, 3.0, &mut rng).unwrap();
        let path = dir.path().join("ck.json");
        p.save_checkpoint(&path).unwrap();
        let back = TabularPolicy::load_checkpoint(&path).unwrap();
        assert_eq!(back.logits(), p.logits());
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(raw["vocab_size"], 3);
        assert_eq!(raw["logits"][1][3].as_array().unwrap().len(), 4);
    }

    #[test]
    fn coordinate_map_is_a_bijection() {
        let p = TabularPolicy::uniform(vocab(3), 2, 3).unwrap();
        assert_eq!(p.num_params(), 3 * 4 * 4);
        for i in 0..p.num_params() {
            assert_eq!(p.index(p.coord(i)), i);
        }
    }
}
