//! Vocabulary, sequence and prompt primitives.
//!
//! Content tokens are `0..V`. The begin marker is the extra *state* `V` and
//! the end marker is the extra *action* `V`; neither ever appears inside a
//! [`Sequence`].

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the number of sequences an enumeration may produce.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
    names: Vec<String>,
}

impl Vocab {
    /// Vocabulary with generated display names (`a`, `b`, ... then `t26`, ...).
    pub fn new(size: usize) -> Result<Self> {
        let names = (0..size)
            .map(|i| {
                if i < 26 {
                    ((b'a' + i as u8) as char).to_string()
                } else {
                    format!("t{i}")
                }
            })
            .collect();
        Self::with_names(names)
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Invalid("vocabulary must hold at least one token".into()));
        }
        Ok(Self {
            size: names.len(),
            names,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Sentinel state index standing for "nothing emitted yet".
    pub fn bos(&self) -> usize {
        self.size
    }

    /// Sentinel action index standing for "stop".
    pub fn eos(&self) -> usize {
        self.size
    }

    pub fn render(&self, y: &Sequence) -> String {
        y.tokens()
            .iter()
            .map(|&t| self.names[t as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A finite token string with an implicit terminating end marker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(Vec<u32>);

impl Sequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of content tokens.
    pub fn content_len(&self) -> usize {
        self.0.len()
    }

    /// Number of sampling decisions: content tokens plus the end marker.
    pub fn len(&self) -> usize {
        self.0.len() + 1
    }

    pub fn validate(&self, vocab: &Vocab, l_max: usize) -> Result<()> {
        if self.0.len() > l_max {
            return Err(Error::TooLong {
                len: self.0.len(),
                l_max,
            });
        }
        if let Some(&token) = self.0.iter().find(|&&t| t as usize >= vocab.size()) {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: vocab.size(),
            });
        }
        Ok(())
    }
}

impl From<Vec<u32>> for Sequence {
    fn from(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }
}

impl PartialOrd for Sequence {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shorter sequences first, then lexicographic by token id.
impl Ord for Sequence {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

/// `|y|`: emitted tokens plus the terminating end marker.
pub fn seq_length(y: &Sequence) -> usize {
    y.len()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    pub text: String,
}

impl Prompt {
    pub fn new(id: usize, text: impl Into<String>) -> Self {
        Self { id, text: text.into() }
    }
}

/// `sum_{l=0}^{l_max} V^l`, saturating.
pub fn space_size(vocab_size: usize, l_max: usize) -> u128 {
    let v = vocab_size as u128;
    let mut total: u128 = 0;
    let mut power: u128 = 1;
    for _ in 0..=l_max {
        total = total.saturating_add(power);
        power = power.saturating_mul(v);
    }
    total
}

/// All sequences of length `0..=l_max`, ordered by (length, tokens).
pub fn enumerate_space(vocab: &Vocab, l_max: usize) -> Result<Vec<Sequence>> {
    enumerate_space_capped(vocab, l_max, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_space_capped(vocab: &Vocab, l_max: usize, cap: u128) -> Result<Vec<Sequence>> {
    let required = space_size(vocab.size(), l_max);
    if required > cap {
        return Err(Error::CapExceeded { required, cap });
    }
    let v = vocab.size() as u32;
    let mut out = Vec::with_capacity(required as usize);
    out.push(Sequence::empty());
    let mut layer_start = 0;
    for _ in 0..l_max {
        let layer_end = out.len();
        for idx in layer_start..layer_end {
            for t in 0..v {
                let mut tokens = out[idx].0.clone();
                tokens.push(t);
                out.push(Sequence(tokens));
            }
        }
        layer_start = layer_end;
    }
    Ok(out)
}

/// An enumerated output space with a reverse index.
#[derive(Debug, Clone)]
pub struct SequenceSpace {
    vocab: Vocab,
    l_max: usize,
    seqs: Vec<Sequence>,
    index: HashMap<Sequence, usize>,
}

impl SequenceSpace {
    pub fn new(vocab: &Vocab, l_max: usize) -> Result<Self> {
        Self::with_cap(vocab, l_max, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(vocab: &Vocab, l_max: usize, cap: u128) -> Result<Self> {
        let seqs = enumerate_space_capped(vocab, l_max, cap)?;
        let index = seqs.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(Self {
            vocab: vocab.clone(),
            l_max,
            seqs,
            index,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.seqs
    }

    pub fn get(&self, i: usize) -> &Sequence {
        &self.seqs[i]
    }

    pub fn index_of(&self, y: &Sequence) -> Option<usize> {
        self.index.get(y).copied()
    }
}

/// G sequences sampled for one prompt, with the snapshot policy's
/// log-probabilities recorded at sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub prompt: Prompt,
    pub members: Vec<Sequence>,
    pub old_logprobs: Vec<f64>,
    pub rewards: Option<Vec<f64>>,
    pub advantages: Option<Vec<f64>>,
}

impl CandidateGroup {
    pub fn new(prompt: Prompt, members: Vec<Sequence>, old_logprobs: Vec<f64>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidGroup(format!(
                "group needs at least 2 members, got {}",
                members.len()
            )));
        }
        if old_logprobs.len() != members.len() {
            return Err(Error::InvalidGroup(format!(
                "{} members but {} log-probabilities",
                members.len(),
                old_logprobs.len()
            )));
        }
        if let Some(lp) = old_logprobs.iter().find(|&&lp| lp.is_nan() || lp > 0.0) {
            return Err(Error::InvalidGroup(format!("log-probability {lp} is not <= 0")));
        }
        Ok(Self {
            prompt,
            members,
            old_logprobs,
            rewards: None,
            advantages: None,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn set_rewards(&mut self, rewards: Vec<f64>) -> Result<()> {
        if rewards.len() != self.members.len() {
            return Err(Error::InvalidGroup("reward count differs from group size".into()));
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidGroup(format!("reward {r} outside [0, 1]")));
        }
        self.rewards = Some(rewards);
        Ok(())
    }
}
