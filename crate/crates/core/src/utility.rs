//! Bounded pairwise utilities `u(a, b)` in `[0, 1]` over content tokens, and
//! the G x G utility matrix behind consensus rewards and MBR selection.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seqcore::{CandidateGroup, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    ExactMatch,
    UnigramF1,
    LcsF,
    EditSim,
}

impl UtilityKind {
    pub const ALL: [UtilityKind; 4] = [
        UtilityKind::ExactMatch,
        UtilityKind::UnigramF1,
        UtilityKind::LcsF,
        UtilityKind::EditSim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UtilityKind::ExactMatch => "exact_match",
            UtilityKind::UnigramF1 => "unigram_f1",
            UtilityKind::LcsF => "lcs_f",
            UtilityKind::EditSim => "edit_sim",
        }
    }

    /// All built-in kinds are symmetric; the property tests check it.
    pub fn is_symmetric(self) -> bool {
        true
    }
}

impl fmt::Display for UtilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UtilityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UtilityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown utility kind {s:?}")))
    }
}

pub fn pair_utility(kind: UtilityKind, a: &Sequence, b: &Sequence) -> f64 {
    let (x, y) = (a.tokens(), b.tokens());
    match kind {
        UtilityKind::ExactMatch => f64::from(u8::from(x == y)),
        UtilityKind::UnigramF1 => {
            if x.is_empty() && y.is_empty() {
                return 1.0;
            }
            // 2PR/(P+R) with P = o/|x|, R = o/|y| reduces to 2o/(|x|+|y|).
            2.0 * multiset_overlap(x, y) as f64 / (x.len() + y.len()) as f64
        }
        UtilityKind::LcsF => {
            if x.is_empty() && y.is_empty() {
                return 1.0;
            }
            2.0 * lcs_len(x, y) as f64 / (x.len() + y.len()) as f64
        }
        UtilityKind::EditSim => {
            let denom = x.len().max(y.len()).max(1);
            1.0 - levenshtein(x, y) as f64 / denom as f64
        }
    }
}

fn multiset_overlap(x: &[u32], y: &[u32]) -> usize {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Longest common subsequence length, two-row DP.
pub fn lcs_len(x: &[u32], y: &[u32]) -> usize {
    if x.is_empty() || y.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; y.len() + 1];
    let mut cur = vec![0usize; y.len() + 1];
    for &a in x {
        for (j, &b) in y.iter().enumerate() {
            cur[j + 1] = if a == b { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[y.len()]
}

/// Unit-cost Levenshtein distance.
pub fn levenshtein(x: &[u32], y: &[u32]) -> usize {
    if x.is_empty() {
        return y.len();
    }
    if y.is_empty() {
        return x.len();
    }
    let mut prev: Vec<usize> = (0..=y.len()).collect();
    let mut cur = vec![0usize; y.len() + 1];
    for (i, &a) in x.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &b) in y.iter().enumerate() {
            let sub = prev[j] + usize::from(a != b);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[y.len()]
}

/// `values[i * size + j] = u(y_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityMatrix {
    pub kind: UtilityKind,
    size: usize,
    values: Vec<f64>,
    evaluations: u64,
}

impl UtilityMatrix {
    pub fn build(kind: UtilityKind, members: &[Sequence]) -> Self {
        Self::build_with(kind, members, Execution::default())
    }

    /// Symmetric kinds evaluate the upper triangle (diagonal included) and
    /// mirror it: `G(G+1)/2` pair evaluations instead of `G^2`.
    pub fn build_with(kind: UtilityKind, members: &[Sequence], exec: Execution) -> Self {
        let g = members.len();
        let counter = AtomicU64::new(0);
        let symmetric = kind.is_symmetric();
        let rows: Vec<Vec<f64>> = exec.map(g, |i| {
            let start = if symmetric { i } else { 0 };
            let row: Vec<f64> = (start..g)
                .map(|j| pair_utility(kind, &members[i], &members[j]))
                .collect();
            counter.fetch_add(row.len() as u64, Ordering::Relaxed);
            row
        });
        let mut values = vec![0.0; g * g];
        for (i, row) in rows.into_iter().enumerate() {
            let start = if symmetric { i } else { 0 };
            for (off, v) in row.into_iter().enumerate() {
                let j = start + off;
                values[i * g + j] = v;
                if symmetric {
                    values[j * g + i] = v;
                }
            }
        }
        Self {
            kind,
            size: g,
            values,
            evaluations: counter.into_inner(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    /// Number of `pair_utility` calls made while filling the matrix.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Row means; with `exclude_self` the diagonal is dropped and the
    /// denominator is `G - 1`.
    pub fn row_means(&self, exclude_self: bool) -> Vec<f64> {
        let g = self.size;
        (0..g)
            .map(|i| {
                let row = self.row(i);
                if exclude_self && g > 1 {
                    let s: f64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
                    s / (g - 1) as f64
                } else {
                    row.iter().sum::<f64>() / g as f64
                }
            })
            .collect()
    }
}

pub fn utility_matrix(kind: UtilityKind, group: &CandidateGroup) -> UtilityMatrix {
    UtilityMatrix::build(kind, &group.members)
}

/// Precomputed `u(y_i, y_j)` for every pair of an enumerated space.
#[derive(Debug, Clone)]
pub struct UtilityTable {
    pub kind: UtilityKind,
    n: usize,
    values: Vec<f64>,
}

impl UtilityTable {
    pub fn build(kind: UtilityKind, seqs: &[Sequence], exec: Execution) -> Result<Self> {
        let n = seqs.len();
        if n.checked_mul(n).is_none_or(|nn| nn > 50_000_000) {
            return Err(Error::CapExceeded {
                required: (n as u128) * (n as u128),
                cap: 50_000_000,
            });
        }
        let m = UtilityMatrix::build_with(kind, seqs, exec);
        Ok(Self {
            kind,
            n,
            values: m.values,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// `out_i = sum_j u(y_i, y_j) * weights_j`.
    pub fn apply(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(weights).map(|(u, w)| u * w).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::{enumerate_space, Vocab};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn s(t: &[u32]) -> Sequence {
        Sequence::new(t.to_vec())
    }

    /// Recursive memoised LCS, independent of the DP above.
    fn lcs_oracle(x: &[u32], y: &[u32]) -> usize {
        fn go(x: &[u32], y: &[u32], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if i == x.len() || j == y.len() {
                return 0;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let v = if x[i] == y[j] {
                1 + go(x, y, i + 1, j + 1, memo)
            } else {
                go(x, y, i + 1, j, memo).max(go(x, y, i, j + 1, memo))
            };
            memo.insert((i, j), v);
            v
        }
        go(x, y, 0, 0, &mut HashMap::new())
    }

    /// Recursive Levenshtein straight from the definition.
    fn lev_oracle(x: &[u32], y: &[u32]) -> usize {
        match (x.split_first(), y.split_first()) {
            (None, _) => y.len(),
            (_, None) => x.len(),
            (Some((a, xr)), Some((b, yr))) => {
                let sub = lev_oracle(xr, yr) + usize::from(a != b);
                sub.min(lev_oracle(xr, y) + 1).min(lev_oracle(x, yr) + 1)
            }
        }
    }

    #[test]
    fn documented_values() {
        let (a, b, c, d) = (0, 1, 2, 3);
        assert_eq!(pair_utility(UtilityKind::LcsF, &s(&[a, b, c]), &s(&[a, b, c])), 1.0);
        let v = pair_utility(UtilityKind::LcsF, &s(&[a, b, c, d]), &s(&[a, c]));
        let p: f64 = 0.5;
        let r: f64 = 1.0;
        assert!((v - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        let v = pair_utility(UtilityKind::UnigramF1, &s(&[a, a, b]), &s(&[a, b, b]));
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(levenshtein(&[a, b], &[a, c]), 1);
        assert_eq!(pair_utility(UtilityKind::EditSim, &s(&[a, b]), &s(&[a, c])), 0.5);
    }

    #[test]
    fn empty_conventions() {
        for k in UtilityKind::ALL {
            assert_eq!(pair_utility(k, &s(&[]), &s(&[])), 1.0, "{k}");
            assert_eq!(pair_utility(k, &s(&[]), &s(&[1, 2])), 0.0, "{k}");
        }
    }

    #[test]
    fn lcs_matches_oracle_exhaustively() {
        let v = Vocab::new(2).unwrap();
        let space = enumerate_space(&v, 5).unwrap();
        for x in &space {
            for y in &space {
                assert_eq!(lcs_len(x.tokens(), y.tokens()), lcs_oracle(x.tokens(), y.tokens()));
            }
        }
    }

    #[test]
    fn levenshtein_matches_oracle() {
        let v = Vocab::new(3).unwrap();
        let space = enumerate_space(&v, 3).unwrap();
        for x in &space {
            for y in &space {
                assert_eq!(levenshtein(x.tokens(), y.tokens()), lev_oracle(x.tokens(), y.tokens()));
            }
        }
    }

    #[test]
    fn matrix_examples_and_counter() {
        let y1 = s(&[0, 1]);
        let y2 = s(&[2, 3]);
        for k in UtilityKind::ALL {
            let m = UtilityMatrix::build(k, &[y1.clone(), y1.clone()]);
            assert!((0..2).all(|i| (0..2).all(|j| m.get(i, j) == 1.0)));
        }
        let m = UtilityMatrix::build(UtilityKind::ExactMatch, &[y1.clone(), y1.clone(), y2.clone()]);
        assert_eq!(m.row(0), &[1.0, 1.0, 0.0]);
        assert_eq!(m.row(1), &[1.0, 1.0, 0.0]);
        assert_eq!(m.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(m.evaluations(), 6);
        assert_eq!(m.row_means(true), vec![0.5, 0.5, 0.0]);

        let members: Vec<Sequence> = (0..32u32).map(|i| s(&[i % 5, i % 3])).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let m = UtilityMatrix::build_with(UtilityKind::LcsF, &members, exec);
            assert_eq!(m.evaluations(), 528);
        }
    }

    #[test]
    fn name_round_trip() {
        for k in UtilityKind::ALL {
            assert_eq!(k.name().parse::<UtilityKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("bleurt".parse::<UtilityKind>().is_err());
    }

    fn seq_strategy() -> impl Strategy<Value = Sequence> {
        prop::collection::vec(0u32..4, 0..7).prop_map(Sequence::new)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn bounded_symmetric_reflexive(a in seq_strategy(), b in seq_strategy()) {
            for k in UtilityKind::ALL {
                let ab = pair_utility(k, &a, &b);
                let ba = pair_utility(k, &b, &a);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert!((ab - ba).abs() <= 1e-15);
                prop_assert_eq!(pair_utility(k, &a, &a), 1.0);
            }
        }
    }
}
