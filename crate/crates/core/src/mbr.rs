//! Expected-utility (MBR) scoring: the Monte-Carlo estimate over a candidate
//! set that doubles as its own reference set, and the exact value under a
//! reference policy by enumeration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::policy::TabularPolicy;
use crate::seqcore::{Sequence, SequenceSpace};
use crate::utility::{pair_utility, UtilityKind, UtilityMatrix, UtilityTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MbrMode {
    MonteCarlo,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbrScore {
    pub index: usize,
    pub score: f64,
    pub mode: MbrMode,
}

/// `u_hat(y_i) = (1/G) sum_j u(y_i, y_j)` over the candidates themselves.
pub fn mc_expected_utility(kind: UtilityKind, candidates: &[Sequence]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(UtilityMatrix::build(kind, candidates).row_means(false))
}

/// First index holding the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn mbr_select(kind: UtilityKind, candidates: &[Sequence]) -> Result<MbrScore> {
    let scores = mc_expected_utility(kind, candidates)?;
    let index = argmax(&scores);
    Ok(MbrScore {
        index,
        score: scores[index],
        mode: MbrMode::MonteCarlo,
    })
}

/// `u_m(y | q) = sum_{y'} u(y, y') pi_ref(y' | q)` over the full output space.
pub fn exact_expected_utility(
    kind: UtilityKind,
    ref_policy: &TabularPolicy,
    prompt: usize,
    y: &Sequence,
) -> Result<f64> {
    y.validate(ref_policy.vocab(), ref_policy.l_max())?;
    let space = SequenceSpace::new(ref_policy.vocab(), ref_policy.l_max())?;
    let dist = ref_policy.distribution(prompt, &space);
    let v: f64 = space
        .sequences()
        .iter()
        .zip(&dist)
        .map(|(other, p)| pair_utility(kind, y, other) * p)
        .sum();
    Ok(v.clamp(0.0, 1.0))
}

/// `u_m` for every sequence of the space, given a precomputed utility table.
pub fn exact_expected_utilities(table: &UtilityTable, ref_dist: &[f64]) -> Vec<f64> {
    table.apply(ref_dist).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

pub fn mbr_select_exact(kind: UtilityKind, ref_policy: &TabularPolicy, prompt: usize) -> Result<MbrScore> {
    let space = SequenceSpace::new(ref_policy.vocab(), ref_policy.l_max())?;
    let table = UtilityTable::build(kind, space.sequences(), Execution::default())?;
    Ok(mbr_select_exact_in(&space, &table, ref_policy, prompt))
}

/// The returned index refers to the enumeration order of `space`.
pub fn mbr_select_exact_in(
    space: &SequenceSpace,
    table: &UtilityTable,
    ref_policy: &TabularPolicy,
    prompt: usize,
) -> MbrScore {
    let dist = ref_policy.distribution(prompt, space);
    let scores = exact_expected_utilities(table, &dist);
    let index = argmax(&scores);
    MbrScore {
        index,
        score: scores[index],
        mode: MbrMode::Exact,
    }
}
