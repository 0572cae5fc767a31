//! Consensus rewards, group-relative advantages, importance ratios and the
//! GRPO / Dr.GRPO gradient estimator.
//!
//! With `w_i = 1 / (G |y_i|)` for GRPO and `w_i = 1 / G` for Dr.GRPO the
//! estimator is
//!
//! ```text
//! g_hat = sum_i w_i * rho_i * grad log pi(y_i | q) * A_i  -  beta * grad KL(pi || pi_ref)
//! ```
//!
//! where GRPO uses `A_i = (r_i - mean) / (std + eps)` (population std) and
//! Dr.GRPO uses `A_i = r_i - mean`.

mod state;
mod trainer;

pub use state::TrainState;
pub use trainer::{StepSummary, Trainer, TrainerConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{kl_gradient, ParamVector, TabularPolicy};
use crate::seqcore::{CandidateGroup, SequenceSpace};
use crate::utility::{UtilityKind, UtilityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Grpo,
    DrGrpo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Grpo => "grpo",
            Algorithm::DrGrpo => "dr_grpo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// The sampled group is its own reference set.
    SelfConsensus,
    /// Exact expected utility under the frozen snapshot policy.
    Idealized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNorm {
    /// `1 / |y_i|` for each member.
    PerSample,
    /// `1 / mean_i |y_i|` shared by the whole group.
    GroupMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoVariant {
    pub algorithm: Algorithm,
    pub clip_epsilon: Option<f64>,
    pub kl_beta: f64,
    pub std_epsilon: f64,
    pub reward_mode: RewardMode,
    pub exclude_self: bool,
    pub length_norm: LengthNorm,
    /// Mutation hook for the verifier: applies std normalisation inside the
    /// Dr.GRPO path. Never set in real runs.
    #[serde(skip)]
    pub force_std_normalization: bool,
}

impl Default for AlgoVariant {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Grpo,
            clip_epsilon: None,
            kl_beta: 0.0,
            std_epsilon: 1e-8,
            reward_mode: RewardMode::SelfConsensus,
            exclude_self: false,
            length_norm: LengthNorm::PerSample,
            force_std_normalization: false,
        }
    }
}

impl AlgoVariant {
    pub fn grpo() -> Self {
        Self::default()
    }

    pub fn dr_grpo() -> Self {
        Self {
            algorithm: Algorithm::DrGrpo,
            ..Self::default()
        }
    }

    pub fn with_reward_mode(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.clip_epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!("clip_epsilon must be > 0, got {eps}")));
            }
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(Error::Config(format!("kl_beta must be >= 0, got {}", self.kl_beta)));
        }
        if !(self.std_epsilon > 0.0 && self.std_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "std_epsilon must be > 0, got {}",
                self.std_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub algorithm: Algorithm,
    pub group_mean: f64,
    pub group_std: f64,
}

impl AdvantageVector {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&a| a == 0.0)
    }
}

/// `u_hat(y_i | q) = (1/G) sum_j u(y_i, y_j)`; no reference output is consulted.
pub fn consensus_rewards(kind: UtilityKind, group: &CandidateGroup, exclude_self: bool) -> Vec<f64> {
    UtilityMatrix::build(kind, &group.members).row_means(exclude_self)
}

/// Exact `u_m(y_i | q)` under `ref_policy`, for oracle and alignment runs.
pub fn idealized_rewards(kind: UtilityKind, ref_policy: &TabularPolicy, group: &CandidateGroup) -> Result<Vec<f64>> {
    group
        .members
        .iter()
        .map(|y| crate::mbr::exact_expected_utility(kind, ref_policy, group.prompt.id, y))
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn group_advantages(rewards: &[f64], variant: &AlgoVariant) -> AdvantageVector {
    let (mean, std) = mean_std(rewards);
    let degenerate = rewards.iter().all(|&r| r == rewards[0]);
    let normalize = variant.algorithm == Algorithm::Grpo || variant.force_std_normalization;
    let values = if degenerate {
        vec![0.0; rewards.len()]
    } else if normalize {
        let denom = std + variant.std_epsilon;
        rewards.iter().map(|r| (r - mean) / denom).collect()
    } else {
        rewards.iter().map(|r| r - mean).collect()
    };
    AdvantageVector {
        values,
        algorithm: variant.algorithm,
        group_mean: mean,
        group_std: std,
    }
}

/// `rho_i = pi_theta(y_i) / pi_old(y_i)` from the log-probabilities recorded
/// at sampling time.
pub fn importance_ratios(policy: &TabularPolicy, group: &CandidateGroup) -> Result<Vec<f64>> {
    group
        .members
        .iter()
        .zip(&group.old_logprobs)
        .map(|(y, &old)| Ok((policy.log_prob(group.prompt.id, y)? - old).exp()))
        .collect()
}

/// Per-member weights `w_i` of the estimator.
fn sample_weights(group: &CandidateGroup, variant: &AlgoVariant) -> Vec<f64> {
    let g = group.size() as f64;
    match variant.algorithm {
        Algorithm::DrGrpo => vec![1.0 / g; group.size()],
        Algorithm::Grpo => match variant.length_norm {
            LengthNorm::PerSample => group.members.iter().map(|y| 1.0 / (g * y.len() as f64)).collect(),
            LengthNorm::GroupMean => {
                let mean_len = group.members.iter().map(|y| y.len() as f64).sum::<f64>() / g;
                vec![1.0 / (g * mean_len); group.size()]
            }
        },
    }
}

/// Exact KL regulariser inputs, needed only when `kl_beta > 0`.
#[derive(Debug, Clone, Copy)]
pub struct KlTerm<'a> {
    pub reference: &'a TabularPolicy,
    pub space: &'a SequenceSpace,
}

pub fn gradient_estimator(
    policy: &TabularPolicy,
    group: &CandidateGroup,
    adv: &AdvantageVector,
    variant: &AlgoVariant,
    kl: Option<KlTerm<'_>>,
) -> Result<ParamVector> {
    let mut out = ParamVector::zeros(policy.num_params());
    accumulate_estimator(policy, group, adv, variant, kl, 1.0, &mut out)?;
    Ok(out)
}

/// `out += scale * g_hat`.
pub fn accumulate_estimator(
    policy: &TabularPolicy,
    group: &CandidateGroup,
    adv: &AdvantageVector,
    variant: &AlgoVariant,
    kl: Option<KlTerm<'_>>,
    scale: f64,
    out: &mut ParamVector,
) -> Result<()> {
    if adv.algorithm != variant.algorithm {
        return Err(Error::VariantMismatch {
            computed: adv.algorithm.name(),
            requested: variant.algorithm.name(),
        });
    }
    if adv.values.len() != group.size() {
        return Err(Error::InvalidGroup("advantage count differs from group size".into()));
    }
    let q = group.prompt.id;
    if !adv.is_zero() {
        let ratios = importance_ratios(policy, group)?;
        let weights = sample_weights(group, variant);
        for (i, y) in group.members.iter().enumerate() {
            let (rho, a) = (ratios[i], adv.values[i]);
            let active = match variant.clip_epsilon {
                // Gradient flows only where the unclipped term is the minimum.
                Some(eps) => rho * a <= rho.clamp(1.0 - eps, 1.0 + eps) * a,
                None => true,
            };
            if active {
                policy.accumulate_grad_log_prob(q, y, scale * weights[i] * rho * a, out);
            }
        }
    }
    if variant.kl_beta > 0.0 {
        let kl = kl.ok_or_else(|| Error::Invalid("kl_beta > 0 needs a reference policy".into()))?;
        let g = kl_gradient(kl.space, policy, kl.reference, q);
        out.axpy(-scale * variant.kl_beta, &g);
    }
    Ok(())
}
