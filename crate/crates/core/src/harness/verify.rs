//! Pure oracle checks; needs no training artifacts.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::{stream_rng, Execution};
use crate::optimizer::{AlgoVariant, RewardMode};
use crate::oracle::{
    baseline_invariance_check, finite_difference_gradient, relative_error, score_baseline_check, AlignmentReport,
    Instance,
};
use crate::policy::TabularPolicy;
use crate::seqcore::{Prompt, Vocab};
use crate::utility::UtilityKind;

pub const PROPORTIONALITY_TOL: f64 = 1e-9;
pub const BASELINE_TOL: f64 = 1e-12;
pub const OBJECTIVE_FD_TOL: f64 = 1e-5;
pub const LOGPROB_FD_TOL: f64 = 1e-6;
/// Gradients below this norm count as stationary for the GRPO sign check.
const STATIONARY: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyParams {
    pub g: Vec<usize>,
    pub vocab: usize,
    pub l_max: usize,
    pub seeds: u64,
    pub kind: UtilityKind,
    /// Mutation test: std-normalise inside the Dr.GRPO path.
    pub break_dr_std: bool,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            g: vec![2],
            vocab: 2,
            l_max: 2,
            seeds: 5,
            kind: UtilityKind::LcsF,
            break_dr_std: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub variant: String,
    #[serde(rename = "G")]
    pub g: usize,
    pub seed: u64,
    /// `on_policy` (reference = theta) or `off_policy`.
    pub sampling: String,
    pub fitted_alpha: f64,
    pub predicted_alpha: f64,
    pub cosine: Option<f64>,
    pub max_residual: f64,
    /// `<E[g_hat], grad L_C>`.
    pub inner_product: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    #[serde(rename = "G")]
    pub g: usize,
    pub seed: u64,
    pub c: f64,
    pub reward_shift_diff: f64,
    pub advantage_shift_diff: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdRow {
    pub seed: u64,
    pub objective_rel_error: f64,
    pub log_prob_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    #[serde(rename = "G")]
    pub g: usize,
    pub seed: u64,
    pub fitted_alpha: f64,
    pub cosine: Option<f64>,
    /// `||E[g_hat] - alpha_fit grad L_C||` with self-consensus rewards.
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub params: VerifyParams,
    pub alignment: Vec<AlignmentRow>,
    pub baseline: Vec<BaselineRow>,
    pub finite_difference: Vec<FdRow>,
    pub self_consensus_gap: Vec<GapRow>,
}

fn row(rep: &AlignmentReport, name: &str, seed: u64, sampling: &str, passed: bool) -> AlignmentRow {
    AlignmentRow {
        variant: name.into(),
        g: rep.g,
        seed,
        sampling: sampling.into(),
        fitted_alpha: rep.fitted_alpha,
        predicted_alpha: rep.predicted_alpha,
        cosine: rep.cosine,
        max_residual: rep.max_residual,
        inner_product: rep.inner_product,
        passed,
    }
}

/// Random `(theta, reference)` for seed `s`.
pub fn verify_instance(vocab: usize, l_max: usize, seed: u64) -> Result<(TabularPolicy, TabularPolicy)> {
    let v = Vocab::new(vocab)?;
    let mut rng = stream_rng(seed, &[0x7e51]);
    let theta = TabularPolicy::random(v.clone(), l_max, 1, 1.0, &mut rng)?;
    let reference = TabularPolicy::random(v, l_max, 1, 1.0, &mut rng)?;
    Ok((theta, reference))
}

pub fn cmd_verify(params: &VerifyParams, exec: Execution) -> Result<VerifyReport> {
    let mut dr = AlgoVariant::dr_grpo().with_reward_mode(RewardMode::Idealized);
    dr.force_std_normalization = params.break_dr_std;
    let grpo = AlgoVariant::grpo().with_reward_mode(RewardMode::Idealized);
    let consensus = AlgoVariant::dr_grpo();
    let mut report = VerifyReport {
        passed: true,
        params: params.clone(),
        alignment: vec![],
        baseline: vec![],
        finite_difference: vec![],
        self_consensus_gap: vec![],
    };
    for seed in 0..params.seeds {
        let (theta, off) = verify_instance(params.vocab, params.l_max, seed)?;
        let inst = Instance::new(params.kind, &theta)?.with_execution(exec);
        for &g in &params.g {
            for (sampling, reference) in [("on_policy", &theta), ("off_policy", &off)] {
                let rep = inst.alignment_report(&theta, reference, 0, g, &dr)?;
                let ok = rep.max_residual <= PROPORTIONALITY_TOL;
                report.alignment.push(row(&rep, "dr_grpo", seed, sampling, ok));

                let rep = inst.alignment_report(&theta, reference, 0, g, &grpo)?;
                let stationary = rep.exact_gradient.norm() <= STATIONARY;
                let ok = stationary || rep.inner_product > 0.0;
                report.alignment.push(row(&rep, "grpo", seed, sampling, ok));
            }
            for c in [0.37, -1.0] {
                let a = baseline_invariance_check(&inst, &theta, &theta, 0, g, c)?;
                let b = score_baseline_check(&inst, &theta, &theta, 0, g, c)?;
                report.baseline.push(BaselineRow {
                    g,
                    seed,
                    c,
                    reward_shift_diff: a,
                    advantage_shift_diff: b,
                    passed: a <= BASELINE_TOL && b <= BASELINE_TOL,
                });
            }
            let rep = inst.alignment_report(&theta, &theta, 0, g, &consensus)?;
            report.self_consensus_gap.push(GapRow {
                g,
                seed,
                fitted_alpha: rep.fitted_alpha,
                cosine: rep.cosine,
                residual_norm: rep.orthogonal_residual(),
            });
        }
        let analytic = inst.gradient(&theta, &off, &[Prompt::new(0, "")])?;
        let fd = finite_difference_gradient(&theta, 1e-5, |p| inst.prompt_objective(p, &off, 0));
        let objective_rel_error = relative_error(&analytic, &fd, 1e-8);
        let mut log_prob_rel_error: f64 = 0.0;
        for y in inst.space.sequences() {
            let analytic = theta.grad_log_prob(0, y)?;
            let fd = finite_difference_gradient(&theta, 1e-5, |p| p.log_prob_unchecked(0, y));
            log_prob_rel_error = log_prob_rel_error.max(relative_error(&analytic, &fd, 1e-8));
        }
        report.finite_difference.push(FdRow {
            seed,
            objective_rel_error,
            log_prob_rel_error,
            passed: objective_rel_error <= OBJECTIVE_FD_TOL && log_prob_rel_error <= LOGPROB_FD_TOL,
        });
    }
    report.passed = report.alignment.iter().all(|r| r.passed)
        && report.baseline.iter().all(|r| r.passed)
        && report.finite_difference.iter().all(|r| r.passed);
    Ok(report)
}
