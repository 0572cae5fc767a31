//! The C-GRPO loop: sample groups from the snapshot policy, score them by
//! consensus, form group-relative advantages, and take one ascent step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Execution};
use crate::mbr::exact_expected_utilities;
use crate::policy::TabularPolicy;
use crate::seqcore::{CandidateGroup, Prompt, SequenceSpace};
use crate::utility::{UtilityKind, UtilityMatrix, UtilityTable};

use super::{mean_std, AlgoVariant, RewardMode, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub utility: UtilityKind,
    pub variant: AlgoVariant,
    pub group_size: usize,
    /// Prompts per step; 0 means every prompt.
    pub batch_size: usize,
    pub horizon: usize,
    pub eta_0: f64,
    pub inner_epochs: usize,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "group size must be >= 2, got {}",
                self.group_size
            )));
        }
        self.variant.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub mean_reward: f64,
    /// Mean over the batch of the within-group reward std.
    pub mean_group_std: f64,
    pub estimator_norm_sq: f64,
}

pub struct Trainer {
    cfg: TrainerConfig,
    state: TrainState,
    /// Present when the KL term or idealized rewards need enumeration.
    exact: Option<(SequenceSpace, Option<UtilityTable>)>,
    exec: Execution,
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, initial: TabularPolicy) -> Result<Self> {
        cfg.validate()?;
        let needs_space = cfg.variant.kl_beta > 0.0 || cfg.variant.reward_mode == RewardMode::Idealized;
        let exact = if needs_space {
            let space = SequenceSpace::new(initial.vocab(), initial.l_max())?;
            let table = match cfg.variant.reward_mode {
                RewardMode::Idealized => Some(UtilityTable::build(
                    cfg.utility,
                    space.sequences(),
                    Execution::default(),
                )?),
                RewardMode::SelfConsensus => None,
            };
            Some((space, table))
        } else {
            None
        };
        let state = TrainState::new(initial, cfg.horizon, cfg.eta_0, cfg.inner_epochs)?;
        Ok(Self {
            cfg,
            state,
            exact,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// Prompts used at step `t`: a contiguous, wrapping window.
    pub fn batch_prompts(&self, t: usize) -> Vec<usize> {
        let p = self.state.policy.num_prompts();
        let b = if self.cfg.batch_size == 0 {
            p
        } else {
            self.cfg.batch_size.min(p)
        };
        (0..b).map(|k| (t * b + k) % p).collect()
    }

    /// Samples and scores one group per batch prompt from the snapshot policy.
    pub fn rollout(&self, t: usize) -> Result<Vec<CandidateGroup>> {
        let prompts = self.batch_prompts(t);
        let old = &self.state.old_policy;
        let cfg = &self.cfg;
        let groups = self.exec.map(prompts.len(), |k| -> Result<CandidateGroup> {
            let q = prompts[k];
            let mut rng = stream_rng(cfg.seed, &[t as u64, q as u64]);
            let (members, lps): (Vec<_>, Vec<_>) = (0..cfg.group_size)
                .map(|_| old.sample_with_log_prob(q, &mut rng))
                .unzip();
            let mut group = CandidateGroup::new(Prompt::new(q, ""), members, lps)?;
            let rewards = match (cfg.variant.reward_mode, &self.exact) {
                (RewardMode::SelfConsensus, _) => {
                    UtilityMatrix::build_with(cfg.utility, &group.members, Execution::Sequential)
                        .row_means(cfg.variant.exclude_self)
                }
                (RewardMode::Idealized, Some((space, Some(table)))) => {
                    let um = exact_expected_utilities(table, &old.distribution(q, space));
                    group
                        .members
                        .iter()
                        .map(|y| um[space.index_of(y).expect("sampled sequence is in the space")])
                        .collect()
                }
                (RewardMode::Idealized, _) => unreachable!("idealized rewards always carry a table"),
            };
            group.set_rewards(rewards.into_iter().map(|r| r.clamp(0.0, 1.0)).collect())?;
            Ok(group)
        });
        groups.into_iter().collect()
    }

    pub fn step(&mut self) -> Result<StepSummary> {
        if self.state.is_done() {
            return Err(Error::HorizonExhausted { step: self.state.step });
        }
        let t = self.state.step;
        let batch = self.rollout(t)?;
        let space = if self.cfg.variant.kl_beta > 0.0 {
            self.exact.as_ref().map(|(s, _)| s)
        } else {
            None
        };
        let g = self
            .state
            .batch_estimator(&batch, &self.cfg.variant, space, self.exec)?;
        let estimator_norm_sq = g.norm_sq();
        self.state.apply(&g)?;
        let (mut reward_sum, mut std_sum) = (0.0, 0.0);
        for group in &batch {
            let (m, s) = mean_std(group.rewards.as_deref().unwrap_or(&[]));
            reward_sum += m;
            std_sum += s;
        }
        let n = batch.len() as f64;
        Ok(StepSummary {
            step: self.state.step,
            mean_reward: reward_sum / n,
            mean_group_std: std_sum / n,
            estimator_norm_sq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::Vocab;

    fn cfg(seed: u64) -> TrainerConfig {
        TrainerConfig {
            utility: UtilityKind::LcsF,
            variant: AlgoVariant::dr_grpo(),
            group_size: 8,
            batch_size: 0,
            horizon: 30,
            eta_0: 1.0,
            inner_epochs: 1,
            seed,
        }
    }

    #[test]
    fn trajectories_are_reproducible_across_execution_modes() {
        let init = TabularPolicy::uniform(Vocab::new(3).unwrap(), 3, 4).unwrap();
        let run = |exec| {
            let mut t = Trainer::new(cfg(9), init.clone()).unwrap().with_execution(exec);
            for _ in 0..30 {
                t.step().unwrap();
            }
            t.into_state().policy
        };
        let a = run(Execution::Sequential);
        let b = run(Execution::Parallel);
        assert_eq!(a.logits(), b.logits());
        assert_ne!(a.logits(), init.logits());
    }

    #[test]
    fn batches_wrap_over_prompts() {
        let init = TabularPolicy::uniform(Vocab::new(2).unwrap(), 2, 5).unwrap();
        let mut c = cfg(0);
        c.batch_size = 2;
        let t = Trainer::new(c, init).unwrap();
        assert_eq!(t.batch_prompts(0), vec![0, 1]);
        assert_eq!(t.batch_prompts(2), vec![4, 0]);
    }

    #[test]
    fn idealized_and_kl_modes_run() {
        let init = TabularPolicy::uniform(Vocab::new(2).unwrap(), 2, 2).unwrap();
        let mut c = cfg(1);
        c.variant.reward_mode = RewardMode::Idealized;
        c.variant.kl_beta = 0.1;
        let mut t = Trainer::new(c, init).unwrap();
        let s = t.step().unwrap();
        assert_eq!(s.step, 1);
        assert!(s.mean_reward > 0.0 && s.mean_reward <= 1.0);
    }

    #[test]
    fn rejects_tiny_groups() {
        let init = TabularPolicy::uniform(Vocab::new(2).unwrap(), 2, 1).unwrap();
        let mut c = cfg(0);
        c.group_size = 1;
        assert!(Trainer::new(c, init).is_err());
    }
}
