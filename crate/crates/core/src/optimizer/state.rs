use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::policy::{ParamVector, TabularPolicy};
use crate::seqcore::{CandidateGroup, SequenceSpace};

use super::{accumulate_estimator, group_advantages, AlgoVariant, KlTerm};

/// Stochastic-ascent state with the constant step size `eta_0 / sqrt(T)`.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub horizon: usize,
    pub eta_0: f64,
    pub inner_epochs: usize,
    pub policy: TabularPolicy,
    /// Sampling snapshot `pi_old`.
    pub old_policy: TabularPolicy,
    /// Fixed KL anchor (the initial policy).
    pub reference: TabularPolicy,
    /// Running sum of `||g_hat||^2` over applied steps.
    pub estimator_sq_sum: f64,
    pub estimator_steps: usize,
}

impl TrainState {
    pub fn new(policy: TabularPolicy, horizon: usize, eta_0: f64, inner_epochs: usize) -> Result<Self> {
        if !(eta_0 > 0.0 && eta_0.is_finite()) {
            return Err(Error::Config(format!("eta_0 must be > 0, got {eta_0}")));
        }
        if inner_epochs == 0 {
            return Err(Error::Config("inner_epochs must be >= 1".into()));
        }
        Ok(Self {
            step: 0,
            horizon,
            eta_0,
            inner_epochs,
            old_policy: policy.clone(),
            reference: policy.clone(),
            policy,
            estimator_sq_sum: 0.0,
            estimator_steps: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.eta_0 / (self.horizon.max(1) as f64).sqrt()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.horizon
    }

    /// Mean `||g_hat||^2` so far, the empirical second moment of the estimator.
    pub fn mean_estimator_sq(&self) -> f64 {
        if self.estimator_steps == 0 {
            0.0
        } else {
            self.estimator_sq_sum / self.estimator_steps as f64
        }
    }

    /// Batch-average estimator for groups whose `rewards` are already set.
    pub fn batch_estimator(
        &self,
        batch: &[CandidateGroup],
        variant: &AlgoVariant,
        space: Option<&SequenceSpace>,
        exec: Execution,
    ) -> Result<ParamVector> {
        let kl = space.map(|space| KlTerm {
            reference: &self.reference,
            space,
        });
        let parts = exec.map(batch.len(), |b| -> Result<ParamVector> {
            let group = &batch[b];
            let rewards = group
                .rewards
                .as_ref()
                .ok_or_else(|| Error::InvalidGroup("group has no rewards".into()))?;
            let adv = group_advantages(rewards, variant);
            let mut g = ParamVector::zeros(self.policy.num_params());
            accumulate_estimator(&self.policy, group, &adv, variant, kl, 1.0, &mut g)?;
            Ok(g)
        });
        let mut total = ParamVector::zeros(self.policy.num_params());
        let scale = 1.0 / batch.len().max(1) as f64;
        // Fixed summation order keeps trajectories reproducible.
        for part in parts {
            total.axpy(scale, &part?);
        }
        Ok(total)
    }

    /// `theta <- theta + eta * g_hat`, then `t <- t + 1`; the snapshot is
    /// refreshed every `inner_epochs` steps.
    pub fn apply(&mut self, estimator: &ParamVector) -> Result<()> {
        if self.is_done() {
            return Err(Error::HorizonExhausted { step: self.step });
        }
        let lr = self.learning_rate();
        self.policy.apply_update(lr, estimator);
        self.step += 1;
        if !self.policy.params().is_finite() {
            return Err(Error::NumericalAbort { step: self.step });
        }
        self.estimator_sq_sum += estimator.norm_sq();
        self.estimator_steps += 1;
        if self.step.is_multiple_of(self.inner_epochs) {
            self.old_policy = self.policy.clone();
        }
        Ok(())
    }

    pub fn sga_step(
        &mut self,
        batch: &[CandidateGroup],
        variant: &AlgoVariant,
        space: Option<&SequenceSpace>,
    ) -> Result<()> {
        if self.is_done() {
            return Err(Error::HorizonExhausted { step: self.step });
        }
        let g = self.batch_estimator(batch, variant, space, Execution::default())?;
        self.apply(&g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::consensus_rewards;
    use crate::seqcore::{Prompt, Sequence, Vocab};
    use crate::utility::UtilityKind;

    fn state(t: usize) -> TrainState {
        let p = TabularPolicy::uniform(Vocab::new(2).unwrap(), 2, 1).unwrap();
        TrainState::new(p, t, 1.0, 1).unwrap()
    }

    fn group(p: &TabularPolicy, members: Vec<Sequence>) -> CandidateGroup {
        let lp = members.iter().map(|y| p.log_prob(0, y).unwrap()).collect();
        let mut g = CandidateGroup::new(Prompt::new(0, ""), members, lp).unwrap();
        let r = consensus_rewards(UtilityKind::LcsF, &g, false);
        g.set_rewards(r).unwrap();
        g
    }

    #[test]
    fn step_size_is_constant() {
        let s = state(100);
        assert!((s.learning_rate() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_estimator_leaves_parameters() {
        let mut s = state(10);
        let before = s.policy.params();
        let g = group(&s.policy, vec![Sequence::new(vec![1]), Sequence::new(vec![1])]);
        s.sga_step(&[g], &AlgoVariant::dr_grpo(), None).unwrap();
        assert_eq!(s.policy.params(), before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn horizon_is_enforced() {
        let mut s = state(1);
        let g = group(&s.policy, vec![Sequence::new(vec![1]), Sequence::new(vec![0])]);
        s.sga_step(std::slice::from_ref(&g), &AlgoVariant::grpo(), None)
            .unwrap();
        assert!(matches!(
            s.sga_step(&[g], &AlgoVariant::grpo(), None),
            Err(Error::HorizonExhausted { step: 1 })
        ));
    }

    #[test]
    fn snapshot_follows_inner_epochs() {
        let p = TabularPolicy::uniform(Vocab::new(2).unwrap(), 2, 1).unwrap();
        let mut s = TrainState::new(p, 10, 1.0, 2).unwrap();
        let g = group(
            &s.policy,
            vec![
                Sequence::new(vec![1]),
                Sequence::new(vec![1]),
                Sequence::new(vec![0, 0]),
            ],
        );
        s.sga_step(std::slice::from_ref(&g), &AlgoVariant::grpo(), None)
            .unwrap();
        assert_ne!(s.old_policy, s.policy);
        s.sga_step(&[g], &AlgoVariant::grpo(), None).unwrap();
        assert_eq!(s.old_policy, s.policy);
    }

    #[test]
    fn nan_aborts_with_step() {
        let mut s = state(5);
        let mut bad = ParamVector::zeros(s.policy.num_params());
        bad.0[0] = f64::NAN;
        assert!(matches!(s.apply(&bad), Err(Error::NumericalAbort { step: 1 })));
    }
}
