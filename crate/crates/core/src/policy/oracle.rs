//! The regret reference run as a policy. It follows its own counterfactual
//! trajectory, so played alone its regret is identically zero.

use super::{one_hot, Policy, Proposal};
use crate::model::{oracle_action, ArmSpec, OracleMode, Trajectory};
use crate::rng::PolicyRng;

#[derive(Debug, Clone)]
pub struct OraclePolicy {
    arms: Vec<ArmSpec>,
    horizon: usize,
    mode: OracleMode,
    trajectory: Trajectory,
    round: usize,
}

impl OraclePolicy {
    pub fn new(arms: &[ArmSpec], horizon: usize, mode: OracleMode) -> Self {
        OraclePolicy {
            arms: arms.to_vec(),
            horizon,
            mode,
            trajectory: Trajectory::new(arms),
            round: 0,
        }
    }

    fn catch_up(&mut self, t: usize) {
        while self.round < t {
            self.trajectory.advance(&self.arms);
            self.round += 1;
        }
    }
}

impl Policy for OraclePolicy {
    fn n_arms(&self) -> usize {
        self.arms.len()
    }

    fn select(&mut self, t: usize, _rng: &mut PolicyRng) -> usize {
        self.catch_up(t);
        oracle_action(&self.arms, self.trajectory.states(), t, self.horizon, self.mode)
    }

    fn propose(&mut self, t: usize, rng: &mut PolicyRng) -> Proposal {
        let arm = self.select(t, rng);
        Proposal {
            arm,
            probs: one_hot(self.arms.len(), arm),
        }
    }

    fn observe(&mut self, t: usize, arm: usize, _reward: f64) {
        self.catch_up(t);
        self.trajectory.record_pull(arm);
    }
}
