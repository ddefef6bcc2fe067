//! Running one policy against one user for a full horizon.

use crate::log::Record;
use crate::model::{expected_reward, oracle_action, sample_reward, ArmSpec, OracleMode, Trajectory};
use crate::policy::{Diagnostics, Policy};
use crate::rng::EpisodeStreams;

/// Everything an episode produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Per-round regret against the oracle, index `t − 1`.
    pub regret: Vec<f64>,
    /// The user's interaction log.
    pub records: Vec<Record>,
    pub diagnostics: Diagnostics,
}

impl Episode {
    pub fn cumulative_regret(&self) -> Vec<f64> {
        running_sum(&self.regret)
    }

    /// Average observed reward over rounds `1..=t`, index `t − 1`.
    pub fn mean_reward(&self) -> Vec<f64> {
        running_sum(&self.records.iter().map(|r| r.reward).collect::<Vec<_>>())
            .iter()
            .enumerate()
            .map(|(i, s)| s / (i + 1) as f64)
            .collect()
    }

    pub fn pull_counts(&self, n_arms: usize) -> Vec<usize> {
        let mut c = vec![0; n_arms];
        for r in &self.records {
            c[r.arm] += 1;
        }
        c
    }
}

pub(crate) fn running_sum(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Plays `policy` for `horizon` rounds. The oracle follows its own
/// trajectory; regret compares expectations, not noisy draws.
pub fn run_episode<P: Policy + ?Sized>(
    arms: &[ArmSpec],
    horizon: usize,
    oracle_mode: OracleMode,
    policy: &mut P,
    streams: &mut EpisodeStreams,
) -> Episode {
    let mut traj = Trajectory::new(arms);
    let mut oracle = Trajectory::new(arms);
    let mut regret = Vec::with_capacity(horizon);
    let mut records = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        traj.advance(arms);
        oracle.advance(arms);
        let a = policy.select(t, &mut streams.policy);
        let arm = &arms[a];
        let x = traj.states()[a];
        let reward = sample_reward(arm, arm.theta_true, x, &mut streams.noise);
        let o = oracle_action(arms, oracle.states(), t, horizon, oracle_mode);
        let best = expected_reward(&arms[o], arms[o].theta_true, oracle.states()[o]);
        regret.push(best - expected_reward(arm, arm.theta_true, x));
        records.push(Record { t, arm: a, reward });
        policy.observe(t, a, reward);
        traj.record_pull(a);
        oracle.record_pull(o);
    }
    Episode {
        regret,
        records,
        diagnostics: policy.diagnostics(),
    }
}

/// Per-round regret recomputed from a stored log and the true parameters.
pub fn regret_from_log(arms: &[ArmSpec], records: &[Record], horizon: usize, oracle_mode: OracleMode) -> Vec<f64> {
    let mut traj = Trajectory::new(arms);
    let mut oracle = Trajectory::new(arms);
    records
        .iter()
        .map(|r| {
            traj.advance(arms);
            oracle.advance(arms);
            let o = oracle_action(arms, oracle.states(), r.t, horizon, oracle_mode);
            let got = expected_reward(&arms[r.arm], arms[r.arm].theta_true, traj.states()[r.arm]);
            let best = expected_reward(&arms[o], arms[o].theta_true, oracle.states()[o]);
            traj.record_pull(r.arm);
            oracle.record_pull(o);
            best - got
        })
        .collect()
}
