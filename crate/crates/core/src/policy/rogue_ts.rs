//! Thompson sampling with exact Kalman posteriors over `(θ_a, x_{a,t})`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyContext, Proposal};
use crate::error::{Error, Result};
use crate::filter::{add_state_jitter, posterior_after_round, GaussianBelief, ObservationModel};
use crate::model::{argmax_first, ArmSpec};
use crate::rng::PolicyRng;

/// Samples one `(θ, x)` per arm and plays the arm with the largest sampled
/// expected reward. Returns the arm and every arm's sampled reward.
pub fn rogue_ts_select<R: Rng + ?Sized>(
    beliefs: &[GaussianBelief],
    obs: &[ObservationModel],
    rng: &mut R,
) -> (usize, Vec<f64>) {
    let sampled: Vec<f64> = beliefs
        .iter()
        .zip(obs)
        .map(|(b, o)| o.h_row.dot(&b.sample(rng)))
        .collect();
    (argmax_first(sampled.iter().copied()), sampled)
}

/// Monte Carlo estimate of the probability that each arm wins the draw.
pub fn ts_action_probabilities<R: Rng + ?Sized>(
    beliefs: &[GaussianBelief],
    obs: &[ObservationModel],
    n_samples: usize,
    rng: &mut R,
) -> Vec<f64> {
    assert!(n_samples >= 1, "n_samples must be >= 1");
    let mut counts = vec![0usize; beliefs.len()];
    for _ in 0..n_samples {
        counts[rogue_ts_select(beliefs, obs, rng).0] += 1;
    }
    counts.iter().map(|&c| c as f64 / n_samples as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RogueTsParams {
    /// Posterior draws used to estimate action probabilities.
    pub n_samples: usize,
    /// Variance added to the state component after each prediction.
    pub jitter: f64,
    /// Prior shared by all arms; defaults to the box prior.
    pub prior: Option<PriorSpec>,
}

impl Default for RogueTsParams {
    fn default() -> Self {
        RogueTsParams {
            n_samples: 1000,
            jitter: 0.0,
            prior: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RogueTs {
    arms: Vec<ArmSpec>,
    obs: Vec<ObservationModel>,
    beliefs: Vec<GaussianBelief>,
    n_samples: usize,
    jitter: f64,
}

impl RogueTs {
    pub fn new(ctx: PolicyContext<'_>, params: RogueTsParams) -> Result<Self> {
        if params.n_samples == 0 {
            return Err(Error::config("params.n_samples", "must be >= 1"));
        }
        if !(params.jitter >= 0.0) {
            return Err(Error::config("params.jitter", "must be >= 0"));
        }
        let prior = match params.prior {
            Some(p) => GaussianBelief::new(p.mean, p.cov),
            None => GaussianBelief::box_prior(ctx.state_box),
        };
        Ok(Self::with_beliefs(ctx.arms, vec![prior; ctx.arms.len()], params.n_samples, params.jitter))
    }

    pub fn with_beliefs(arms: &[ArmSpec], beliefs: Vec<GaussianBelief>, n_samples: usize, jitter: f64) -> Self {
        RogueTs {
            arms: arms.to_vec(),
            obs: arms.iter().map(ObservationModel::for_arm).collect(),
            beliefs,
            n_samples,
            jitter,
        }
    }

    pub fn beliefs(&self) -> &[GaussianBelief] {
        &self.beliefs
    }
}

impl Policy for RogueTs {
    fn n_arms(&self) -> usize {
        self.arms.len()
    }

    fn select(&mut self, _t: usize, rng: &mut PolicyRng) -> usize {
        rogue_ts_select(&self.beliefs, &self.obs, &mut rng.draw).0
    }

    fn propose(&mut self, _t: usize, rng: &mut PolicyRng) -> Proposal {
        // The first draw is the policy's own choice; it is one of the Monte
        // Carlo samples, so given the counts it is distributed as `probs`.
        let arm = rogue_ts_select(&self.beliefs, &self.obs, &mut rng.draw).0;
        let mut counts = vec![0usize; self.arms.len()];
        counts[arm] += 1;
        for _ in 1..self.n_samples {
            counts[rogue_ts_select(&self.beliefs, &self.obs, &mut rng.aux).0] += 1;
        }
        let n = self.n_samples as f64;
        Proposal {
            arm,
            probs: counts.iter().map(|&c| c as f64 / n).collect(),
        }
    }

    fn observe(&mut self, _t: usize, arm: usize, reward: f64) {
        self.beliefs = posterior_after_round(&self.beliefs, arm, reward, &self.arms);
        for b in &mut self.beliefs {
            add_state_jitter(b, self.jitter);
        }
    }
}
