//! Stationary Gaussian Thompson sampling that ignores the state.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyContext, Proposal};
use crate::error::{Error, Result};
use crate::model::argmax_first;
use crate::rng::PolicyRng;

/// Posterior `N(mean, var)` over one arm's mean reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveTsState {
    pub mean: f64,
    pub var: f64,
    pub noise_var: f64,
}

impl NaiveTsState {
    /// Conjugate update with known noise variance.
    pub fn update(&mut self, reward: f64) {
        let precision = 1.0 / self.var + 1.0 / self.noise_var;
        self.mean = (self.mean / self.var + reward / self.noise_var) / precision;
        self.var = 1.0 / precision;
    }
}

pub fn naive_ts_select<R: Rng + ?Sized>(states: &[NaiveTsState], rng: &mut R) -> usize {
    argmax_first(states.iter().map(|s| {
        let z: f64 = StandardNormal.sample(rng);
        s.mean + s.var.sqrt() * z
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveTsParams {
    pub n_samples: usize,
    pub prior_mean: f64,
    /// Defaults to `C_g²`.
    pub prior_var: Option<f64>,
}

impl Default for NaiveTsParams {
    fn default() -> Self {
        NaiveTsParams {
            n_samples: 1000,
            prior_mean: 0.0,
            prior_var: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NaiveTs {
    states: Vec<NaiveTsState>,
    n_samples: usize,
}

impl NaiveTs {
    pub fn new(ctx: PolicyContext<'_>, params: NaiveTsParams) -> Result<Self> {
        if params.n_samples == 0 {
            return Err(Error::config("params.n_samples", "must be >= 1"));
        }
        let c_g = ctx.state_box.c_g();
        let var = params.prior_var.unwrap_or(c_g * c_g);
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::config("params.prior_var", "must be positive"));
        }
        let states = ctx
            .arms
            .iter()
            .map(|a| NaiveTsState {
                mean: params.prior_mean,
                var,
                noise_var: a.sigma * a.sigma,
            })
            .collect();
        Ok(NaiveTs {
            states,
            n_samples: params.n_samples,
        })
    }

    pub fn states(&self) -> &[NaiveTsState] {
        &self.states
    }
}

impl Policy for NaiveTs {
    fn n_arms(&self) -> usize {
        self.states.len()
    }

    fn select(&mut self, _t: usize, rng: &mut PolicyRng) -> usize {
        naive_ts_select(&self.states, &mut rng.draw)
    }

    fn propose(&mut self, _t: usize, rng: &mut PolicyRng) -> Proposal {
        let arm = naive_ts_select(&self.states, &mut rng.draw);
        let mut counts = vec![0usize; self.states.len()];
        counts[arm] += 1;
        for _ in 1..self.n_samples {
            counts[naive_ts_select(&self.states, &mut rng.aux)] += 1;
        }
        let n = self.n_samples as f64;
        Proposal {
            arm,
            probs: counts.iter().map(|&c| c as f64 / n).collect(),
        }
    }

    fn observe(&mut self, _t: usize, arm: usize, reward: f64) {
        self.states[arm].update(reward);
    }
}
