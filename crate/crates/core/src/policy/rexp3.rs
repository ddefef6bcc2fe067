//! EXP3 with periodic restarts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_categorical, Diagnostics, Policy, PolicyContext, Proposal};
use crate::error::{Error, Result};
use crate::rng::PolicyRng;

/// `γ = min(1, √(K ln K / ((e−1) H)))`.
pub fn default_gamma(n_arms: usize, batch: usize) -> f64 {
    let k = n_arms as f64;
    let v = (k * k.ln() / ((std::f64::consts::E - 1.0) * batch as f64)).sqrt();
    v.min(1.0)
}

/// `H = ⌈(K ln K)^{1/3} T^{2/3}⌉`, at least 1.
pub fn default_batch(n_arms: usize, horizon: usize) -> usize {
    let k = n_arms as f64;
    let h = ((k * k.ln()).cbrt() * (horizon as f64).powf(2.0 / 3.0)).ceil();
    (h as usize).max(1)
}

/// Weights are kept as logarithms so long batches cannot overflow.
#[derive(Debug, Clone, PartialEq)]
pub struct Rexp3State {
    log_weights: Vec<f64>,
    pub gamma: f64,
    pub batch: usize,
    since_restart: usize,
    g_min: f64,
    c_g: f64,
    last_probs: Vec<f64>,
    clamped: usize,
}

impl Rexp3State {
    pub fn new(n_arms: usize, gamma: f64, batch: usize, g_min: f64, c_g: f64) -> Self {
        Rexp3State {
            log_weights: vec![0.0; n_arms],
            gamma,
            batch,
            since_restart: 0,
            g_min,
            c_g,
            last_probs: vec![1.0 / n_arms as f64; n_arms],
            clamped: 0,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.log_weights.len() as f64;
        let top = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self.log_weights.iter().map(|lw| (lw - top).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter()
            .map(|wi| (1.0 - self.gamma) * wi / total + self.gamma / k)
            .collect()
    }

    /// Draws an arm and remembers the distribution for the next update.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (usize, Vec<f64>) {
        let probs = self.probabilities();
        let arm = sample_categorical(&probs, rng);
        self.last_probs = probs.clone();
        (arm, probs)
    }

    pub fn set_last_probabilities(&mut self, probs: &[f64]) {
        self.last_probs = probs.to_vec();
    }

    pub fn update(&mut self, arm: usize, reward: f64) {
        let mut x = (reward - self.g_min) / self.c_g;
        if !(0.0..=1.0).contains(&x) {
            self.clamped += 1;
            x = x.clamp(0.0, 1.0);
        }
        let k = self.log_weights.len() as f64;
        self.log_weights[arm] += self.gamma * (x / self.last_probs[arm]) / k;
        self.since_restart += 1;
        if self.since_restart == self.batch {
            self.log_weights.iter_mut().for_each(|lw| *lw = 0.0);
            self.since_restart = 0;
        }
    }

    pub fn clamped_rewards(&self) -> usize {
        self.clamped
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rexp3Params {
    pub gamma: Option<f64>,
    pub batch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Rexp3 {
    state: Rexp3State,
}

impl Rexp3 {
    pub fn new(ctx: PolicyContext<'_>, params: Rexp3Params) -> Result<Self> {
        let k = ctx.arms.len();
        let batch = params.batch.unwrap_or_else(|| default_batch(k, ctx.horizon));
        if batch == 0 {
            return Err(Error::config("params.batch", "must be >= 1"));
        }
        let gamma = params.gamma.unwrap_or_else(|| default_gamma(k, batch));
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::config("params.gamma", "must lie in (0, 1]"));
        }
        let c_g = ctx.state_box.c_g();
        if !(c_g > 0.0) {
            return Err(Error::config("box", "g_max must exceed g_min for rexp3"));
        }
        Ok(Rexp3 {
            state: Rexp3State::new(k, gamma, batch, ctx.state_box.g_min, c_g),
        })
    }

    pub fn state(&self) -> &Rexp3State {
        &self.state
    }
}

impl Policy for Rexp3 {
    fn n_arms(&self) -> usize {
        self.state.log_weights.len()
    }

    fn select(&mut self, _t: usize, rng: &mut PolicyRng) -> usize {
        self.state.step(&mut rng.draw).0
    }

    fn propose(&mut self, _t: usize, rng: &mut PolicyRng) -> Proposal {
        let (arm, probs) = self.state.step(&mut rng.draw);
        Proposal { arm, probs }
    }

    fn observe(&mut self, _t: usize, arm: usize, reward: f64) {
        self.state.update(arm, reward);
    }

    fn set_sampling_probabilities(&mut self, probs: &[f64]) {
        self.state.set_last_probabilities(probs);
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            clamped_rewards: self.state.clamped,
            singular_fallbacks: 0,
        }
    }
}
