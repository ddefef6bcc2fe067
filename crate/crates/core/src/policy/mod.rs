//! Action-selection strategies.
//!
//! Every policy answers two questions each round: which arm it would play
//! ([`Policy::select`]) and with what probabilities it plays each arm
//! ([`Policy::propose`]). The second form is what the clipping layer needs.
//! `propose` consumes the `draw` stream exactly like `select` and returns the
//! same arm, so wrapping a policy never changes its own randomness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArmSpec, OracleMode, StateBox};
use crate::rng::PolicyRng;

pub mod naive_ts;
pub mod oracle;
pub mod rexp3;
pub mod rogue_ts;
pub mod rogue_ucb;
pub mod uniform;

pub use naive_ts::{naive_ts_select, NaiveTs, NaiveTsState};
pub use oracle::OraclePolicy;
pub use rexp3::{Rexp3, Rexp3State};
pub use rogue_ts::{rogue_ts_select, ts_action_probabilities, RogueTs};
pub use rogue_ucb::{rogue_ucb_select, RogueUcb, UcbConfig};
pub use uniform::{uniform_select, Uniform};

/// An arm together with the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub arm: usize,
    pub probs: Vec<f64>,
}

/// Counters surfaced in episode diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Rewards outside `[g_min, g_max]` clamped before a rescaled update.
    pub clamped_rewards: usize,
    /// Rounds where a least-squares fit was singular and a fallback was used.
    pub singular_fallbacks: usize,
}

pub trait Policy: Send {
    fn n_arms(&self) -> usize;

    /// The arm this policy plays at round `t` (1-based).
    fn select(&mut self, t: usize, rng: &mut PolicyRng) -> usize;

    /// The action distribution at round `t` with an arm drawn from it.
    fn propose(&mut self, t: usize, rng: &mut PolicyRng) -> Proposal;

    /// Feeds back the arm actually played and its reward.
    fn observe(&mut self, t: usize, arm: usize, reward: f64);

    /// Tells the policy the distribution its last action was really drawn from.
    fn set_sampling_probabilities(&mut self, _probs: &[f64]) {}

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::default()
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn n_arms(&self) -> usize {
        (**self).n_arms()
    }
    fn select(&mut self, t: usize, rng: &mut PolicyRng) -> usize {
        (**self).select(t, rng)
    }
    fn propose(&mut self, t: usize, rng: &mut PolicyRng) -> Proposal {
        (**self).propose(t, rng)
    }
    fn observe(&mut self, t: usize, arm: usize, reward: f64) {
        (**self).observe(t, arm, reward)
    }
    fn set_sampling_probabilities(&mut self, probs: &[f64]) {
        (**self).set_sampling_probabilities(probs)
    }
    fn diagnostics(&self) -> Diagnostics {
        (**self).diagnostics()
    }
}

/// Draws an index from a categorical distribution with one uniform variate.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed on the rounding gap at the top; take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub(crate) fn one_hot(n: usize, arm: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[arm] = 1.0;
    v
}

/// Policy families available from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RogueTs,
    NaiveTs,
    Rexp3,
    RogueUcb,
    Uniform,
    Oracle,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::RogueTs => "rogue_ts",
            PolicyKind::NaiveTs => "naive_ts",
            PolicyKind::Rexp3 => "rexp3",
            PolicyKind::RogueUcb => "rogue_ucb",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Oracle => "oracle",
        }
    }
}

/// `{"kind": "rogue_ts", "params": {...}, "clipped": false}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
    #[serde(default)]
    pub clipped: bool,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        PolicySpec {
            kind,
            params: serde_json::Value::Null,
            clipped: false,
        }
    }

    pub fn clipped(mut self) -> Self {
        self.clipped = true;
        self
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    /// Report label, e.g. `rogue_ts` or `rogue_ts_clip`.
    pub fn label(&self) -> String {
        if self.clipped {
            format!("{}_clip", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }
}

/// What a policy may know when it is built: arm dynamics and reward
/// coefficients (not `theta_true` / `x0_true`, except for the oracle), the
/// box, and the horizon.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub arms: &'a [ArmSpec],
    pub state_box: &'a StateBox,
    pub horizon: usize,
    pub oracle_mode: OracleMode,
}

fn parse_params<T: serde::de::DeserializeOwned + Default>(value: &serde_json::Value, path: &str) -> Result<T> {
    if value.is_null() {
        return Ok(T::default());
    }
    serde_path_to_error::deserialize(value)
        .map_err(|e| Error::config(format!("{path}.params.{}", e.path()), e.inner().to_string()))
}

/// Builds a fresh (unclipped) policy instance from its spec. `path` prefixes
/// config-error locations.
pub fn build_policy(spec: &PolicySpec, ctx: PolicyContext<'_>, path: &str) -> Result<Box<dyn Policy>> {
    Ok(match spec.kind {
        PolicyKind::RogueTs => Box::new(RogueTs::new(ctx, parse_params(&spec.params, path)?)?),
        PolicyKind::NaiveTs => Box::new(NaiveTs::new(ctx, parse_params(&spec.params, path)?)?),
        PolicyKind::Rexp3 => Box::new(Rexp3::new(ctx, parse_params(&spec.params, path)?)?),
        PolicyKind::RogueUcb => Box::new(RogueUcb::new(ctx, parse_params(&spec.params, path)?)?),
        PolicyKind::Uniform => Box::new(Uniform::new(ctx.arms.len())),
        PolicyKind::Oracle => Box::new(OraclePolicy::new(ctx.arms, ctx.horizon, ctx.oracle_mode)),
    })
}
