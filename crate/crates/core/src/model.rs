//! The environment: per-arm linear state dynamics, the linear reward law,
//! scenario configuration, and the oracle used as the regret reference.
//!
//! Each arm carries a scalar state `x` that moves as
//! `x' = a·x + b·[pulled] + k` and an unknown effect `θ`. Pulling the arm
//! yields a Gaussian reward with mean `state_coef·x + effect_coef·θ`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicySpec;

/// One arm's true dynamics, reward coefficients, effect and noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub a_coef: f64,
    pub b_coef: f64,
    pub k_coef: f64,
    pub state_coef: f64,
    pub effect_coef: f64,
    pub theta_true: f64,
    pub x0_true: f64,
    pub sigma: f64,
}

impl ArmSpec {
    /// Checks the invariants; `inference` additionally requires |a| ∉ {0, 1}.
    pub fn validate(&self, path: &str, inference: bool) -> Result<()> {
        let fields = [
            ("a_coef", self.a_coef),
            ("b_coef", self.b_coef),
            ("k_coef", self.k_coef),
            ("state_coef", self.state_coef),
            ("effect_coef", self.effect_coef),
            ("theta_true", self.theta_true),
            ("x0_true", self.x0_true),
            ("sigma", self.sigma),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::config(format!("{path}.{name}"), "must be finite"));
            }
        }
        if self.sigma <= 0.0 {
            return Err(Error::config(format!("{path}.sigma"), "must be > 0"));
        }
        if inference && (self.a_coef == 0.0 || self.a_coef.abs() == 1.0) {
            return Err(Error::config(
                format!("{path}.a_coef"),
                "inference requires |a_coef| not in {0, 1}",
            ));
        }
        Ok(())
    }
}

/// `a·x + b·[pulled] + k`.
pub fn step_state(arm: &ArmSpec, x: f64, pulled: bool) -> f64 {
    arm.a_coef * x + if pulled { arm.b_coef } else { 0.0 } + arm.k_coef
}

/// `state_coef·x + effect_coef·θ`.
pub fn expected_reward(arm: &ArmSpec, theta: f64, x: f64) -> f64 {
    arm.state_coef * x + arm.effect_coef * theta
}

/// Expected reward plus one N(0, σ²) draw from `rng`.
pub fn sample_reward<R: Rng + ?Sized>(arm: &ArmSpec, theta: f64, x: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    expected_reward(arm, theta, x) + arm.sigma * z
}

/// Known bounds on effects, states and expected rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub theta_min: f64,
    pub theta_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub g_min: f64,
    pub g_max: f64,
}

impl StateBox {
    /// Box over the given ranges with reward bounds taken from the corners
    /// of every arm's linear reward.
    pub fn enclosing(theta: (f64, f64), x: (f64, f64), arms: &[ArmSpec]) -> Self {
        let (mut g_min, mut g_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for arm in arms {
            for &th in &[theta.0, theta.1] {
                for &xx in &[x.0, x.1] {
                    let g = expected_reward(arm, th, xx);
                    g_min = g_min.min(g);
                    g_max = g_max.max(g);
                }
            }
        }
        StateBox {
            theta_min: theta.0,
            theta_max: theta.1,
            x_min: x.0,
            x_max: x.1,
            g_min,
            g_max,
        }
    }

    /// Reward range `g_max − g_min`.
    pub fn c_g(&self) -> f64 {
        self.g_max - self.g_min
    }

    pub fn theta_mid(&self) -> f64 {
        0.5 * (self.theta_min + self.theta_max)
    }

    pub fn x_mid(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }

    pub fn validate(&self, path: &str, arms: &[ArmSpec]) -> Result<()> {
        if !(self.theta_min <= self.theta_max) {
            return Err(Error::config(format!("{path}.theta_min"), "theta_min > theta_max"));
        }
        if !(self.x_min <= self.x_max) {
            return Err(Error::config(format!("{path}.x_min"), "x_min > x_max"));
        }
        if !(self.g_min <= self.g_max) {
            return Err(Error::config(format!("{path}.g_min"), "g_min > g_max"));
        }
        let corners = StateBox::enclosing(
            (self.theta_min, self.theta_max),
            (self.x_min, self.x_max),
            arms,
        );
        let tol = 1e-12 * (1.0 + corners.g_max.abs().max(corners.g_min.abs()));
        if corners.g_min < self.g_min - tol {
            return Err(Error::config(
                format!("{path}.g_min"),
                format!("above the smallest corner reward {}", corners.g_min),
            ));
        }
        if corners.g_max > self.g_max + tol {
            return Err(Error::config(
                format!("{path}.g_max"),
                format!("below the largest corner reward {}", corners.g_max),
            ));
        }
        Ok(())
    }
}

/// How the regret reference picks its actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// One-step lookahead on the oracle's own trajectory.
    #[default]
    Greedy,
    /// First action of the best action sequence of the given length.
    Exhaustive { depth: usize },
}

/// A fully specified simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub arms: Vec<ArmSpec>,
    #[serde(rename = "box")]
    pub state_box: StateBox,
    pub horizon: usize,
    pub n_users: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub oracle_mode: OracleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::config("arms", "at least one arm is required"));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        if self.n_users < 1 {
            return Err(Error::config("n_users", "must be >= 1"));
        }
        if let OracleMode::Exhaustive { depth } = self.oracle_mode {
            if depth == 0 {
                return Err(Error::config("oracle_mode.exhaustive.depth", "must be >= 1"));
            }
        }
        for (i, arm) in self.arms.iter().enumerate() {
            arm.validate(&format!("arms[{i}]"), false)?;
        }
        self.state_box.validate("box", &self.arms)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax_first(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// The regret reference's choice at round `t` (1-based) given its own
/// per-arm states.
pub fn oracle_action(
    arms: &[ArmSpec],
    oracle_states: &[f64],
    t: usize,
    horizon: usize,
    mode: OracleMode,
) -> usize {
    match mode {
        OracleMode::Greedy => argmax_first(
            arms.iter()
                .zip(oracle_states)
                .map(|(arm, &x)| expected_reward(arm, arm.theta_true, x)),
        ),
        OracleMode::Exhaustive { depth } => {
            let depth = depth.min(horizon + 1 - t.min(horizon)).max(1);
            best_sequence(arms, oracle_states, depth).0[0]
        }
    }
}

/// Best length-`depth` action sequence by total expected reward, starting
/// from states observed at the current round. Ties go to the
/// lexicographically smallest sequence.
pub fn best_sequence(arms: &[ArmSpec], states: &[f64], depth: usize) -> (Vec<usize>, f64) {
    let n = arms.len();
    let mut seq = vec![0usize; depth];
    let mut best = (seq.clone(), f64::NEG_INFINITY);
    let mut xs = states.to_vec();
    loop {
        xs.copy_from_slice(states);
        let mut total = 0.0;
        for (step, &a) in seq.iter().enumerate() {
            total += expected_reward(&arms[a], arms[a].theta_true, xs[a]);
            if step + 1 < depth {
                for (b, x) in xs.iter_mut().enumerate() {
                    *x = step_state(&arms[b], *x, b == a);
                }
            }
        }
        if total > best.1 {
            best = (seq.clone(), total);
        }
        // odometer increment, last position fastest => lexicographic order
        let mut pos = depth;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            seq[pos] += 1;
            if seq[pos] < n {
                break;
            }
            seq[pos] = 0;
        }
    }
}

/// Tracks the true per-arm states under some action sequence. Round `t`'s
/// state is `t` transitions from `x0_true`; the first transition carries no
/// pull.
#[derive(Debug, Clone)]
pub struct Trajectory {
    states: Vec<f64>,
    last_pull: Option<usize>,
}

impl Trajectory {
    pub fn new(arms: &[ArmSpec]) -> Self {
        Trajectory {
            states: arms.iter().map(|a| a.x0_true).collect(),
            last_pull: None,
        }
    }

    /// Moves every arm to the next round's state.
    pub fn advance(&mut self, arms: &[ArmSpec]) {
        for (a, (arm, x)) in arms.iter().zip(self.states.iter_mut()).enumerate() {
            *x = step_state(arm, *x, self.last_pull == Some(a));
        }
        self.last_pull = None;
    }

    pub fn record_pull(&mut self, arm: usize) {
        self.last_pull = Some(arm);
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }
}
