//! Optimism over least-squares fits of each arm's `(θ, x)`.

use serde::{Deserialize, Serialize};

use super::{one_hot, Diagnostics, Policy, PolicyContext, Proposal};
use crate::error::{Error, Result};
use crate::inference::{arm_design, ArmDesign, KnownArm};
use crate::log::Record;
use crate::model::{argmax_first, ArmSpec, StateBox};
use crate::rng::PolicyRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbConfig {
    pub confidence_scale: f64,
    pub lipschitz_g: f64,
    pub sigma: f64,
}

impl UcbConfig {
    /// Scale chosen so a single pull gives a width of exactly `C_g`.
    pub fn calibrated(state_box: &StateBox, lipschitz_g: f64, sigma: f64) -> Self {
        let c_g = state_box.c_g();
        UcbConfig {
            confidence_scale: c_g * c_g / (2.0 * sigma * lipschitz_g.powi(4)),
            lipschitz_g,
            sigma,
        }
    }

    /// `L_g² √(2σ·scale/√n)`.
    pub fn width(&self, n: usize) -> f64 {
        let gamma = self.confidence_scale / (n as f64).sqrt();
        self.lipschitz_g.powi(2) * (2.0 * self.sigma * gamma).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_scale >= 0.0 && self.confidence_scale.is_finite()) {
            return Err(Error::config("params.confidence_scale", "must be finite and >= 0"));
        }
        if !(self.lipschitz_g > 0.0 && self.lipschitz_g.is_finite()) {
            return Err(Error::config("params.lipschitz_g", "must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("params.sigma", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RogueUcbParams {
    pub confidence_scale: Option<f64>,
    /// Defaults to 1.
    pub lipschitz_g: Option<f64>,
    /// Defaults to the largest arm noise level.
    pub sigma: Option<f64>,
}

/// Point estimate of the arm's expected reward at the round after the
/// design's last record. The flag is set when the fit was singular and the
/// state was pinned at the box midpoint.
fn point_estimate(design: &ArmDesign, arm: &KnownArm, state_box: &StateBox) -> (f64, bool) {
    let (c, d) = (arm.state_coef, arm.effect_coef);
    let (z, theta, fallback) = match design.solve() {
        Some((z, theta)) => (z, theta, false),
        None => {
            let z = state_box.x_mid();
            let theta = if design.s11 > 0.0 {
                (design.s1y - z * design.su1) / design.s11
            } else {
                state_box.theta_mid()
            };
            (z, theta, true)
        }
    };
    let x = z * design.unit_next + design.offset_next;
    (c * x + d * theta, fallback)
}

fn index(design: Option<&ArmDesign>, arm: &KnownArm, state_box: &StateBox, cfg: &UcbConfig) -> (f64, bool) {
    match design {
        None => (state_box.g_max, false),
        Some(d) if d.n == 0 => (state_box.g_max, false),
        Some(d) => {
            let (g, fallback) = point_estimate(d, arm, state_box);
            ((g + cfg.width(d.n)).min(state_box.g_max), fallback)
        }
    }
}

/// Upper confidence indices at round `t` from a user's history before `t`.
pub fn rogue_ucb_indices(
    records: &[Record],
    arms: &[ArmSpec],
    state_box: &StateBox,
    cfg: &UcbConfig,
    t: usize,
) -> Vec<f64> {
    assert!(t > records.len(), "history must end before round t");
    arms.iter()
        .enumerate()
        .map(|(a, spec)| {
            let known = KnownArm::from(spec);
            let mut design = arm_design(records, a, &known);
            if let Some(d) = design.as_mut() {
                for _ in records.len() + 1..t {
                    d.push(&known, false, 0.0);
                }
            }
            index(design.as_ref(), &known, state_box, cfg).0
        })
        .collect()
}

/// Arm with the largest upper confidence index, lowest index on ties.
pub fn rogue_ucb_select(records: &[Record], arms: &[ArmSpec], state_box: &StateBox, cfg: &UcbConfig, t: usize) -> usize {
    argmax_first(rogue_ucb_indices(records, arms, state_box, cfg, t))
}

/// Incremental form of [`rogue_ucb_select`]: the same sufficient statistics
/// updated one round at a time.
#[derive(Debug, Clone)]
pub struct RogueUcb {
    arms: Vec<KnownArm>,
    state_box: StateBox,
    cfg: UcbConfig,
    designs: Vec<Option<ArmDesign>>,
    fallbacks: usize,
}

impl RogueUcb {
    pub fn new(ctx: PolicyContext<'_>, params: RogueUcbParams) -> Result<Self> {
        let lipschitz_g = params.lipschitz_g.unwrap_or(1.0);
        let sigma = params
            .sigma
            .unwrap_or_else(|| ctx.arms.iter().map(|a| a.sigma).fold(0.0, f64::max));
        let mut cfg = UcbConfig::calibrated(ctx.state_box, lipschitz_g, sigma);
        if let Some(s) = params.confidence_scale {
            cfg.confidence_scale = s;
        }
        cfg.validate()?;
        Ok(Self::with_config(ctx.arms, *ctx.state_box, cfg))
    }

    pub fn with_config(arms: &[ArmSpec], state_box: StateBox, cfg: UcbConfig) -> Self {
        RogueUcb {
            arms: arms.iter().map(KnownArm::from).collect(),
            state_box,
            cfg,
            designs: vec![None; arms.len()],
            fallbacks: 0,
        }
    }

    pub fn config(&self) -> &UcbConfig {
        &self.cfg
    }

    pub fn indices(&self) -> Vec<f64> {
        self.designs
            .iter()
            .zip(&self.arms)
            .map(|(d, arm)| index(d.as_ref(), arm, &self.state_box, &self.cfg).0)
            .collect()
    }
}

impl Policy for RogueUcb {
    fn n_arms(&self) -> usize {
        self.arms.len()
    }

    fn select(&mut self, _t: usize, _rng: &mut PolicyRng) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (a, (d, arm)) in self.designs.iter().zip(&self.arms).enumerate() {
            let (v, fallback) = index(d.as_ref(), arm, &self.state_box, &self.cfg);
            self.fallbacks += usize::from(fallback);
            if v > best.1 {
                best = (a, v);
            }
        }
        best.0
    }

    fn propose(&mut self, t: usize, rng: &mut PolicyRng) -> Proposal {
        let arm = self.select(t, rng);
        Proposal {
            arm,
            probs: one_hot(self.arms.len(), arm),
        }
    }

    fn observe(&mut self, t: usize, arm: usize, reward: f64) {
        if self.designs[arm].is_none() {
            self.designs[arm] = Some(ArmDesign::start(t));
        }
        for (a, (d, spec)) in self.designs.iter_mut().zip(&self.arms).enumerate() {
            if let Some(d) = d {
                d.push(spec, a == arm, reward);
            }
        }
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            clamped_rewards: 0,
            singular_fallbacks: self.fallbacks,
        }
    }
}
