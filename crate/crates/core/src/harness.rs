//! Experiment runner: replicated regret and power studies and their CSV
//! reports.
//!
//! Streams are keyed by `(master_seed, replication, user, policy label)`, so
//! the environment of a replication is shared by every policy while each
//! policy gets its own reward noise. Adding or removing a policy never
//! changes another policy's numbers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{family_test, pooled_estimate, user_arm_least_squares, KnownArm, PooledEstimate};
use crate::model::{ArmSpec, OracleMode, ScenarioConfig, StateBox};
use crate::policy::{build_policy, Diagnostics, Policy, PolicyContext, PolicyKind, PolicySpec};
use crate::power::{required_p_min, ClipBounds, ClippedPolicy, PowerSpec};
use crate::rng::{environment_stream, label_key, EpisodeStreams, SimRng};
use crate::simulate::{run_episode, Episode};

/// Where a replication's environment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    /// The same arms for every user and replication.
    Fixed(ScenarioConfig),
    /// Random linear arms with every coefficient uniform on one range.
    Glm(GlmGenerator),
    /// Per-user random dynamics with effects fixed across users.
    Power(PowerGenerator),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmGenerator {
    pub n_arms: usize,
    pub horizon: usize,
    pub n_users: usize,
    pub master_seed: u64,
    /// Range of `x0`, `θ`, `A`, `B`, `K`, `C` and `D`.
    pub coef_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub oracle_mode: OracleMode,
}

impl Default for GlmGenerator {
    fn default() -> Self {
        GlmGenerator {
            n_arms: 3,
            horizon: 5000,
            n_users: 1,
            master_seed: 0,
            coef_range: (0.0, 1.0),
            sigma_range: (2.0, 3.0),
            oracle_mode: OracleMode::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerGenerator {
    pub n_users: usize,
    pub horizon: usize,
    pub master_seed: u64,
    /// Effect of each arm, shared by all users; its length fixes the arm count.
    pub theta: Vec<f64>,
    pub a_range: (f64, f64),
    pub sigma_range: (f64, f64),
    /// Range of `B`, `K`, the state coefficient and `x0`.
    pub coef_range: (f64, f64),
    pub effect_coef: f64,
    pub oracle_mode: OracleMode,
}

impl Default for PowerGenerator {
    fn default() -> Self {
        PowerGenerator {
            n_users: 15,
            horizon: 90,
            master_seed: 0,
            theta: vec![0.5, 1.0, 0.5],
            a_range: (0.0, 0.9),
            sigma_range: (1.0, 1.5),
            coef_range: (0.0, 1.0),
            effect_coef: 1.0,
            oracle_mode: OracleMode::Greedy,
        }
    }
}

/// Where clipping bounds come from for policies marked `clipped`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Clipping {
    #[default]
    Off,
    /// Per-user exploration floor from the power spec, maximized over arms.
    #[serde(rename = "theorem8")]
    PowerFloor,
    Manual { p_min: f64 },
}

fn default_reps() -> usize {
    20
}

fn default_arm_one() -> usize {
    1
}

fn default_arm_two() -> usize {
    2
}

fn default_arm_three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_reps")]
    pub n_replications: usize,
    #[serde(default)]
    pub outputs: Option<PathBuf>,
    #[serde(default)]
    pub power: Option<PowerSpec>,
    #[serde(default)]
    pub clipping: Clipping,
    /// 1-based arm every other arm is tested against.
    #[serde(default = "default_arm_one")]
    pub baseline_arm: usize,
    /// 1-based arm whose rejection counts toward power.
    #[serde(default = "default_arm_two")]
    pub power_arm: usize,
    /// 1-based arm whose rejection counts as a false positive.
    #[serde(default = "default_arm_three")]
    pub null_arm: usize,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioSource, policies: Vec<PolicySpec>) -> Self {
        ExperimentConfig {
            scenario,
            policies,
            n_replications: default_reps(),
            outputs: None,
            power: None,
            clipping: Clipping::Off,
            baseline_arm: 1,
            power_arm: 2,
            null_arm: 3,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn master_seed(&self) -> u64 {
        match &self.scenario {
            ScenarioSource::Fixed(s) => s.master_seed,
            ScenarioSource::Glm(g) => g.master_seed,
            ScenarioSource::Power(p) => p.master_seed,
        }
    }

    pub fn set_master_seed(&mut self, seed: u64) {
        match &mut self.scenario {
            ScenarioSource::Fixed(s) => s.master_seed = seed,
            ScenarioSource::Glm(g) => g.master_seed = seed,
            ScenarioSource::Power(p) => p.master_seed = seed,
        }
    }

    pub fn horizon(&self) -> usize {
        match &self.scenario {
            ScenarioSource::Fixed(s) => s.horizon,
            ScenarioSource::Glm(g) => g.horizon,
            ScenarioSource::Power(p) => p.horizon,
        }
    }

    pub fn n_users(&self) -> usize {
        match &self.scenario {
            ScenarioSource::Fixed(s) => s.n_users,
            ScenarioSource::Glm(g) => g.n_users,
            ScenarioSource::Power(p) => p.n_users,
        }
    }

    pub fn n_arms(&self) -> usize {
        match &self.scenario {
            ScenarioSource::Fixed(s) => s.arms.len(),
            ScenarioSource::Glm(g) => g.n_arms,
            ScenarioSource::Power(p) => p.theta.len(),
        }
    }

    fn oracle_mode(&self) -> OracleMode {
        match &self.scenario {
            ScenarioSource::Fixed(s) => s.oracle_mode,
            ScenarioSource::Glm(g) => g.oracle_mode,
            ScenarioSource::Power(p) => p.oracle_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replications == 0 {
            return Err(Error::config("n_replications", "must be >= 1"));
        }
        let range = |path: &str, r: (f64, f64)| {
            if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
                Ok(())
            } else {
                Err(Error::config(path, "range must be finite with low <= high"))
            }
        };
        match &self.scenario {
            ScenarioSource::Fixed(s) => s.validate().map_err(|e| prefix(e, "scenario.fixed"))?,
            ScenarioSource::Glm(g) => {
                if g.n_arms == 0 {
                    return Err(Error::config("scenario.glm.n_arms", "must be >= 1"));
                }
                if g.horizon == 0 {
                    return Err(Error::config("scenario.glm.horizon", "must be >= 1"));
                }
                if g.n_users == 0 {
                    return Err(Error::config("scenario.glm.n_users", "must be >= 1"));
                }
                range("scenario.glm.coef_range", g.coef_range)?;
                range("scenario.glm.sigma_range", g.sigma_range)?;
                if !(g.sigma_range.0 > 0.0) {
                    return Err(Error::config("scenario.glm.sigma_range", "noise must be positive"));
                }
            }
            ScenarioSource::Power(p) => {
                if p.theta.len() < 2 {
                    return Err(Error::config("scenario.power.theta", "at least two arms are required"));
                }
                if p.horizon == 0 {
                    return Err(Error::config("scenario.power.horizon", "must be >= 1"));
                }
                if p.n_users == 0 {
                    return Err(Error::config("scenario.power.n_users", "must be >= 1"));
                }
                range("scenario.power.a_range", p.a_range)?;
                range("scenario.power.sigma_range", p.sigma_range)?;
                range("scenario.power.coef_range", p.coef_range)?;
                if !(p.sigma_range.0 > 0.0) {
                    return Err(Error::config("scenario.power.sigma_range", "noise must be positive"));
                }
                if !(p.a_range.1 < 1.0 && p.a_range.0 > -1.0) {
                    return Err(Error::config("scenario.power.a_range", "must lie inside (-1, 1)"));
                }
            }
        }
        let k = self.n_arms();
        for (name, arm) in [
            ("baseline_arm", self.baseline_arm),
            ("power_arm", self.power_arm),
            ("null_arm", self.null_arm),
        ] {
            if arm == 0 {
                return Err(Error::config(name, "arms are 1-based"));
            }
            if matches!(self.scenario, ScenarioSource::Power(_)) && arm > k {
                return Err(Error::config(name, format!("only {k} arms")));
            }
        }
        if let Some(p) = &self.power {
            let probe = PowerSpec {
                n_arms: p.n_arms.max(2),
                ..*p
            };
            probe.validate().map_err(|e| prefix(e, "power"))?;
        }
        match self.clipping {
            Clipping::Off => {
                if let Some(i) = self.policies.iter().position(|p| p.clipped) {
                    return Err(Error::config(
                        format!("policies[{i}].clipped"),
                        "clipped policies need clipping = theorem8 or manual",
                    ));
                }
            }
            Clipping::PowerFloor => {
                if self.power.is_none() {
                    return Err(Error::config("power", "required when clipping = theorem8"));
                }
            }
            Clipping::Manual { p_min } => {
                ClipBounds::from_p_min(p_min, k)
                    .map_err(|e| Error::config("clipping.manual.p_min", e.to_string()))?;
            }
        }
        let mut labels: Vec<String> = self.policies.iter().map(|p| p.label()).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config("policies", format!("duplicate policy `{}`", w[0])));
        }
        Ok(())
    }
}

fn prefix(e: Error, path: &str) -> Error {
    match e {
        Error::Config { path: p, message } => Error::config(format!("{path}.{p}"), message),
        other => other,
    }
}

/// One simulated user: arms with their true parameters and the box the
/// policies are told about.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEnv {
    pub arms: Vec<ArmSpec>,
    pub state_box: StateBox,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        // still consume a draw so one degenerate range does not shift the rest
        let _: f64 = rng.random();
        r.0
    } else {
        r.0 + (r.1 - r.0) * rng.random::<f64>()
    }
}

/// Smallest interval containing every state reachable in `horizon` rounds
/// from any `x0` in `x0_range` under any pull sequence.
pub fn reachable_state_range(arms: &[ArmSpec], x0_range: (f64, f64), horizon: usize) -> (f64, f64) {
    let (mut lo_all, mut hi_all) = x0_range;
    for arm in arms {
        let (mut lo, mut hi) = x0_range;
        for _ in 0..horizon {
            let (a, b) = (arm.a_coef * lo, arm.a_coef * hi);
            let nlo = a.min(b) + arm.b_coef.min(0.0) + arm.k_coef;
            let nhi = a.max(b) + arm.b_coef.max(0.0) + arm.k_coef;
            lo = nlo;
            hi = nhi;
            lo_all = lo_all.min(lo);
            hi_all = hi_all.max(hi);
        }
    }
    (lo_all, hi_all)
}

fn generated_box(arms: &[ArmSpec], theta: (f64, f64), x0: (f64, f64), horizon: usize) -> StateBox {
    StateBox::enclosing(theta, reachable_state_range(arms, x0, horizon), arms)
}

/// The users of replication `rep`. Draws depend only on `(master_seed, rep)`.
pub fn generate_users(source: &ScenarioSource, rep: usize) -> Vec<UserEnv> {
    match source {
        ScenarioSource::Fixed(s) => vec![
            UserEnv {
                arms: s.arms.clone(),
                state_box: s.state_box,
            };
            s.n_users
        ],
        ScenarioSource::Glm(g) => {
            let mut rng = environment_stream(g.master_seed, rep as u64);
            (0..g.n_users)
                .map(|_| {
                    let arms: Vec<ArmSpec> = (0..g.n_arms)
                        .map(|_| glm_arm(&mut rng, g.coef_range, g.sigma_range))
                        .collect();
                    let state_box = generated_box(&arms, g.coef_range, g.coef_range, g.horizon);
                    UserEnv { arms, state_box }
                })
                .collect()
        }
        ScenarioSource::Power(p) => {
            let mut rng = environment_stream(p.master_seed, rep as u64);
            let theta_range = p
                .theta
                .iter()
                .fold((0.0f64, 1.0f64), |(lo, hi), &t| (lo.min(t), hi.max(t)));
            (0..p.n_users)
                .map(|_| {
                    let arms: Vec<ArmSpec> = p
                        .theta
                        .iter()
                        .map(|&theta| ArmSpec {
                            a_coef: uniform(&mut rng, p.a_range),
                            b_coef: uniform(&mut rng, p.coef_range),
                            k_coef: uniform(&mut rng, p.coef_range),
                            state_coef: uniform(&mut rng, p.coef_range),
                            effect_coef: p.effect_coef,
                            theta_true: theta,
                            x0_true: uniform(&mut rng, p.coef_range),
                            sigma: uniform(&mut rng, p.sigma_range),
                        })
                        .collect();
                    let state_box = generated_box(&arms, theta_range, p.coef_range, p.horizon);
                    UserEnv { arms, state_box }
                })
                .collect()
        }
    }
}

fn glm_arm(rng: &mut SimRng, coef: (f64, f64), sigma: (f64, f64)) -> ArmSpec {
    ArmSpec {
        a_coef: uniform(rng, coef),
        b_coef: uniform(rng, coef),
        k_coef: uniform(rng, coef),
        state_coef: uniform(rng, coef),
        effect_coef: uniform(rng, coef),
        theta_true: uniform(rng, coef),
        x0_true: uniform(rng, coef),
        sigma: uniform(rng, sigma),
    }
}

/// Clip bounds for one user, or `None` when clipping is off.
pub fn user_bounds(
    arms: &[ArmSpec],
    clipping: Clipping,
    power: Option<&PowerSpec>,
    n_users: usize,
    horizon: usize,
) -> Result<Option<ClipBounds>> {
    let k = arms.len();
    match clipping {
        Clipping::Off => Ok(None),
        Clipping::Manual { p_min } => ClipBounds::from_p_min(p_min, k).map(Some),
        Clipping::PowerFloor => {
            let base = power.ok_or_else(|| Error::config("power", "required when clipping = theorem8"))?;
            let mut worst = 0.0f64;
            for (a, arm) in arms.iter().enumerate() {
                let spec = PowerSpec {
                    n_users,
                    horizon,
                    n_arms: k,
                    a_abs: arm.a_coef.abs(),
                    sigma: arm.sigma,
                    effect_coef: arm.effect_coef,
                    ..*base
                };
                let p = required_p_min(&spec).map_err(|e| match e {
                    Error::InfeasibleDesign { reason, value } => {
                        Error::infeasible(format!("arm {}: {reason}", a + 1), value)
                    }
                    other => other,
                })?;
                worst = worst.max(p);
            }
            ClipBounds::from_p_min(worst, k).map(Some)
        }
    }
}

fn episode_policy(spec: &PolicySpec, ctx: PolicyContext<'_>, bounds: Option<ClipBounds>, path: &str) -> Result<Box<dyn Policy>> {
    let base = build_policy(spec, ctx, path)?;
    if !spec.clipped {
        return Ok(base);
    }
    let bounds = bounds.ok_or_else(|| Error::config(format!("{path}.clipped"), "no clipping bounds configured"))?;
    Ok(Box::new(ClippedPolicy::new(base, bounds)?))
}

struct EpisodeOut {
    episode: Episode,
}

/// Runs one policy on every user of one replication.
fn run_users(
    cfg: &ExperimentConfig,
    users: &[UserEnv],
    bounds: &[Option<ClipBounds>],
    spec: &PolicySpec,
    path: &str,
    rep: usize,
) -> Result<Vec<EpisodeOut>> {
    let key = label_key(&spec.label());
    let horizon = cfg.horizon();
    users
        .iter()
        .zip(bounds)
        .enumerate()
        .map(|(u, (env, b))| {
            let ctx = PolicyContext {
                arms: &env.arms,
                state_box: &env.state_box,
                horizon,
                oracle_mode: cfg.oracle_mode(),
            };
            let mut policy = episode_policy(spec, ctx, *b, path)?;
            let mut streams = EpisodeStreams::new(cfg.master_seed(), rep as u64, u as u64, key);
            let episode = run_episode(&env.arms, horizon, cfg.oracle_mode(), &mut policy, &mut streams);
            Ok(EpisodeOut { episode })
        })
        .collect()
}

/// Mean and standard error of a per-round series across episodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct SeriesAcc {
    n: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl SeriesAcc {
    fn push(&mut self, v: &[f64]) {
        if self.sum.is_empty() {
            self.sum = vec![0.0; v.len()];
            self.sumsq = vec![0.0; v.len()];
        }
        for (i, x) in v.iter().enumerate() {
            self.sum[i] += x;
            self.sumsq[i] += x * x;
        }
        self.n += 1;
    }

    fn finish(&self, len: usize) -> SeriesStats {
        if self.n == 0 {
            return SeriesStats {
                mean: vec![0.0; len],
                se: vec![0.0; len],
            };
        }
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let se = if self.n < 2 {
            vec![0.0; mean.len()]
        } else {
            self.sumsq
                .iter()
                .zip(&mean)
                .map(|(sq, m)| ((sq - n * m * m).max(0.0) / (n - 1.0) / n).sqrt())
                .collect()
        };
        SeriesStats { mean, se }
    }
}

fn add_diag(a: &mut Diagnostics, b: Diagnostics) {
    a.clamped_rewards += b.clamped_rewards;
    a.singular_fallbacks += b.singular_fallbacks;
}

/// Per-policy regret summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRegret {
    pub label: String,
    /// Cumulative regret by round, averaged over every (replication, user).
    pub cum_regret: SeriesStats,
    /// Running average of observed rewards by round.
    pub mean_reward: SeriesStats,
    pub n_episodes: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub horizon: usize,
    pub policies: Vec<PolicyRegret>,
}

impl RegretReport {
    pub fn policy(&self, label: &str) -> Option<&PolicyRegret> {
        self.policies.iter().find(|p| p.label == label)
    }
}

fn replication_bounds(cfg: &ExperimentConfig, users: &[UserEnv]) -> Result<Vec<Option<ClipBounds>>> {
    users
        .iter()
        .enumerate()
        .map(|(u, env)| {
            user_bounds(&env.arms, cfg.clipping, cfg.power.as_ref(), cfg.n_users(), cfg.horizon()).map_err(|e| match e {
                Error::InfeasibleDesign { reason, value } => Error::infeasible(format!("user {}, {reason}", u + 1), value),
                other => other,
            })
        })
        .collect()
}

/// Runs every policy on every replication and averages the regret curves.
pub fn run_regret_experiment(cfg: &ExperimentConfig) -> Result<RegretReport> {
    cfg.validate()?;
    let horizon = cfg.horizon();
    let per_rep: Vec<Result<Vec<Vec<EpisodeOut>>>> = (0..cfg.n_replications)
        .into_par_iter()
        .map(|rep| {
            let users = generate_users(&cfg.scenario, rep);
            let bounds = replication_bounds(cfg, &users)?;
            cfg.policies
                .iter()
                .enumerate()
                .map(|(i, spec)| run_users(cfg, &users, &bounds, spec, &format!("policies[{i}]"), rep))
                .collect()
        })
        .collect();

    let mut accs: Vec<(SeriesAcc, SeriesAcc, Diagnostics)> = vec![Default::default(); cfg.policies.len()];
    for rep in per_rep {
        for (acc, eps) in accs.iter_mut().zip(rep?) {
            for e in eps {
                acc.0.push(&e.episode.cumulative_regret());
                acc.1.push(&e.episode.mean_reward());
                add_diag(&mut acc.2, e.episode.diagnostics);
            }
        }
    }
    Ok(RegretReport {
        horizon,
        policies: cfg
            .policies
            .iter()
            .zip(accs)
            .map(|(spec, (r, m, d))| PolicyRegret {
                label: spec.label(),
                n_episodes: r.n,
                cum_regret: r.finish(horizon),
                mean_reward: m.finish(horizon),
                diagnostics: d,
            })
            .collect(),
    })
}

/// Per-user design quantities from a power experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserDesign {
    pub replication: usize,
    pub user: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub c_g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPower {
    pub label: String,
    /// Fraction of replications rejecting the power arm against the baseline.
    pub power: f64,
    /// Fraction of replications rejecting the null arm against the baseline.
    pub type1: f64,
    /// Regret divided by `N·T`, averaged over replications.
    pub regret_per_pull: f64,
    pub regret_ratio: f64,
    /// `(user, arm)` pairs left out of pooling for having fewer than two pulls.
    pub n_excluded: usize,
    pub cum_regret: SeriesStats,
    pub mean_reward: SeriesStats,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerReport {
    pub horizon: usize,
    pub policies: Vec<PolicyPower>,
    pub users: Vec<UserDesign>,
}

impl PowerReport {
    pub fn policy(&self, label: &str) -> Option<&PolicyPower> {
        self.policies.iter().find(|p| p.label == label)
    }
}

struct RepPower {
    power_hit: bool,
    null_hit: bool,
    regret_per_pull: f64,
    excluded: usize,
    episodes: Vec<EpisodeOut>,
}

fn analyse(cfg: &ExperimentConfig, users: &[UserEnv], eps: Vec<EpisodeOut>) -> Result<RepPower> {
    let k = users.first().map_or(0, |u| u.arms.len());
    let mut excluded = 0;
    let mut pooled: Vec<Option<PooledEstimate>> = Vec::with_capacity(k);
    for a in 0..k {
        let per_user: Vec<Result<_>> = users
            .iter()
            .zip(&eps)
            .map(|(env, e)| user_arm_least_squares(&e.episode.records, &KnownArm::from(&env.arms[a]), a))
            .collect();
        excluded += per_user.iter().filter(|r| r.is_err()).count();
        pooled.push(match pooled_estimate(&per_user) {
            Ok(p) => Some(p),
            Err(Error::NoData(_)) => None,
            Err(e) => return Err(e),
        });
    }
    let base = cfg.baseline_arm - 1;
    let alpha0 = cfg.power.map_or(0.05, |p| p.alpha0);
    let rejects = |arm: usize| -> bool {
        let (Some(_), Some(_)) = (&pooled[arm], &pooled[base]) else {
            return false;
        };
        // every other arm with data enters the family, the correction uses K − 1
        let ests: Vec<PooledEstimate> = pooled
            .iter()
            .map(|p| p.unwrap_or(PooledEstimate { theta_hat: 0.0, variance: f64::INFINITY, n_users_used: 0, n_excluded: 0 }))
            .collect();
        family_test(&ests, base, alpha0)
            .into_iter()
            .any(|o| o.arm == arm && o.reject)
    };
    let total: f64 = eps.iter().map(|e| e.episode.regret.iter().sum::<f64>()).sum();
    Ok(RepPower {
        power_hit: rejects(cfg.power_arm - 1),
        null_hit: rejects(cfg.null_arm - 1),
        regret_per_pull: total / (users.len() * cfg.horizon()) as f64,
        excluded,
        episodes: eps,
    })
}

/// Runs the power study: per replication, generate users, derive each
/// user's clip bounds, run every policy, estimate effects with known
/// dynamics, and test every arm against the baseline with a Bonferroni
/// correction.
pub fn run_power_experiment(cfg: &ExperimentConfig) -> Result<PowerReport> {
    cfg.validate()?;
    if cfg.power.is_none() {
        return Err(Error::config("power", "required for a power experiment"));
    }
    let horizon = cfg.horizon();
    let uniform_spec = PolicySpec::new(PolicyKind::Uniform);
    let has_uniform = cfg.policies.iter().any(|p| *p == uniform_spec);
    let mut specs = cfg.policies.clone();
    if !has_uniform && !specs.is_empty() {
        specs.push(uniform_spec);
    }

    type RepOut = (Vec<RepPower>, Vec<UserDesign>);
    let per_rep: Vec<Result<RepOut>> = (0..cfg.n_replications)
        .into_par_iter()
        .map(|rep| {
            let users = generate_users(&cfg.scenario, rep);
            let bounds = replication_bounds(cfg, &users)?;
            let designs = users
                .iter()
                .zip(&bounds)
                .enumerate()
                .map(|(u, (env, b))| {
                    let b = b.unwrap_or(ClipBounds::unconstrained());
                    UserDesign {
                        replication: rep,
                        user: u,
                        p_min: b.p_min,
                        p_max: b.p_max,
                        c_g: env.state_box.c_g(),
                    }
                })
                .collect();
            let outs = specs
                .iter()
                .enumerate()
                .map(|(i, spec)| {
                    let eps = run_users(cfg, &users, &bounds, spec, &format!("policies[{i}]"), rep)?;
                    analyse(cfg, &users, eps)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((outs, designs))
        })
        .collect();

    let n = cfg.n_replications as f64;
    let mut all_users = Vec::new();
    let mut sums = vec![(0usize, 0usize, 0.0f64, 0usize); specs.len()];
    let mut accs: Vec<(SeriesAcc, SeriesAcc, Diagnostics)> = vec![Default::default(); specs.len()];
    for rep in per_rep {
        let (outs, designs) = rep?;
        all_users.extend(designs);
        for ((s, acc), o) in sums.iter_mut().zip(accs.iter_mut()).zip(outs) {
            s.0 += usize::from(o.power_hit);
            s.1 += usize::from(o.null_hit);
            s.2 += o.regret_per_pull;
            s.3 += o.excluded;
            for e in o.episodes {
                acc.0.push(&e.episode.cumulative_regret());
                acc.1.push(&e.episode.mean_reward());
                add_diag(&mut acc.2, e.episode.diagnostics);
            }
        }
    }
    let uniform_rpp = specs
        .iter()
        .position(|p| *p == PolicySpec::new(PolicyKind::Uniform))
        .map(|i| sums[i].2 / n);
    let policies = cfg
        .policies
        .iter()
        .zip(sums.iter().zip(accs))
        .map(|(spec, (s, (r, m, d)))| {
            let rpp = s.2 / n;
            PolicyPower {
                label: spec.label(),
                power: s.0 as f64 / n,
                type1: s.1 as f64 / n,
                regret_per_pull: rpp,
                regret_ratio: uniform_rpp.map_or(f64::NAN, |u| rpp / u),
                n_excluded: s.3,
                cum_regret: r.finish(horizon),
                mean_reward: m.finish(horizon),
                diagnostics: d,
            }
        })
        .collect();
    Ok(PowerReport {
        horizon,
        policies,
        users: all_users,
    })
}

/// Formats with 9 significant digits in plain decimal notation, falling
/// back to exponent notation for very small or very large magnitudes.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(&digits);
            out.push_str(&"0".repeat(int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.push_str(&"0".repeat((-exp - 1) as usize));
        out.push_str(&digits);
    }
    if out.contains('.') {
        let trimmed = out.trim_end_matches('0').trim_end_matches('.');
        out = trimmed.to_string();
    }
    out
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
    w.write_record(header).map_err(|e| Error::io(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const REGRET_HEADER: [&str; 5] = ["round", "mean_cum_regret", "se", "mean_reward", "se"];
pub const POWER_HEADER: [&str; 6] = ["policy", "power", "type1", "regret_per_pull", "regret_ratio", "n_excluded"];
pub const REGRET_SUMMARY_HEADER: [&str; 6] = [
    "policy",
    "final_mean_cum_regret",
    "se",
    "n_episodes",
    "clamped_rewards",
    "singular_fallbacks",
];

fn write_series(dir: &Path, label: &str, regret: &SeriesStats, reward: &SeriesStats) -> Result<PathBuf> {
    let path = dir.join(format!("regret_{label}.csv"));
    write_csv(
        &path,
        &REGRET_HEADER,
        (0..regret.mean.len()).map(|i| {
            vec![
                (i + 1).to_string(),
                fmt_sig(regret.mean[i]),
                fmt_sig(regret.se[i]),
                fmt_sig(reward.mean[i]),
                fmt_sig(reward.se[i]),
            ]
        }),
    )?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `regret_<policy>.csv` per policy and `regret_summary.csv`.
pub fn emit_regret_report(report: &RegretReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for p in &report.policies {
        written.push(write_series(dir, &p.label, &p.cum_regret, &p.mean_reward)?);
    }
    let summary = dir.join("regret_summary.csv");
    write_csv(
        &summary,
        &REGRET_SUMMARY_HEADER,
        report.policies.iter().map(|p| {
            vec![
                p.label.clone(),
                fmt_sig(p.cum_regret.mean.last().copied().unwrap_or(0.0)),
                fmt_sig(p.cum_regret.se.last().copied().unwrap_or(0.0)),
                p.n_episodes.to_string(),
                p.diagnostics.clamped_rewards.to_string(),
                p.diagnostics.singular_fallbacks.to_string(),
            ]
        }),
    )?;
    written.push(summary);
    Ok(written)
}

/// Writes `power_summary.csv`, `power_users.csv` and one regret curve per policy.
pub fn emit_power_report(report: &PowerReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let summary = dir.join("power_summary.csv");
    write_csv(
        &summary,
        &POWER_HEADER,
        report.policies.iter().map(|p| {
            vec![
                p.label.clone(),
                fmt_sig(p.power),
                fmt_sig(p.type1),
                fmt_sig(p.regret_per_pull),
                fmt_sig(p.regret_ratio),
                p.n_excluded.to_string(),
            ]
        }),
    )?;
    written.push(summary);
    let users = dir.join("power_users.csv");
    write_csv(
        &users,
        &["replication", "user", "p_min", "p_max", "c_g"],
        report.users.iter().map(|u| {
            vec![
                (u.replication + 1).to_string(),
                (u.user + 1).to_string(),
                fmt_sig(u.p_min),
                fmt_sig(u.p_max),
                fmt_sig(u.c_g),
            ]
        }),
    )?;
    written.push(users);
    for p in &report.policies {
        written.push(write_series(dir, &p.label, &p.cum_regret, &p.mean_reward)?);
    }
    Ok(written)
}

/// Reads a `regret_<policy>.csv` back into `(cum_regret, mean_reward)`.
pub fn read_regret_csv(path: &Path) -> Result<(SeriesStats, SeriesStats)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
    let (mut reg, mut rew) = (SeriesStats::default(), SeriesStats::default());
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::io(path, e))?;
        let field = |j: usize| -> Result<f64> {
            row.get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::io(path, format!("row {}: bad column {}", i + 2, j + 1)))
        };
        reg.mean.push(field(1)?);
        reg.se.push(field(2)?);
        rew.mean.push(field(3)?);
        rew.se.push(field(4)?);
    }
    Ok((reg, rew))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.0489), "0.0489");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig(-2.0 / 3.0), "-0.666666667");
        assert_eq!(fmt_sig(123456.789012), "123456.789");
        assert_eq!(fmt_sig(9.9999999996), "10");
        assert_eq!(fmt_sig(1234567890123.0), "1234567890000");
        assert_eq!(fmt_sig(1.5e-7), "1.50000000e-7");
        assert_eq!(fmt_sig(0.00012345678912), "0.000123456789");
    }

    #[test]
    fn reachable_range_matches_closed_form() {
        let arm = ArmSpec {
            a_coef: 0.5,
            b_coef: 0.4,
            k_coef: 0.1,
            state_coef: 1.0,
            effect_coef: 1.0,
            theta_true: 0.0,
            x0_true: 0.0,
            sigma: 1.0,
        };
        let (lo, hi) = reachable_state_range(&[arm], (0.0, 1.0), 60);
        assert_eq!(lo, 0.0);
        // sup_t 0.5^t + 0.5 (1 − 0.5^t)/0.5 = 1 at t = 0, and 1 at the limit too
        assert!((hi - 1.0).abs() < 1e-12);
        let grow = ArmSpec { b_coef: 1.0, ..arm };
        let (_, hi) = reachable_state_range(&[grow], (0.0, 1.0), 60);
        assert!((hi - 2.2).abs() < 1e-9);
    }

    #[test]
    fn users_depend_only_on_seed_and_replication() {
        let src = ScenarioSource::Power(PowerGenerator { master_seed: 5, ..Default::default() });
        assert_eq!(generate_users(&src, 3), generate_users(&src, 3));
        assert_ne!(generate_users(&src, 3), generate_users(&src, 4));
        let users = generate_users(&src, 0);
        assert_eq!(users.len(), 15);
        for u in &users {
            assert_eq!(u.arms.iter().map(|a| a.theta_true).collect::<Vec<_>>(), vec![0.5, 1.0, 0.5]);
            assert!(u.arms.iter().all(|a| (0.0..0.9).contains(&a.a_coef) && (1.0..1.5).contains(&a.sigma)));
            u.state_box.validate("box", &u.arms).unwrap();
        }
    }

    #[test]
    fn config_validation_paths() {
        let text = r#"{"scenario":{"glm":{"horizon":0}},"policies":[]}"#;
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "scenario.glm.horizon"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"scenario":{"glm":{}},"policies":[{"kind":"rogue_ts","clipped":true}]}"#;
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "policies[0].clipped"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"scenario":{"glm":{}},"clipping":"theorem8"}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config { .. })));
        let text = r#"{"scenario":{"power":{}},"clipping":{"manual":{"p_min":0.5}}}"#;
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "clipping.manual.p_min"),
            other => panic!("{other:?}"),
        }
        let ok = r#"{"scenario":{"power":{"n_users":3}},"policies":[{"kind":"uniform"}],"clipping":{"manual":{"p_min":0.2}}}"#;
        assert_eq!(ExperimentConfig::from_json(ok).unwrap().n_users(), 3);
    }
}
