//! Exploration floors for powered trials, L1 clipping of action
//! distributions, and the clipped-policy wrapper.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::policy::{sample_categorical, Diagnostics, Policy, Proposal};
use crate::rng::PolicyRng;

/// Design targets of a multi-arm trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSpec {
    pub alpha0: f64,
    pub beta0: f64,
    pub delta0: f64,
    pub n_users: usize,
    pub horizon: usize,
    pub n_arms: usize,
    pub a_abs: f64,
    pub sigma: f64,
    pub effect_coef: f64,
}

impl PowerSpec {
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if !open01(self.alpha0) {
            return Err(Error::config("alpha0", "must lie in (0, 1)"));
        }
        if !open01(self.beta0) {
            return Err(Error::config("beta0", "must lie in (0, 1)"));
        }
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return Err(Error::config("delta0", "must be positive"));
        }
        if self.n_users == 0 {
            return Err(Error::config("n_users", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be >= 1"));
        }
        if self.n_arms < 2 {
            return Err(Error::config("n_arms", "must be >= 2"));
        }
        if !(self.a_abs >= 0.0 && self.a_abs.is_finite()) || self.a_abs == 1.0 {
            return Err(Error::config("a_abs", "must be finite, >= 0 and != 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", "must be positive"));
        }
        if !(self.effect_coef != 0.0 && self.effect_coef.is_finite()) {
            return Err(Error::config("effect_coef", "must be finite and nonzero"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: PowerSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// The two additive pieces of the exploration floor, each already divided
/// by the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PMinTerms {
    /// `(1+|A|)/|1−|A|| / T`: the price of not knowing the initial state.
    pub state_term: f64,
    /// `2σ²(z_α − z_β)² / (N D² Δ0² T)`: the classical sample-size term.
    pub sample_term: f64,
}

impl PMinTerms {
    pub fn total(&self) -> f64 {
        self.state_term + self.sample_term
    }
}

pub fn p_min_terms(spec: &PowerSpec) -> Result<PMinTerms> {
    spec.validate()?;
    let k1 = (spec.n_arms - 1) as f64;
    let t = spec.horizon as f64;
    let za = normal::quantile(1.0 - spec.alpha0 / k1);
    let zb = normal::quantile(spec.beta0 / k1);
    let state_term = (1.0 + spec.a_abs) / (1.0 - spec.a_abs).abs() / t;
    let sample_term = 2.0 * spec.sigma * spec.sigma * (za - zb).powi(2)
        / (spec.n_users as f64 * spec.effect_coef.powi(2) * spec.delta0.powi(2))
        / t;
    Ok(PMinTerms {
        state_term,
        sample_term,
    })
}

/// Smallest per-arm selection probability that keeps the family-wise test
/// at the requested power.
pub fn required_p_min(spec: &PowerSpec) -> Result<f64> {
    let p = p_min_terms(spec)?.total();
    if p > 1.0 / spec.n_arms as f64 {
        return Err(Error::infeasible(
            format!("required p_min exceeds 1/{} so no policy can meet the power target", spec.n_arms),
            p,
        ));
    }
    Ok(p)
}

pub fn p_max_from(p_min: f64, n_arms: usize) -> Result<f64> {
    if n_arms == 0 || !(p_min >= 0.0) || p_min * n_arms as f64 > 1.0 + 1e-12 {
        return Err(Error::infeasible(
            format!("p_min * n_arms must not exceed 1 (n_arms = {n_arms})"),
            p_min,
        ));
    }
    Ok(1.0 - (n_arms - 1) as f64 * p_min)
}

/// Selection probability bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub p_min: f64,
    pub p_max: f64,
}

impl ClipBounds {
    pub fn new(p_min: f64, p_max: f64) -> Self {
        ClipBounds { p_min, p_max }
    }

    /// `[p_min, 1 − (K−1) p_min]`.
    pub fn from_p_min(p_min: f64, n_arms: usize) -> Result<Self> {
        Ok(ClipBounds {
            p_min,
            p_max: p_max_from(p_min, n_arms)?,
        })
    }

    pub fn unconstrained() -> Self {
        ClipBounds { p_min: 0.0, p_max: 1.0 }
    }

    pub fn check(&self, n_arms: usize) -> Result<()> {
        let k = n_arms as f64;
        let ok = self.p_min >= 0.0
            && self.p_max <= 1.0
            && self.p_min <= self.p_max
            && self.p_min * k <= 1.0 + 1e-12
            && self.p_max * k >= 1.0 - 1e-12;
        if !ok {
            return Err(Error::infeasible(
                format!(
                    "bounds [{}, {}] admit no distribution over {n_arms} arms",
                    self.p_min, self.p_max
                ),
                self.p_min,
            ));
        }
        Ok(())
    }
}

/// Closed-form variance of the per-user effect estimate for a given pull
/// set. Powers are taken relative to the first pull, which leaves the ratio
/// unchanged and avoids underflow for long histories.
pub fn estimator_variance(a_coef: f64, effect_coef: f64, sigma: f64, pull_times: &[usize]) -> Result<f64> {
    if pull_times.len() < 2 {
        return Err(Error::SingularDesign(format!(
            "{} pull(s); at least 2 are needed",
            pull_times.len()
        )));
    }
    if a_coef == 0.0 || a_coef.abs() == 1.0 {
        return Err(Error::DomainError(format!("a_coef = {a_coef} makes the state uninformative")));
    }
    let t0 = *pull_times.iter().min().expect("non-empty");
    let (mut s1, mut s2) = (0.0, 0.0);
    for &t in pull_times {
        let u = a_coef.powi((t - t0) as i32);
        s1 += u;
        s2 += u * u;
    }
    let n = pull_times.len() as f64;
    let denom = n - s1 * s1 / s2;
    if denom <= 1e-12 * n {
        return Err(Error::SingularDesign(format!(
            "information for the effect vanishes (n - ratio = {denom:e})"
        )));
    }
    Ok(sigma * sigma / (effect_coef * effect_coef * denom))
}

/// Upper bound on `(Σ A^t)² / Σ A^{2t}` over every finite pull set.
pub fn fisher_ratio_bound(a_coef: f64) -> Result<f64> {
    let a = a_coef.abs();
    if a == 0.0 || a == 1.0 || !a.is_finite() {
        return Err(Error::DomainError(format!("|a_coef| must not be 0 or 1, got {a_coef}")));
    }
    Ok((1.0 + a) / (1.0 - a).abs())
}

/// Probability that a one-sided level-`alpha` z-test misses an effect of
/// size `delta`.
pub fn type_ii_error(alpha: f64, delta: f64, var_a: f64, var_a_prime: f64) -> f64 {
    normal::cdf(normal::quantile(1.0 - alpha) - delta / (var_a + var_a_prime).sqrt())
}

/// L1-nearest distribution inside `[p_min, p_max]`.
///
/// After clamping, every unit moved costs exactly one unit of objective, so
/// any redistribution that only moves entries in the direction of the
/// imbalance is optimal. The order below makes the result deterministic:
/// surplus is taken from the largest entries first (ties to the larger
/// index), deficit is added to the smallest entries first (ties likewise).
pub fn clip_probabilities(p: &[f64], bounds: ClipBounds) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty probability vector".into()));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidDistribution("entries must be finite and >= 0".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("entries sum to {total}, not 1")));
    }
    bounds.check(p.len())?;
    let ClipBounds { p_min, p_max } = bounds;

    let mut q: Vec<f64> = p.iter().map(|v| v.clamp(p_min, p_max)).collect();
    let delta = 1.0 - q.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..q.len()).collect();
    if delta < 0.0 {
        // largest first, ties to the larger index
        order.sort_by(|&i, &j| q[j].total_cmp(&q[i]).then(j.cmp(&i)));
        let mut surplus = -delta;
        for i in order {
            if surplus <= 0.0 {
                break;
            }
            let take = (q[i] - p_min).min(surplus);
            q[i] -= take;
            surplus -= take;
        }
    } else if delta > 0.0 {
        order.sort_by(|&i, &j| q[i].total_cmp(&q[j]).then(j.cmp(&i)));
        let mut deficit = delta;
        for i in order {
            if deficit <= 0.0 {
                break;
            }
            let give = (p_max - q[i]).min(deficit);
            q[i] += give;
            deficit -= give;
        }
    }
    let last = q.len() - 1;
    let head: f64 = q[..last].iter().sum();
    q[last] = 1.0 - head;
    Ok(q)
}

/// Draws from `target` while keeping the proposal whenever possible.
///
/// `proposal` must be a draw from `base`. The proposal is kept with
/// probability `min(1, target/base)` at that arm; otherwise the arm comes
/// from the normalized excess `(target − base)_+`. The output is distributed
/// exactly as `target`, and equals the proposal whenever `target == base`.
pub fn coupled_draw<R: Rng + ?Sized>(proposal: usize, base: &[f64], target: &[f64], rng: &mut R) -> usize {
    let pb = base[proposal];
    let pt = target[proposal];
    if pt >= pb {
        return proposal;
    }
    if rng.random::<f64>() < pt / pb {
        return proposal;
    }
    let excess: Vec<f64> = base.iter().zip(target).map(|(b, t)| (t - b).max(0.0)).collect();
    if excess.iter().sum::<f64>() <= 0.0 {
        return proposal;
    }
    sample_categorical(&excess, rng)
}

/// One clipped round: asks the base policy for its distribution, clips it,
/// and draws an arm. Returns the arm and the clipped distribution.
pub fn clipped_select<P: Policy + ?Sized>(
    base: &mut P,
    bounds: ClipBounds,
    t: usize,
    rng: &mut PolicyRng,
) -> Result<(usize, Vec<f64>)> {
    let Proposal { arm, probs } = base.propose(t, rng);
    let clipped = clip_probabilities(&probs, bounds)?;
    let chosen = coupled_draw(arm, &probs, &clipped, &mut rng.clip);
    base.set_sampling_probabilities(&clipped);
    Ok((chosen, clipped))
}

/// A base policy whose actions are drawn from its clipped distribution. The
/// base policy still observes every outcome, including overridden ones.
pub struct ClippedPolicy<P> {
    base: P,
    bounds: ClipBounds,
}

impl<P: Policy> ClippedPolicy<P> {
    pub fn new(base: P, bounds: ClipBounds) -> Result<Self> {
        bounds.check(base.n_arms())?;
        Ok(ClippedPolicy { base, bounds })
    }

    pub fn bounds(&self) -> ClipBounds {
        self.bounds
    }

    pub fn base(&self) -> &P {
        &self.base
    }
}

impl<P: Policy> Policy for ClippedPolicy<P> {
    fn n_arms(&self) -> usize {
        self.base.n_arms()
    }

    fn select(&mut self, t: usize, rng: &mut PolicyRng) -> usize {
        self.propose(t, rng).arm
    }

    fn propose(&mut self, t: usize, rng: &mut PolicyRng) -> Proposal {
        let (arm, probs) =
            clipped_select(&mut self.base, self.bounds, t, rng).expect("base policy returned a distribution");
        Proposal { arm, probs }
    }

    fn observe(&mut self, t: usize, arm: usize, reward: f64) {
        self.base.observe(t, arm, reward);
    }

    fn set_sampling_probabilities(&mut self, probs: &[f64]) {
        self.base.set_sampling_probabilities(probs);
    }

    fn diagnostics(&self) -> Diagnostics {
        self.base.diagnostics()
    }
}
