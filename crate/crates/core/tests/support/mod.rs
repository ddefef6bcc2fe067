//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rogue_bandit::model::ArmSpec;

pub fn arm(a: f64, b: f64, k: f64, c: f64, d: f64, theta: f64, x0: f64, sigma: f64) -> ArmSpec {
    ArmSpec {
        a_coef: a,
        b_coef: b,
        k_coef: k,
        state_coef: c,
        effect_coef: d,
        theta_true: theta,
        x0_true: x0,
        sigma,
    }
}

/// Minimum of `Σ|p_i − q_i|` over `q` with `lo ≤ q_i ≤ hi` and `Σq = 1`, by
/// enumerating vertices of the problem.
///
/// The objective is separable and piecewise linear with kinks at `lo`, `hi`
/// and `p_i`, and there is one equality constraint, so some optimum has every
/// coordinate but one at a kink. Every such candidate is tried.
pub fn lp_clip_optimum(p: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let k = p.len();
    let kinks = |i: usize| [lo, hi, p[i].clamp(lo, hi)];
    let mut best: Option<f64> = None;
    for free in 0..k {
        let others: Vec<usize> = (0..k).filter(|&i| i != free).collect();
        let combos = 3usize.pow(others.len() as u32);
        for code in 0..combos {
            let mut c = code;
            let mut q = vec![0.0; k];
            for &i in &others {
                q[i] = kinks(i)[c % 3];
                c /= 3;
            }
            let rest: f64 = q.iter().sum();
            let qf = 1.0 - rest;
            if qf < lo - 1e-12 || qf > hi + 1e-12 {
                continue;
            }
            q[free] = qf;
            let obj: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

/// Posterior moments of one arm's `(θ, x_t)` on a regular grid over
/// `(θ, x_1)`, the quantities at the first round.
///
/// The dynamics are deterministic, so `x_t` is an affine function of `x_1`
/// given the pull history and the posterior is the prior density times the
/// Gaussian likelihood of each observed reward.
pub struct GridPosterior {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// `rounds` is the arm's history: for each round, `Some(reward)` when pulled.
/// Moments are of `(θ, x)` at the round after the last one.
pub fn grid_bayes(
    arm: &ArmSpec,
    prior_mean: [f64; 2],
    prior_sd: [f64; 2],
    rounds: &[Option<f64>],
    n: usize,
    half_width_sds: f64,
) -> GridPosterior {
    // x_t = s_t·x_1 + o_t
    let mut s = 1.0;
    let mut o = 0.0;
    let mut obs = Vec::new();
    for r in rounds {
        if let Some(y) = r {
            obs.push((s, o, *y));
        }
        let pulled = r.is_some();
        o = arm.a_coef * o + if pulled { arm.b_coef } else { 0.0 } + arm.k_coef;
        s *= arm.a_coef;
    }
    let grid = |d: usize| -> Vec<f64> {
        let lo = prior_mean[d] - half_width_sds * prior_sd[d];
        let h = 2.0 * half_width_sds * prior_sd[d] / n as f64;
        (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect()
    };
    let (gt, gx) = (grid(0), grid(1));
    let var = arm.sigma * arm.sigma;
    // log weights first, then a max shift before exponentiating
    let mut logw = vec![0.0; n * n];
    for (i, &th) in gt.iter().enumerate() {
        for (j, &x1) in gx.iter().enumerate() {
            let zt = (th - prior_mean[0]) / prior_sd[0];
            let zx = (x1 - prior_mean[1]) / prior_sd[1];
            let mut lw = -0.5 * (zt * zt + zx * zx);
            for &(su, off, y) in &obs {
                let g = arm.state_coef * (su * x1 + off) + arm.effect_coef * th;
                lw -= 0.5 * (y - g) * (y - g) / var;
            }
            logw[i * n + j] = lw;
        }
    }
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut w0, mut m1, mut m2) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
    for (i, &th) in gt.iter().enumerate() {
        for (j, &x1) in gx.iter().enumerate() {
            let w = (logw[i * n + j] - m).exp();
            let x = s * x1 + o;
            w0 += w;
            m1[0] += w * th;
            m1[1] += w * x;
            m2[0][0] += w * th * th;
            m2[0][1] += w * th * x;
            m2[1][1] += w * x * x;
        }
    }
    let mean = [m1[0] / w0, m1[1] / w0];
    let c00 = m2[0][0] / w0 - mean[0] * mean[0];
    let c01 = m2[0][1] / w0 - mean[0] * mean[1];
    let c11 = m2[1][1] / w0 - mean[1] * mean[1];
    GridPosterior {
        mean,
        cov: [[c00, c01], [c01, c11]],
    }
}

/// Two-sided binomial tail check: `k` successes in `n` trials is within
/// `z` standard errors of rate `p`.
pub fn within_binomial(k: usize, n: usize, p: f64, z: f64) -> bool {
    let hat = k as f64 / n as f64;
    (hat - p).abs() <= z * (p * (1.0 - p) / n as f64).sqrt()
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}
