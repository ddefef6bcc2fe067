//! Per-user least squares, pooling, Bonferroni z-tests and profile
//! likelihood fitting of arm dynamics from logs.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::{pull_times, InteractionLog, Record};
use crate::model::ArmSpec;
use crate::normal;
use crate::power::estimator_variance;

/// The parts of an arm an analyst is assumed to know.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownArm {
    pub a_coef: f64,
    pub b_coef: f64,
    pub k_coef: f64,
    pub state_coef: f64,
    pub effect_coef: f64,
    pub sigma: f64,
}

impl From<&ArmSpec> for KnownArm {
    fn from(a: &ArmSpec) -> Self {
        KnownArm {
            a_coef: a.a_coef,
            b_coef: a.b_coef,
            k_coef: a.k_coef,
            state_coef: a.state_coef,
            effect_coef: a.effect_coef,
            sigma: a.sigma,
        }
    }
}

/// `Σ_{j<n} a^j`.
pub(crate) fn geometric_sum(a: f64, n: usize) -> f64 {
    if a == 1.0 {
        n as f64
    } else {
        (1.0 - a.powi(n as i32)) / (1.0 - a)
    }
}

/// Sufficient statistics of one arm's regression
/// `r_t − C·o_t = C·u_t·z + D·θ`, where `z` is the state at the first pull
/// `t0`, `u_t = A^{t−t0}` and `o_t` is the deterministic drift since `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmDesign {
    pub n: usize,
    pub t0: usize,
    pub suu: f64,
    pub su1: f64,
    pub s11: f64,
    pub suy: f64,
    pub s1y: f64,
    /// `u` and `o` carried forward to the round after the last record.
    pub unit_next: f64,
    pub offset_next: f64,
}

impl ArmDesign {
    pub fn det(&self) -> f64 {
        self.suu * self.s11 - self.su1 * self.su1
    }

    pub fn is_singular(&self) -> bool {
        self.n < 2 || !(self.det() > 1e-12 * self.suu * self.s11)
    }

    /// `(z, θ)` from the 2×2 normal equations, or `None` when singular.
    pub fn solve(&self) -> Option<(f64, f64)> {
        if self.is_singular() {
            return None;
        }
        let m = Matrix2::new(self.suu, self.su1, self.su1, self.s11);
        let sol = m.lu().solve(&Vector2::new(self.suy, self.s1y))?;
        Some((sol[0], sol[1]))
    }
}

impl ArmDesign {
    pub fn start(t0: usize) -> Self {
        ArmDesign {
            n: 0,
            t0,
            suu: 0.0,
            su1: 0.0,
            s11: 0.0,
            suy: 0.0,
            s1y: 0.0,
            unit_next: 1.0,
            offset_next: 0.0,
        }
    }

    /// Folds in one round, then moves `u` and `o` to the next round.
    pub fn push(&mut self, arm: &KnownArm, pulled: bool, reward: f64) {
        let (c, d, a) = (arm.state_coef, arm.effect_coef, arm.a_coef);
        if pulled {
            let u = c * self.unit_next;
            let y = reward - c * self.offset_next;
            self.n += 1;
            self.suu += u * u;
            self.su1 += u * d;
            self.s11 += d * d;
            self.suy += u * y;
            self.s1y += d * y;
        }
        self.unit_next *= a;
        self.offset_next = a * self.offset_next + if pulled { arm.b_coef } else { 0.0 } + arm.k_coef;
    }
}

pub fn arm_design(records: &[Record], arm_idx: usize, arm: &KnownArm) -> Option<ArmDesign> {
    let first = records.iter().position(|r| r.arm == arm_idx)?;
    let mut design = ArmDesign::start(records[first].t);
    for r in &records[first..] {
        design.push(arm, r.arm == arm_idx, r.reward);
    }
    Some(design)
}

/// One user's estimate for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserArmEstimate {
    pub theta_hat: f64,
    /// `None` when `A^{t0}` underflows so the initial state cannot be
    /// recovered (the effect estimate is unaffected).
    pub x0_hat: Option<f64>,
    pub variance: f64,
    pub n_pulls: usize,
}

/// Joint least squares for `(x0, θ)` from one user's log, with the
/// closed-form variance of the effect estimate.
pub fn user_arm_least_squares(records: &[Record], arm: &KnownArm, arm_idx: usize) -> Result<UserArmEstimate> {
    if arm.a_coef == 0.0 || arm.a_coef.abs() == 1.0 {
        return Err(Error::DomainError(format!(
            "a_coef = {} leaves the initial state unidentifiable",
            arm.a_coef
        )));
    }
    let design = arm_design(records, arm_idx, arm)
        .ok_or_else(|| Error::SingularDesign("arm was never pulled".into()))?;
    if design.n < 2 {
        return Err(Error::SingularDesign(format!("{} pull(s); at least 2 are needed", design.n)));
    }
    let (z, theta) = design
        .solve()
        .ok_or_else(|| Error::SingularDesign(format!("normal equations singular (det = {:e})", design.det())))?;
    let t0 = design.t0;
    let x0 = (z - arm.k_coef * geometric_sum(arm.a_coef, t0)) / arm.a_coef.powi(t0 as i32);
    let variance = estimator_variance(arm.a_coef, arm.effect_coef, arm.sigma, &pull_times(records, arm_idx))?;
    Ok(UserArmEstimate {
        theta_hat: theta,
        x0_hat: x0.is_finite().then_some(x0),
        variance,
        n_pulls: design.n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub theta_hat: f64,
    pub variance: f64,
    pub n_users_used: usize,
    pub n_excluded: usize,
}

/// Averages per-user estimates. Users whose fit was singular are excluded
/// and counted; any other error is passed through.
pub fn pooled_estimate(per_user: &[Result<UserArmEstimate>]) -> Result<PooledEstimate> {
    let mut used = Vec::new();
    let mut excluded = 0;
    for r in per_user {
        match r {
            Ok(e) => used.push(*e),
            Err(Error::SingularDesign(_)) => excluded += 1,
            Err(e) => return Err(e.clone()),
        }
    }
    if used.is_empty() {
        return Err(Error::NoData(format!("all {excluded} user(s) excluded")));
    }
    let n = used.len() as f64;
    Ok(PooledEstimate {
        theta_hat: used.iter().map(|e| e.theta_hat).sum::<f64>() / n,
        variance: used.iter().map(|e| e.variance).sum::<f64>() / (n * n),
        n_users_used: used.len(),
        n_excluded: excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub arm: usize,
    pub baseline_arm: usize,
    pub z_stat: f64,
    pub adjusted_alpha: f64,
    pub reject: bool,
}

/// One-sided test of `θ_arm > θ_baseline`.
pub fn pairwise_test(
    arm: usize,
    est: &PooledEstimate,
    baseline_arm: usize,
    baseline: &PooledEstimate,
    adjusted_alpha: f64,
) -> TestOutcome {
    let z = (est.theta_hat - baseline.theta_hat) / (est.variance + baseline.variance).sqrt();
    TestOutcome {
        arm,
        baseline_arm,
        z_stat: z,
        adjusted_alpha,
        reject: z >= normal::quantile(1.0 - adjusted_alpha),
    }
}

/// Every non-baseline arm against the baseline at `alpha0/(K−1)`.
pub fn family_test(estimates: &[PooledEstimate], baseline_arm: usize, alpha0: f64) -> Vec<TestOutcome> {
    let k = estimates.len();
    if k < 2 {
        return Vec::new();
    }
    let adjusted = alpha0 / (k - 1) as f64;
    (0..k)
        .filter(|&a| a != baseline_arm)
        .map(|a| pairwise_test(a, &estimates[a], baseline_arm, &estimates[baseline_arm], adjusted))
        .collect()
}

/// `−0.9, −0.89, …, 0.9` without 0.
pub fn default_a_grid() -> Vec<f64> {
    (-90..=90).filter(|&i| i != 0).map(|i| i as f64 / 100.0).collect()
}

/// Result of fitting one arm's dynamics across users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFit {
    pub a_coef: f64,
    /// `None` when the pull pattern cannot separate `B` from the rest.
    pub b_coef: Option<f64>,
    pub b_dropped: bool,
    pub theta: f64,
    /// Per user; `None` for users who never pulled the arm.
    pub x0: Vec<Option<f64>>,
    pub sigma: f64,
    pub rss: f64,
    pub n_obs: usize,
    pub n_params: usize,
}

struct Row {
    user_col: usize,
    z: f64,
    b: f64,
    y: f64,
}

struct GridDesign {
    rows: Vec<Row>,
    n_users_active: usize,
    /// `(user, t0)` per active column.
    starts: Vec<(usize, usize)>,
}

fn grid_design(log: &InteractionLog, arm_idx: usize, a: f64, k_known: f64) -> GridDesign {
    let mut rows = Vec::new();
    let mut starts = Vec::new();
    for (u, recs) in log.users.iter().enumerate() {
        let Some(first) = recs.iter().position(|r| r.arm == arm_idx) else {
            continue;
        };
        let col = starts.len();
        starts.push((u, recs[first].t));
        let (mut unit, mut bsum, mut ksum) = (1.0, 0.0, 0.0);
        for r in &recs[first..] {
            let pulled = r.arm == arm_idx;
            if pulled {
                rows.push(Row {
                    user_col: col,
                    z: unit,
                    b: bsum,
                    y: r.reward - k_known * ksum,
                });
            }
            unit *= a;
            bsum = a * bsum + if pulled { 1.0 } else { 0.0 };
            ksum = a * ksum + 1.0;
        }
    }
    GridDesign {
        n_users_active: starts.len(),
        rows,
        starts,
    }
}

impl GridDesign {
    /// Columns: one `z` per active user, then θ, then optionally `B`.
    fn n_params(&self, with_b: bool) -> usize {
        self.n_users_active + 1 + usize::from(with_b)
    }

    fn dense(&self, with_b: bool) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.n_params(with_b);
        let mut x = DMatrix::zeros(self.rows.len(), p);
        let mut y = DVector::zeros(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            x[(i, r.user_col)] = r.z;
            x[(i, self.n_users_active)] = 1.0;
            if with_b {
                x[(i, self.n_users_active + 1)] = r.b;
            }
            y[i] = r.y;
        }
        (x, y)
    }
}

/// Relative floor on singular values of the column-equilibrated design.
const RANK_TOL: f64 = 1e-6;

impl GridDesign {
    /// Residual sum of squares through the normal equations; cheap enough
    /// to scan the grid. `None` when rank-deficient.
    fn gram_rss(&self, with_b: bool) -> Option<f64> {
        let p = self.n_params(with_b);
        if self.rows.len() < p {
            return None;
        }
        let th = self.n_users_active;
        let mut g = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        let mut yty = 0.0;
        for r in &self.rows {
            let cols = [(r.user_col, r.z), (th, 1.0), (th + 1, r.b)];
            let used = if with_b { 3 } else { 2 };
            for i in 0..used {
                let (ci, vi) = cols[i];
                xty[ci] += vi * r.y;
                for &(cj, vj) in &cols[..used] {
                    g[(ci, cj)] += vi * vj;
                }
            }
            yty += r.y * r.y;
        }
        let scale: Vec<f64> = (0..p).map(|j| g[(j, j)].sqrt()).collect();
        if scale.iter().any(|&s| !(s > 0.0)) {
            return None;
        }
        let mut gs = g.clone();
        for i in 0..p {
            for j in 0..p {
                gs[(i, j)] /= scale[i] * scale[j];
            }
        }
        let eig = gs.clone().symmetric_eigenvalues();
        if !(eig.min() > RANK_TOL * RANK_TOL * eig.max()) {
            return None;
        }
        let rhs = DVector::from_iterator(p, xty.iter().zip(&scale).map(|(v, s)| v / s));
        let beta_s = gs.cholesky()?.solve(&rhs);
        let rss = yty - beta_s.dot(&rhs);
        Some(rss.max(0.0))
    }
}

/// Least squares with column equilibration and a numerical rank check.
/// Returns coefficients and the residual sum of squares, or `None` when the
/// design is rank-deficient.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let p = x.ncols();
    if x.nrows() < p {
        return None;
    }
    let scale: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();
    if scale.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    let mut xs = x.clone();
    for (j, s) in scale.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = xs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOL * smax) {
        return None;
    }
    let beta_s = svd.solve(y, 0.0).ok()?;
    let beta = DVector::from_iterator(p, beta_s.iter().zip(&scale).map(|(b, s)| b / s));
    let resid = y - x * &beta;
    Some((beta, resid.norm_squared()))
}

/// Profile maximum likelihood over a grid of `A` with `C = D = 1` and `K`
/// fixed. For each candidate the model is linear in the per-user initial
/// states, `B` and `θ`, so it is solved by least squares; the candidate with
/// the smallest residual sum of squares wins (ties to the smaller `|A|`).
/// When no candidate separates `B` from the other regressors, the fit is
/// repeated without it and `b_dropped` is set.
pub fn fit_arm_parameters(log: &InteractionLog, arm_idx: usize, k_known: f64, grid: &[f64]) -> Result<ArmFit> {
    if grid.is_empty() {
        return Err(Error::config("grid", "must contain at least one candidate"));
    }
    if let Some(&a) = grid.iter().find(|a| !a.is_finite() || **a == 0.0 || a.abs() >= 0.99) {
        return Err(Error::config("grid", format!("candidate {a} outside (-0.99, 0.99) without 0")));
    }
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));

    for with_b in [true, false] {
        let mut best: Option<(f64, f64)> = None;
        for &a in &order {
            if let Some(rss) = grid_design(log, arm_idx, a, k_known).gram_rss(with_b) {
                if best.is_none_or(|(_, b)| rss < b) {
                    best = Some((a, rss));
                }
            }
        }
        let Some((a, _)) = best else { continue };
        let design = grid_design(log, arm_idx, a, k_known);
        let (x, y) = design.dense(with_b);
        let Some((beta, rss)) = ols(&x, &y) else { continue };
        let n_obs = design.rows.len();
        let n_params = design.n_params(with_b);
        if n_obs <= n_params {
            return Err(Error::UnidentifiableModel(format!(
                "{n_obs} observations for {n_params} parameters"
            )));
        }
        let mut x0 = vec![None; log.users.len()];
        for (col, &(u, t0)) in design.starts.iter().enumerate() {
            let v = (beta[col] - k_known * geometric_sum(a, t0)) / a.powi(t0 as i32);
            x0[u] = v.is_finite().then_some(v);
        }
        let b_coef = with_b.then(|| beta[design.n_users_active + 1]);
        return Ok(ArmFit {
            a_coef: a,
            b_coef,
            b_dropped: !with_b,
            theta: beta[design.n_users_active],
            x0,
            sigma: (rss / (n_obs - n_params) as f64).sqrt(),
            rss,
            n_obs,
            n_params,
        });
    }
    Err(Error::UnidentifiableModel(format!(
        "least squares is rank-deficient for arm {} at every grid point",
        arm_idx + 1
    )))
}
