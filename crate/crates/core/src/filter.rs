//! Exact Gaussian beliefs over the augmented pair `(θ, x_t)` of one arm.
//!
//! The dynamics act as `Ã = diag(1, a)` plus a known offset and carry no
//! process noise, so the filter below is the exact posterior whenever the
//! prior is Gaussian. Corrections only touch the pulled arm; every arm is
//! predicted forward each round.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{ArmSpec, StateBox};

/// Mean and covariance over `(θ, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Reward observation `r = h·(θ, x) + ε`, `ε ~ N(0, noise_var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationModel {
    pub h_row: Vector2<f64>,
    pub noise_var: f64,
}

impl ObservationModel {
    pub fn for_arm(arm: &ArmSpec) -> Self {
        ObservationModel {
            h_row: Vector2::new(arm.effect_coef, arm.state_coef),
            noise_var: arm.sigma * arm.sigma,
        }
    }
}

impl GaussianBelief {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        GaussianBelief {
            mean: Vector2::new(mean[0], mean[1]),
            cov: Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]),
        }
    }

    /// Midpoint of the box with standard deviations of half its widths.
    pub fn box_prior(b: &StateBox) -> Self {
        let st = 0.5 * (b.theta_max - b.theta_min);
        let sx = 0.5 * (b.x_max - b.x_min);
        GaussianBelief::new([b.theta_mid(), b.x_mid()], [[st * st, 0.0], [0.0, sx * sx]])
    }

    /// Eigenvalues of the covariance, ascending.
    pub fn cov_eigenvalues(&self) -> [f64; 2] {
        eig2(&self.cov)
    }

    /// Draws one `(θ, x)` sample. Works for singular covariances.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector2<f64> {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let (l11, l21, l22) = psd_cholesky(&self.cov);
        Vector2::new(
            self.mean[0] + l11 * z0,
            self.mean[1] + l21 * z0 + l22 * z1,
        )
    }

    /// Mean expected reward `h·mean`.
    pub fn predicted_reward(&self, obs: &ObservationModel) -> f64 {
        obs.h_row.dot(&self.mean)
    }

    /// Variance of the expected reward `h cov hᵀ`.
    pub fn predicted_variance(&self, obs: &ObservationModel) -> f64 {
        (obs.h_row.transpose() * self.cov * obs.h_row)[(0, 0)]
    }
}

fn eig2(m: &Matrix2<f64>) -> [f64; 2] {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    [half_tr - disc, half_tr + disc]
}

/// Lower Cholesky factor of a PSD 2×2 matrix, tolerating zero pivots.
fn psd_cholesky(m: &Matrix2<f64>) -> (f64, f64, f64) {
    let a = m[(0, 0)].max(0.0);
    let b = m[(1, 0)];
    let c = m[(1, 1)].max(0.0);
    if a > 0.0 {
        let l11 = a.sqrt();
        let l21 = b / l11;
        (l11, l21, (c - l21 * l21).max(0.0).sqrt())
    } else {
        (0.0, 0.0, c.sqrt())
    }
}

/// Symmetrizes and clamps negative eigenvalues to zero.
fn sanitize(cov: Matrix2<f64>) -> Matrix2<f64> {
    let sym = 0.5 * (cov + cov.transpose());
    let [lo, _] = eig2(&sym);
    debug_assert!(
        lo >= -1e-9 * (1.0 + sym.abs().max()),
        "covariance lost positive semidefiniteness: min eigenvalue {lo}"
    );
    // round-off-level negativity is left alone so untouched entries stay bit-exact
    if lo >= -1e-15 * sym.abs().max() {
        return sym;
    }
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = eig.eigenvectors * Matrix2::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    0.5 * (out + out.transpose())
}

/// Propagates the belief one round through the arm's dynamics.
pub fn kalman_predict(belief: &GaussianBelief, arm: &ArmSpec, pulled: bool) -> GaussianBelief {
    let a = arm.a_coef;
    let x_next = a * belief.mean[1] + if pulled { arm.b_coef } else { 0.0 } + arm.k_coef;
    let c = belief.cov;
    let cov = Matrix2::new(c[(0, 0)], a * c[(0, 1)], a * c[(1, 0)], a * a * c[(1, 1)]);
    GaussianBelief {
        mean: Vector2::new(belief.mean[0], x_next),
        cov: sanitize(cov),
    }
}

/// Conditions the belief on one observed reward.
pub fn kalman_correct(belief: &GaussianBelief, obs: &ObservationModel, reward: f64) -> GaussianBelief {
    let h = obs.h_row;
    let ph = belief.cov * h;
    let s = h.dot(&ph) + obs.noise_var;
    assert!(s > 0.0, "innovation variance must be positive, got {s}");
    let gain = ph / s;
    let innovation = reward - h.dot(&belief.mean);
    let mean = belief.mean + gain * innovation;
    let cov = (Matrix2::identity() - gain * h.transpose()) * belief.cov;
    GaussianBelief {
        mean,
        cov: sanitize(cov),
    }
}

/// One full round: correct then predict the chosen arm, predict the rest.
pub fn posterior_after_round(
    beliefs: &[GaussianBelief],
    chosen: usize,
    reward: f64,
    arms: &[ArmSpec],
) -> Vec<GaussianBelief> {
    beliefs
        .iter()
        .zip(arms)
        .enumerate()
        .map(|(a, (belief, arm))| {
            if a == chosen {
                let corrected = kalman_correct(belief, &ObservationModel::for_arm(arm), reward);
                kalman_predict(&corrected, arm, true)
            } else {
                kalman_predict(belief, arm, false)
            }
        })
        .collect()
}

/// Adds `jitter` to the state variance; a no-op at zero.
pub fn add_state_jitter(belief: &mut GaussianBelief, jitter: f64) {
    if jitter > 0.0 {
        belief.cov[(1, 1)] += jitter;
    }
}
