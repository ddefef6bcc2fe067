mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rogue_bandit::inference::{
    default_a_grid, family_test, fit_arm_parameters, pooled_estimate, user_arm_least_squares, KnownArm,
};
use rogue_bandit::log::{InteractionLog, Record};
use rogue_bandit::model::{ArmSpec, OracleMode};
use rogue_bandit::policy::Uniform;
use rogue_bandit::power::{estimator_variance, fisher_ratio_bound};
use rogue_bandit::rng::EpisodeStreams;
use rogue_bandit::simulate::run_episode;
use support::{arm, mean_var};

#[test]
fn two_pull_variance_and_unbiasedness() {
    let spec = arm(0.5, 0.0, 0.0, 1.0, 1.0, 2.0, 1.0, 1.0);
    let known = KnownArm::from(&spec);
    let var = estimator_variance(0.5, 1.0, 1.0, &[1, 2]).unwrap();
    assert!((var - 5.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let reps = 10_000;
    let thetas: Vec<f64> = (0..reps)
        .map(|_| {
            let recs: Vec<Record> = [(1usize, 0.5), (2, 0.25)]
                .iter()
                .map(|&(t, x)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    Record { t, arm: 0, reward: x + 2.0 + z }
                })
                .collect();
            user_arm_least_squares(&recs, &known, 0).unwrap().theta_hat
        })
        .collect();
    let (m, v) = mean_var(&thetas);
    assert!((v / 5.0 - 1.0).abs() < 0.05, "variance {v}");
    assert!((m - 2.0).abs() < 3.0 * (5.0 / reps as f64).sqrt(), "mean {m}");
}

#[test]
fn longer_design_variance_matches_formula() {
    let spec = arm(0.7, 0.4, 0.1, 1.0, 1.5, 0.8, 0.3, 1.3);
    let known = KnownArm::from(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // arm 1 pulled at every third round among 30
    let pulls: Vec<usize> = (1..=30).filter(|t| t % 3 == 1).collect();
    let want = estimator_variance(0.7, 1.5, 1.3, &pulls).unwrap();
    let mut x = spec.x0_true;
    let mut states = Vec::new();
    for t in 1..=30 {
        x = spec.a_coef * x + spec.k_coef + if t > 1 && (t - 1) % 3 == 1 { spec.b_coef } else { 0.0 };
        states.push(x);
    }
    let thetas: Vec<f64> = (0..10_000)
        .map(|_| {
            let recs: Vec<Record> = (1..=30)
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let (arm, reward) = if pulls.contains(&t) {
                        (0, states[t - 1] + 1.5 * 0.8 + 1.3 * z)
                    } else {
                        (1, z)
                    };
                    Record { t, arm, reward }
                })
                .collect();
            user_arm_least_squares(&recs, &known, 0).unwrap().theta_hat
        })
        .collect();
    let (m, v) = mean_var(&thetas);
    assert!((v / want - 1.0).abs() < 0.05, "variance {v} vs {want}");
    assert!((m - 0.8).abs() < 3.0 * (want / 1e4).sqrt(), "mean {m}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn fisher_ratio_never_exceeds_bound(
        a in prop_oneof![-0.98..-0.01f64, 0.01..0.98f64],
        pulls in proptest::collection::btree_set(1usize..200, 1..40),
    ) {
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        let t0 = *pulls.iter().next().unwrap();
        for &t in &pulls {
            let u = a.powi((t - t0) as i32);
            s1 += u;
            s2 += u * u;
        }
        prop_assert!(s1 * s1 / s2 <= fisher_ratio_bound(a).unwrap() * (1.0 + 1e-12));
    }
}

fn simulate_users(arms: &[ArmSpec], n_users: usize, horizon: usize, seed: u64) -> InteractionLog {
    InteractionLog::new(
        (0..n_users)
            .map(|u| {
                let mut p = Uniform::new(arms.len());
                let mut s = EpisodeStreams::new(seed, 0, u as u64, 0);
                run_episode(arms, horizon, OracleMode::Greedy, &mut p, &mut s).records
            })
            .collect(),
    )
}

#[test]
fn family_false_rejections_under_the_null() {
    let alpha0 = 0.05;
    let reps = 10_000;
    let mut hits = 0;
    for rep in 0..reps {
        let arms: Vec<ArmSpec> = (0..3)
            .map(|a| arm(0.6, 0.2 * a as f64, 0.1, 1.0, 1.0, 0.5, 0.5, 1.0))
            .collect();
        let log = simulate_users(&arms, 5, 30, rep);
        let pooled: Vec<_> = (0..3)
            .map(|a| {
                let k = KnownArm::from(&arms[a]);
                let per: Vec<_> = log.users.iter().map(|r| user_arm_least_squares(r, &k, a)).collect();
                pooled_estimate(&per).unwrap()
            })
            .collect();
        hits += usize::from(family_test(&pooled, 0, alpha0).iter().any(|o| o.reject));
    }
    let bound = alpha0 + 3.0 * (alpha0 * (1.0 - alpha0) / reps as f64).sqrt();
    let rate = hits as f64 / reps as f64;
    assert!(rate <= bound, "family-wise false rejection {rate} > {bound}");
}

#[test]
fn noiseless_fit_is_exact() {
    let arms = [
        arm(0.5, -0.3, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0),
        arm(0.3, 0.2, 0.0, 1.0, 1.0, 0.2, 0.0, 0.0),
    ];
    let users: Vec<Vec<Record>> = (0..4)
        .map(|u| {
            let mut specs = arms;
            specs[0].x0_true = 0.4 + 0.3 * u as f64;
            let mut p = Uniform::new(2);
            let mut s = EpisodeStreams::new(9, 0, u, 0);
            run_episode(&specs, 200, OracleMode::Greedy, &mut p, &mut s).records
        })
        .collect();
    let log = InteractionLog::new(users);
    let fit = fit_arm_parameters(&log, 0, 0.0, &default_a_grid()).unwrap();
    assert!((fit.a_coef - 0.5).abs() < 1e-9, "{fit:?}");
    assert!((fit.b_coef.unwrap() + 0.3).abs() < 1e-9, "{fit:?}");
    assert!((fit.theta - 1.0).abs() < 1e-9, "{fit:?}");
    for (u, x0) in fit.x0.iter().enumerate() {
        assert!((x0.unwrap() - (0.4 + 0.3 * u as f64)).abs() < 1e-9, "{fit:?}");
    }
    assert!(fit.rss < 1e-18);
}

#[test]
fn noisy_fit_is_close() {
    let truth = arm(0.6, 0.4, 0.0, 1.0, 1.0, 0.7, 0.5, 0.3);
    let other = arm(0.2, 0.1, 0.0, 1.0, 1.0, 0.1, 0.5, 0.3);
    let log = simulate_users(&[truth, other], 5, 600, 77);
    let fit = fit_arm_parameters(&log, 0, 0.0, &default_a_grid()).unwrap();
    assert!((fit.a_coef - 0.6).abs() <= 0.05, "{fit:?}");
    assert!((fit.theta - 0.7).abs() <= 0.1, "{fit:?}");
    assert!((fit.sigma - 0.3).abs() < 0.05, "{fit:?}");
}
