//! End-to-end acceptance checks. Runs as a plain binary so every check
//! prints its own PASS/FAIL line; exits non-zero if any check fails.

mod support;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use rogue_bandit::filter::{posterior_after_round, GaussianBelief};
use rogue_bandit::harness::{
    run_power_experiment, run_regret_experiment, Clipping, ExperimentConfig, GlmGenerator, PowerGenerator,
    ScenarioSource,
};
use rogue_bandit::inference::{default_a_grid, fit_arm_parameters, user_arm_least_squares, KnownArm};
use rogue_bandit::log::{InteractionLog, Record};
use rogue_bandit::model::{ArmSpec, OracleMode, StateBox};
use rogue_bandit::policy::{build_policy, PolicyContext, PolicyKind, PolicySpec, Uniform};
use rogue_bandit::power::{clip_probabilities, required_p_min, ClipBounds, ClippedPolicy, PowerSpec};
use rogue_bandit::rng::EpisodeStreams;
use rogue_bandit::simulate::run_episode;
use support::{arm, grid_bayes, lp_clip_optimum, mean_var};

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn clipping_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=5);
        let e: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();
        let p_min = rng.random::<f64>() / k as f64;
        let p_max = 1.0 / k as f64 + rng.random::<f64>() * (1.0 - 1.0 / k as f64);
        let q = match clip_probabilities(&p, ClipBounds::new(p_min, p_max)) {
            Ok(q) => q,
            Err(e) => return outcome(false, format!("feasible instance rejected: {e}")),
        };
        let got: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        let want = lp_clip_optimum(&p, p_min, p_max).expect("feasible");
        worst = worst.max((got - want).abs());
    }
    outcome(worst <= 1e-9, format!("max |objective - LP optimum| = {worst:.2e} over 1000 instances (tol 1e-9)"))
}

fn kalman_exactness() -> Outcome {
    let arms = [
        arm(0.8, 0.3, 0.1, 1.0, 1.0, 0.6, 0.4, 0.7),
        arm(0.6, -0.2, 0.2, 0.7, 1.2, 0.3, 0.6, 0.5),
    ];
    let b = StateBox::enclosing((0.0, 1.0), (0.0, 1.0), &arms);
    let prior = GaussianBelief::box_prior(&b);
    let script = [(0, 1.1), (1, 0.9), (0, 1.3), (1, 0.6), (0, 1.2)];
    let mut beliefs = vec![prior; 2];
    for &(a, r) in &script {
        beliefs = posterior_after_round(&beliefs, a, r, &arms);
    }
    let (mut dm, mut dc) = (0.0f64, 0.0f64);
    for (a, spec) in arms.iter().enumerate() {
        let hist: Vec<Option<f64>> = script.iter().map(|&(c, r)| (c == a).then_some(r)).collect();
        let g = grid_bayes(spec, [0.5, 0.5], [0.5, 0.5], &hist, 400, 8.0);
        for i in 0..2 {
            dm = dm.max((beliefs[a].mean[i] - g.mean[i]).abs());
            for j in 0..2 {
                dc = dc.max((beliefs[a].cov[(i, j)] - g.cov[i][j]).abs());
            }
        }
    }
    outcome(
        dm <= 1e-3 && dc <= 5e-3,
        format!("max mean error {dm:.2e} (tol 1e-3), max covariance error {dc:.2e} (tol 5e-3)"),
    )
}

fn variance_two_pulls() -> Outcome {
    let known = KnownArm::from(&arm(0.5, 0.0, 0.0, 1.0, 1.0, 2.0, 1.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let thetas: Vec<f64> = (0..10_000)
        .map(|_| {
            let recs = [(1usize, 0.5), (2, 0.25)].map(|(t, x)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                Record { t, arm: 0, reward: x + 2.0 + z }
            });
            user_arm_least_squares(&recs, &known, 0).expect("two pulls").theta_hat
        })
        .collect();
    let (_, v) = mean_var(&thetas);
    let rel = (v / 5.0 - 1.0).abs();
    outcome(rel <= 0.05, format!("empirical variance {v:.4} vs 5.0, relative error {:.2}% (tol 5%)", 100.0 * rel))
}

fn spec_4() -> PowerSpec {
    PowerSpec {
        alpha0: 0.05,
        beta0: 0.2,
        delta0: 1.0,
        n_users: 15,
        horizon: 90,
        n_arms: 3,
        a_abs: 0.5,
        sigma: 1.0,
        effect_coef: 1.0,
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rogue-bandit"))
}

fn floor_value(dir: &Path) -> Outcome {
    let spec = dir.join("spec.json");
    fs::write(&spec, serde_json::to_string(&spec_4()).unwrap()).unwrap();
    let out = bin().args(["compute-pmin", "--spec"]).arg(&spec).output().expect("binary runs");
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let p_min: Option<f64> = text.lines().find_map(|l| l.strip_prefix("p_min ")).and_then(|v| v.parse().ok());
    let Some(p_min) = p_min else {
        return outcome(false, format!("no p_min in output: {text:?}"));
    };
    let sweep = |f: &dyn Fn(usize) -> PowerSpec, range: std::ops::RangeInclusive<usize>| {
        let v: Vec<f64> = range.filter_map(|n| required_p_min(&f(n)).ok()).collect();
        v.len() > 10 && v.windows(2).all(|w| w[1] < w[0])
    };
    let mono_n = sweep(&|n| PowerSpec { n_users: n, ..spec_4() }, 10..=200);
    let mono_t = sweep(&|t| PowerSpec { horizon: t, ..spec_4() }, 60..=2000);
    outcome(
        (p_min - 0.0489).abs() <= 1e-5 && mono_n && mono_t,
        format!("p_min = {p_min} (want 0.048900 +/- 1e-5); decreasing in N: {mono_n}, in T: {mono_t}"),
    )
}

struct RegretNumbers {
    ts: Vec<f64>,
    naive: f64,
    rexp3: f64,
    ucb: f64,
}

fn regret_experiment() -> Result<RegretNumbers, String> {
    let mut cfg = ExperimentConfig::new(
        ScenarioSource::Glm(GlmGenerator {
            n_arms: 3,
            horizon: 5000,
            master_seed: SEED,
            ..Default::default()
        }),
        [PolicyKind::RogueTs, PolicyKind::NaiveTs, PolicyKind::Rexp3, PolicyKind::RogueUcb]
            .map(PolicySpec::new)
            .to_vec(),
    );
    cfg.n_replications = 20;
    let r = run_regret_experiment(&cfg).map_err(|e| e.to_string())?;
    let last = |l: &str| *r.policy(l).unwrap().cum_regret.mean.last().unwrap();
    Ok(RegretNumbers {
        ts: r.policy("rogue_ts").unwrap().cum_regret.mean.clone(),
        naive: last("naive_ts"),
        rexp3: last("rexp3"),
        ucb: last("rogue_ucb"),
    })
}

fn regret_ordering(n: &RegretNumbers) -> Outcome {
    let ts = *n.ts.last().unwrap();
    let pass = ts < n.naive && ts < n.rexp3 && ts <= 1.25 * n.ucb;
    outcome(
        pass,
        format!(
            "final mean regret: rogue_ts {ts:.1}, naive_ts {:.1}, rexp3 {:.1}, rogue_ucb {:.1} (need ts < naive, ts < rexp3, ts <= 1.25 ucb)",
            n.naive, n.rexp3, n.ucb
        ),
    )
}

fn sublinearity(n: &RegretNumbers) -> Outcome {
    let r = |t: usize| n.ts[t - 1];
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [1250, 2500] {
        let (a, b) = (r(t), r(2 * t));
        let ratio = b / a;
        pass &= a > 0.0 && ratio <= 1.9;
        parts.push(format!("R({})/R({t}) = {b:.1}/{a:.1} = {ratio:.3}", 2 * t));
    }
    outcome(pass, format!("{} (need positive R and ratio <= 1.9)", parts.join(", ")))
}

fn power_experiment() -> Result<(Outcome, Outcome), String> {
    let mut cfg = ExperimentConfig::new(
        ScenarioSource::Power(PowerGenerator {
            n_users: 15,
            horizon: 90,
            master_seed: SEED,
            ..Default::default()
        }),
        vec![
            PolicySpec::new(PolicyKind::RogueTs).clipped(),
            PolicySpec::new(PolicyKind::RogueUcb).clipped(),
            PolicySpec::new(PolicyKind::RogueTs),
            PolicySpec::new(PolicyKind::Uniform),
        ],
    );
    cfg.n_replications = 200;
    cfg.power = Some(spec_4());
    cfg.clipping = Clipping::PowerFloor;
    let r = run_power_experiment(&cfg).map_err(|e| e.to_string())?;
    let ts_c = r.policy("rogue_ts_clip").unwrap();
    let ucb_c = r.policy("rogue_ucb_clip").unwrap();
    let ts = r.policy("rogue_ts").unwrap();
    let uni = r.policy("uniform").unwrap();
    let t1_max = 0.05 + 0.046;
    let pass7 = ts_c.power >= 0.8
        && ucb_c.power >= 0.8
        && ts_c.type1 <= t1_max
        && ucb_c.type1 <= t1_max
        && ts.power < ts_c.power
        && ts_c.regret_per_pull < uni.regret_per_pull
        && ucb_c.regret_per_pull < uni.regret_per_pull;
    let c7 = outcome(
        pass7,
        format!(
            "power ts_clip {:.3}, ucb_clip {:.3}, ts {:.3}; type I ts_clip {:.3}, ucb_clip {:.3} (max {t1_max}); regret/pull ts_clip {:.3}, ucb_clip {:.3}, uniform {:.3}",
            ts_c.power, ucb_c.power, ts.power, ts_c.type1, ucb_c.type1, ts_c.regret_per_pull, ucb_c.regret_per_pull, uni.regret_per_pull
        ),
    );

    // Per user the bound uses that user's p_max and C_g; averaged over users
    // the additive part is the mean of (1 - p_max)·C_g and the unclipped curve
    // is read at the mean p_max.
    let n = r.users.len() as f64;
    let p_max = r.users.iter().map(|u| u.p_max).sum::<f64>() / n;
    let slope = r.users.iter().map(|u| (1.0 - u.p_max) * u.c_g).sum::<f64>() / n;
    let unclipped = &ts.cum_regret.mean;
    let at = |s: f64| -> f64 {
        if s < 1.0 {
            return s * unclipped[0];
        }
        let i = s.floor() as usize;
        let frac = s - i as f64;
        let lo = unclipped[i - 1];
        let hi = unclipped.get(i).copied().unwrap_or(lo);
        lo + frac * (hi - lo)
    };
    let mut worst = f64::INFINITY;
    let mut worst_t = 0;
    for (i, &got) in ts_c.cum_regret.mean.iter().enumerate() {
        let t = (i + 1) as f64;
        let margin = at(p_max * t) + slope * t - got;
        if margin < worst {
            worst = margin;
            worst_t = i + 1;
        }
    }
    let c8 = outcome(
        worst >= 0.0,
        format!("smallest margin bound - measured = {worst:.3} at t = {worst_t} (mean p_max {p_max:.3}, mean (1-p_max)C_g {slope:.3})"),
    );
    Ok((c7, c8))
}

fn exploration_floor() -> Outcome {
    let arms = vec![
        arm(0.7, 0.3, 0.1, 1.0, 1.0, 0.3, 0.4, 1.0),
        arm(0.5, 0.2, 0.2, 0.8, 1.0, 0.9, 0.6, 1.2),
        arm(0.3, 0.1, 0.1, 1.0, 1.0, 0.5, 0.2, 1.0),
    ];
    let b = StateBox::enclosing((0.0, 1.0), (0.0, 1.5), &arms);
    let horizon = 2000;
    let mut worst = f64::INFINITY;
    let mut report = String::new();
    for p_min in [0.05, 0.2] {
        let slack = 3.0 * (p_min * (1.0 - p_min) / horizon as f64).sqrt();
        for kind in [
            PolicyKind::RogueTs,
            PolicyKind::NaiveTs,
            PolicyKind::Rexp3,
            PolicyKind::RogueUcb,
            PolicyKind::Uniform,
            PolicyKind::Oracle,
        ] {
            let ctx = PolicyContext { arms: &arms, state_box: &b, horizon, oracle_mode: OracleMode::Greedy };
            let base = build_policy(&PolicySpec::new(kind), ctx, "policy").unwrap();
            let mut p = ClippedPolicy::new(base, ClipBounds::from_p_min(p_min, 3).unwrap()).unwrap();
            let ep = run_episode(&arms, horizon, OracleMode::Greedy, &mut p, &mut EpisodeStreams::new(SEED, 0, 0, kind as u64));
            let min_freq = ep.pull_counts(3).iter().map(|&c| c as f64 / horizon as f64).fold(1.0, f64::min);
            let margin = min_freq - (p_min - slack);
            if margin < worst {
                worst = margin;
                report = format!("lowest arm frequency {min_freq:.4} for {kind:?} at p_min {p_min} (floor {:.4})", p_min - slack);
            }
        }
    }
    outcome(worst >= 0.0, report)
}

fn fit_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let grid = default_a_grid();
    let mut ok = 0;
    for rep in 0..100u64 {
        let (a, b, theta) = (0.5, -0.3, 1.0);
        let other = arm(0.4, 0.2, 0.0, 1.0, 1.0, 0.5, 0.5, 0.3);
        let users: Vec<Vec<Record>> = (0..10)
            .map(|u| {
                let target = arm(a, b, 0.0, 1.0, 1.0, theta, rng.random(), 0.3);
                let mut p = Uniform::new(2);
                let mut s = EpisodeStreams::new(SEED, rep, u, 0);
                run_episode(&[target, other], 2000, OracleMode::Greedy, &mut p, &mut s).records
            })
            .collect();
        if let Ok(fit) = fit_arm_parameters(&InteractionLog::new(users), 0, 0.0, &grid) {
            ok += usize::from((fit.a_coef - a).abs() <= 0.05 && (fit.theta - theta).abs() <= 0.1);
        }
    }
    outcome(ok >= 95, format!("{ok}/100 replications within tolerance (need >= 95)"))
}

fn cli_determinism(dir: &Path) -> Outcome {
    let spec = serde_json::to_string(&spec_4()).unwrap();
    fs::write(dir.join("spec.json"), &spec).unwrap();
    fs::write(
        dir.join("regret.json"),
        r#"{"scenario":{"glm":{"horizon":500}},"n_replications":4,
            "policies":[{"kind":"rogue_ts"},{"kind":"naive_ts"},{"kind":"rexp3"},{"kind":"rogue_ucb"},{"kind":"uniform"},{"kind":"oracle"}]}"#,
    )
    .unwrap();
    fs::write(
        dir.join("power.json"),
        format!(
            r#"{{"scenario":{{"power":{{}}}},"n_replications":5,"power":{spec},"clipping":"theorem8",
                "policies":[{{"kind":"rogue_ts","clipped":true}},{{"kind":"rogue_ucb","clipped":true}},{{"kind":"uniform"}}]}}"#
        ),
    )
    .unwrap();
    let arms: Vec<ArmSpec> = (0..3).map(|a| arm(0.3 + 0.2 * a as f64, 0.3, 0.0, 1.0, 1.0, [0.5, 1.0, 0.5][a], 0.5, 0.5)).collect();
    let users = (0..5)
        .map(|u| {
            let mut p = Uniform::new(3);
            run_episode(&arms, 200, OracleMode::Greedy, &mut p, &mut EpisodeStreams::new(SEED, 0, u, 0)).records
        })
        .collect();
    fs::write(dir.join("log.json"), InteractionLog::new(users).to_json()).unwrap();
    let known: Vec<KnownArm> = arms.iter().map(KnownArm::from).collect();
    fs::write(dir.join("params.json"), serde_json::to_string(&known).unwrap()).unwrap();

    let mut captured: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for run in ["run1", "run2"] {
        let out = dir.join(run);
        fs::create_dir_all(&out).unwrap();
        let i = |f: &str| dir.join(f).display().to_string();
        let o = |f: &str| out.join(f).display().to_string();
        let cmds: Vec<(&str, Vec<String>)> = vec![
            ("simulate-regret", vec!["--config".into(), i("regret.json"), "--out".into(), o("regret"), "--seed".into(), "9".into()]),
            ("power-experiment", vec!["--config".into(), i("power.json"), "--out".into(), o("power"), "--seed".into(), "9".into()]),
            ("compute-pmin", vec!["--spec".into(), i("spec.json")]),
            ("clip", vec!["--p".into(), "0.7,0.2,0.1,0".into(), "--pmin".into(), "0.05".into(), "--pmax".into(), "0.6".into()]),
            ("fit-em", vec!["--log".into(), i("log.json"), "--out".into(), o("fit.json")]),
            ("estimate", vec!["--log".into(), i("log.json"), "--params".into(), i("params.json"), "--out".into(), o("estimate.csv")]),
        ];
        let mut files = Vec::new();
        for (name, args) in cmds {
            let res = bin().arg(name).args(&args).output().expect("binary runs");
            if !res.status.success() {
                return outcome(false, format!("{name} failed: {}", String::from_utf8_lossy(&res.stderr)));
            }
            files.push((format!("{name} stdout"), String::from_utf8_lossy(&res.stdout).replace(run, "RUN").into_bytes()));
        }
        for sub in ["", "regret", "power"] {
            let d = out.join(sub);
            let mut names: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
            names.sort();
            for p in names {
                files.push((p.strip_prefix(&out).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
        captured.push(files);
    }
    let same = captured[0] == captured[1];
    outcome(same, format!("6 subcommands, {} outputs compared byte for byte", captured[0].len()))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failures = 0;
    let mut report = |n: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let mut o = f();
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                o.pass = false;
                o.detail.push_str(&format!("; exceeded the {}s budget", limit.as_secs()));
            }
        }
        println!(
            "criterion {n:>2} [{}] {name}: {} ({:.2}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
        failures += usize::from(!o.pass);
    };
    let secs = |s| Some(Duration::from_secs(s));

    report(1, "clipping optimality", secs(10), &mut clipping_optimality);
    report(2, "Kalman exactness", secs(30), &mut kalman_exactness);
    report(3, "two-pull estimator variance", secs(20), &mut variance_two_pulls);
    report(4, "exploration floor value", None, &mut || floor_value(dir.path()));

    let start = Instant::now();
    let regret = regret_experiment();
    let regret_time = start.elapsed();
    match &regret {
        Ok(n) => {
            report(5, "regret ordering", secs(300), &mut || {
                let mut o = regret_ordering(n);
                o.detail.push_str(&format!("; experiment {:.1}s", regret_time.as_secs_f64()));
                if regret_time > Duration::from_secs(300) {
                    o.pass = false;
                    o.detail.push_str("; experiment exceeded 300s");
                }
                o
            });
            report(6, "sublinear regret", None, &mut || sublinearity(n));
        }
        Err(e) => {
            report(5, "regret ordering", None, &mut || outcome(false, e.clone()));
            report(6, "sublinear regret", None, &mut || outcome(false, e.clone()));
        }
    }

    let start = Instant::now();
    let power = power_experiment();
    let power_time = start.elapsed();
    match power {
        Ok((c7, c8)) => {
            let mut c7 = Some(c7);
            let mut c8 = Some(c8);
            report(7, "power experiment", None, &mut || {
                let mut o = c7.take().unwrap();
                o.detail.push_str(&format!("; experiment {:.1}s", power_time.as_secs_f64()));
                if power_time > Duration::from_secs(600) {
                    o.pass = false;
                    o.detail.push_str(", over the 600s budget");
                }
                o
            });
            report(8, "clipped regret bound", None, &mut || c8.take().unwrap());
        }
        Err(e) => {
            report(7, "power experiment", None, &mut || outcome(false, e.clone()));
            report(8, "clipped regret bound", None, &mut || outcome(false, e.clone()));
        }
    }

    report(9, "exploration floor under clipping", None, &mut exploration_floor);
    report(10, "fit recovery", None, &mut fit_recovery);
    report(11, "CLI determinism", None, &mut || cli_determinism(dir.path()));

    println!("{} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
