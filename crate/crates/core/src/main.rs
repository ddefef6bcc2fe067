use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rogue_bandit::harness::{
    emit_power_report, emit_regret_report, fmt_sig, run_power_experiment, run_regret_experiment, ExperimentConfig,
};
use rogue_bandit::inference::{
    default_a_grid, family_test, fit_arm_parameters, pooled_estimate, user_arm_least_squares, ArmFit, KnownArm,
    PooledEstimate,
};
use rogue_bandit::log::InteractionLog;
use rogue_bandit::power::{clip_probabilities, p_max_from, p_min_terms, required_p_min, ClipBounds, PowerSpec};
use rogue_bandit::{Error, Result};

/// Simulator and analysis tools for nonstationary bandits with
/// habituation and recovery.
///
/// Within a replication every policy faces the same environment draw, but
/// reward noise comes from an independent stream per policy: different
/// policies drive the states apart, so noise cannot be paired round by round.
#[derive(Parser)]
#[command(name = "rogue-bandit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated regret curves for every configured policy.
    SimulateRegret(RunArgs),
    /// Family-wise power, Type I rate and regret per pull of each policy.
    PowerExperiment(RunArgs),
    /// Exploration floor and ceiling that meet a power target.
    ComputePmin {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Projects a probability vector onto [pmin, pmax] in L1.
    Clip {
        /// Comma-separated probabilities.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        pmin: f64,
        #[arg(long, default_value_t = 1.0)]
        pmax: f64,
    },
    /// Fits every arm's dynamics and effect from a log by profile likelihood.
    FitEm {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drift term assumed known for every arm.
        #[arg(long, default_value_t = 0.0)]
        k_known: f64,
    },
    /// Per-user and pooled effect estimates with Bonferroni z-tests.
    Estimate {
        #[arg(long)]
        log: PathBuf,
        /// Known arm parameters: one list shared by every user, or one list per user.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 1-based baseline arm.
        #[arg(long, default_value_t = 1)]
        baseline: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `outputs` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_experiment(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::from_json(&read(&args.config)?)?;
    if let Some(r) = args.reps {
        cfg.n_replications = r;
    }
    if let Some(s) = args.seed {
        cfg.set_master_seed(s);
    }
    cfg.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.outputs.clone())
        .ok_or_else(|| Error::config("outputs", "no output directory; pass --out"))?;
    Ok((cfg, out))
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum KnownParams {
    Shared(Vec<KnownArm>),
    PerUser(Vec<Vec<KnownArm>>),
}

#[derive(Serialize)]
struct FitOutput {
    k_known: f64,
    arms: Vec<ArmFitEntry>,
}

#[derive(Serialize)]
struct ArmFitEntry {
    arm: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<ArmFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "estimate".into(), |s| s.to_string_lossy().into_owned());
    let ext = path.extension().map_or_else(String::new, |e| format!(".{}", e.to_string_lossy()));
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn estimate(log: &Path, params: &Path, out: &Path, baseline: usize, alpha: f64) -> Result<()> {
    let log = InteractionLog::from_json(&read(log)?)?;
    let known: KnownParams = serde_json::from_str(&read(params)?).map_err(|_| {
        Error::config("params", "expected a list of known arms, or one such list per user")
    })?;
    let n_users = log.users.len();
    let per_user: Vec<Vec<KnownArm>> = match known {
        KnownParams::Shared(a) => vec![a; n_users],
        KnownParams::PerUser(u) => {
            if u.len() != n_users {
                return Err(Error::config("params", format!("{} users in params, {n_users} in log", u.len())));
            }
            u
        }
    };
    let k = per_user.first().map_or(0, Vec::len);
    if k < 2 || per_user.iter().any(|u| u.len() != k) {
        return Err(Error::config("params", "every user needs the same number (>= 2) of arms"));
    }
    if log.n_arms() > k {
        return Err(Error::config("params", format!("log uses {} arms, params describe {k}", log.n_arms())));
    }
    if baseline == 0 || baseline > k {
        return Err(Error::config("baseline", format!("must be in 1..={k}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", "must lie in (0, 1)"));
    }

    let mut user_rows = Vec::new();
    let mut pooled = Vec::with_capacity(k);
    for a in 0..k {
        let ests: Vec<Result<_>> = log
            .users
            .iter()
            .zip(&per_user)
            .map(|(recs, arms)| user_arm_least_squares(recs, &arms[a], a))
            .collect();
        for (u, e) in ests.iter().enumerate() {
            user_rows.push(match e {
                Ok(e) => vec![
                    (u + 1).to_string(),
                    (a + 1).to_string(),
                    fmt_sig(e.theta_hat),
                    e.x0_hat.map_or_else(String::new, fmt_sig),
                    fmt_sig(e.variance),
                    e.n_pulls.to_string(),
                    "ok".into(),
                ],
                Err(err) => {
                    let status = match err {
                        Error::SingularDesign(_) => "singular",
                        Error::DomainError(_) => "domain",
                        _ => "error",
                    };
                    let n = log.users[u].iter().filter(|r| r.arm == a).count();
                    vec![(u + 1).to_string(), (a + 1).to_string(), String::new(), String::new(), String::new(), n.to_string(), status.into()]
                }
            });
        }
        pooled.push(pooled_estimate(&ests));
    }
    for (a, p) in pooled.iter().enumerate() {
        if let Err(e) = p {
            if !matches!(e, Error::NoData(_)) {
                return Err(e.clone());
            }
            if a == baseline - 1 {
                return Err(Error::NoData(format!("baseline arm {baseline} has no usable user")));
            }
        }
    }
    let dense: Vec<PooledEstimate> = pooled
        .iter()
        .map(|p| {
            p.clone().unwrap_or(PooledEstimate {
                theta_hat: f64::NAN,
                variance: f64::NAN,
                n_users_used: 0,
                n_excluded: n_users,
            })
        })
        .collect();
    let tests = family_test(&dense, baseline - 1, alpha);
    let rows: Vec<Vec<String>> = dense
        .iter()
        .enumerate()
        .map(|(a, p)| {
            let (theta, var) = if p.n_users_used == 0 {
                (String::new(), String::new())
            } else {
                (fmt_sig(p.theta_hat), fmt_sig(p.variance))
            };
            match tests.iter().find(|t| t.arm == a) {
                Some(t) if p.n_users_used > 0 => vec![
                    (a + 1).to_string(),
                    theta,
                    var,
                    fmt_sig(t.z_stat),
                    fmt_sig(t.adjusted_alpha),
                    t.reject.to_string(),
                ],
                Some(t) => vec![(a + 1).to_string(), theta, var, String::new(), fmt_sig(t.adjusted_alpha), "false".into()],
                None => vec![(a + 1).to_string(), theta, var, String::new(), String::new(), String::new()],
            }
        })
        .collect();
    write(out, &csv_text(&["arm", "theta_hat", "variance", "z", "adjusted_alpha", "reject"], &rows))?;
    let users_path = sibling(out, "_users");
    write(
        &users_path,
        &csv_text(&["user", "arm", "theta_hat", "x0_hat", "variance", "n_pulls", "status"], &user_rows),
    )?;
    println!("wrote {}\nwrote {}", out.display(), users_path.display());
    Ok(())
}

fn fit(log: &Path, out: &Path, k_known: f64) -> Result<()> {
    let log = InteractionLog::from_json(&read(log)?)?;
    let grid = default_a_grid();
    let arms = (0..log.n_arms())
        .map(|a| match fit_arm_parameters(&log, a, k_known, &grid) {
            Ok(fit) => Ok(ArmFitEntry { arm: a + 1, fit: Some(fit), error: None }),
            Err(e @ (Error::UnidentifiableModel(_) | Error::NoData(_) | Error::SingularDesign(_))) => {
                Ok(ArmFitEntry { arm: a + 1, fit: None, error: Some(e.to_string()) })
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let text = serde_json::to_string_pretty(&FitOutput { k_known, arms }).expect("fit serializes");
    write(out, &(text + "\n"))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateRegret(args) => {
            let (cfg, out) = load_experiment(&args)?;
            let report = run_regret_experiment(&cfg)?;
            print_written(&emit_regret_report(&report, &out)?);
        }
        Command::PowerExperiment(args) => {
            let (cfg, out) = load_experiment(&args)?;
            let report = run_power_experiment(&cfg)?;
            print_written(&emit_power_report(&report, &out)?);
        }
        Command::ComputePmin { spec } => {
            let spec = PowerSpec::from_json(&read(&spec)?)?;
            let terms = p_min_terms(&spec)?;
            let p_min = required_p_min(&spec)?;
            let p_max = p_max_from(p_min, spec.n_arms)?;
            let mut s = String::new();
            writeln!(s, "p_min {}", fmt_sig(p_min)).unwrap();
            writeln!(s, "p_max {}", fmt_sig(p_max)).unwrap();
            writeln!(s, "state_term {}", fmt_sig(terms.state_term)).unwrap();
            writeln!(s, "sample_term {}", fmt_sig(terms.sample_term)).unwrap();
            print!("{s}");
        }
        Command::Clip { p, pmin, pmax } => {
            let clipped = clip_probabilities(&p, ClipBounds::new(pmin, pmax))?;
            println!("{}", clipped.iter().map(|&v| fmt_sig(v)).collect::<Vec<_>>().join(","));
        }
        Command::FitEm { log, out, k_known } => fit(&log, &out, k_known)?,
        Command::Estimate { log, params, out, baseline, alpha } => estimate(&log, &params, &out, baseline, alpha)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => 2,
                Error::InfeasibleDesign { .. } => 3,
                _ => 1,
            })
        }
    }
}
