//! `actest`: run, sweep, bound and validate active-estimation experiments
//! described by JSON config files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use active_estimation::config::{check_assumptions, parse_config, CheckStatus, Experiment, RunConfig};
use active_estimation::report::{append_run_rows, run_csv_header, sweep_csv, trajectory_csv};
use active_estimation::runner::{resolve_stopping, run_monte_carlo, summarize, sweep_beta};
use active_estimation::theory::{bound_report, theorem_bounds};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "actest", version, about = "Active sampling for sequential parameter estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo trials at one tolerance; one CSV row per trial.
    Run(Common),
    /// Summary rows for every (rule, beta) pair.
    Sweep(Common),
    /// Sample-complexity characteristics and theorem bounds at the truth.
    Bounds(Common),
    /// Numerical checks of the modelling assumptions.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Base seed; trial j uses seed + j.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_trials: Option<usize>,
    /// Shared tolerance (run, bounds) or comma-separated list (sweep).
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    /// Comma-separated rule specs, e.g. `greedy_fi,uniform_random`.
    #[arg(long, value_delimiter = ',')]
    rules: Option<Vec<String>>,
    /// Comma-separated h values for `bounds`.
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<f64>>,
    /// Output file; defaults to the config's `output`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the trial pool (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write every trial's per-step log to this CSV file (run only).
    #[arg(long)]
    log_trajectory: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(3),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => with_pool(c, cmd_run),
        Command::Sweep(c) => with_pool(c, cmd_sweep),
        Command::Bounds(c) => cmd_bounds(c),
        Command::Validate(c) => cmd_validate(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            f.exit_code()
        }
    }
}

fn with_pool(c: &Common, f: fn(&Common) -> Result<(), Failure>) -> Result<(), Failure> {
    match c.threads {
        Some(0) => Err(Failure::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Runtime(e.to_string()))?
            .install(|| f(c)),
        None => f(c),
    }
}

fn read_config(c: &Common) -> Result<(String, RunConfig), Failure> {
    let text = fs::read_to_string(&c.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", c.config.display())))?;
    let cfg = parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", c.config.display())))?;
    Ok((text, cfg))
}

/// Applies command-line overrides, then validates everything.
fn load(c: &Common, sweep: bool) -> Result<(RunConfig, Experiment), Failure> {
    let (text, mut cfg) = read_config(c)?;
    if let Some(seed) = c.seed {
        cfg.base_seed = seed;
    }
    if let Some(n) = c.n_trials {
        cfg.n_trials = n;
    }
    if let Some(rules) = &c.rules {
        cfg.rules = rules.clone();
    }
    if let Some(h) = &c.h {
        cfg.h = Some(h.clone());
    }
    if let Some(betas) = &c.beta {
        if sweep {
            cfg.betas = Some(betas.clone());
        } else {
            match betas.as_slice() {
                [b] => cfg.beta = *b,
                _ => return Err(Failure::Config("--beta takes a single value here".into())),
            }
        }
    }
    let exp = cfg
        .build(Some(&text))
        .map_err(|e| Failure::Config(format!("{}: {e}", c.config.display())))?;
    Ok((cfg, exp))
}

fn output_path(c: &Common, exp: &Experiment) -> Option<PathBuf> {
    c.out.clone().or_else(|| exp.output.as_ref().map(PathBuf::from))
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let (cfg, exp) = load(c, false)?;
    let scenario = &exp.scenario;
    let k = scenario.suite.len();
    let joint = cfg.is_joint();
    let beta = scenario.tol.beta;
    let log = c.log_trajectory.is_some();
    let mut csv = run_csv_header(k, joint);
    csv.push('\n');
    let mut trajectories = String::new();
    for spec in &exp.rules {
        let (stopping, calibration) = resolve_stopping(scenario, spec, exp.n_trials, exp.base_seed)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", spec.label)))?;
        let records = run_monte_carlo(scenario, &spec.sampling, &stopping, exp.n_trials, exp.base_seed, log);
        append_run_rows(&mut csv, &spec.label, beta, &records, k, joint);
        if log {
            let part = trajectory_csv(&spec.label, beta, &records, k, joint);
            // keep a single header across rules
            let body = if trajectories.is_empty() { &part[..] } else { part.split_once('\n').map_or("", |p| p.1) };
            trajectories.push_str(body);
        }
        let s = summarize(&spec.label, beta, &records);
        let cal = calibration.map(|c| format!(" c={}", c.c)).unwrap_or_default();
        eprintln!(
            "rule={} beta={} stopping={}{} n={} mean_T={} std_T={} stop_rate={} errors={}",
            s.label, s.beta, stopping, cal, s.n, s.mean_t, s.std_t, s.stop_rate, s.errors
        );
    }
    emit(output_path(c, &exp).as_deref(), &csv)?;
    if let Some(path) = &c.log_trajectory {
        emit(Some(path), &trajectories)?;
    }
    Ok(())
}

fn cmd_sweep(c: &Common) -> Result<(), Failure> {
    let (_, exp) = load(c, true)?;
    let cells = sweep_beta(&exp.scenario, &exp.rules, &exp.betas, exp.n_trials, exp.base_seed)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    for cell in &cells {
        if let Some(cal) = &cell.calibration {
            eprintln!(
                "rule={} beta={} calibrated c={} (pilot mean cost {}, {} evaluations, monotone {})",
                cell.summary.label, cell.summary.beta, cal.c, cal.mean_cost_shared, cal.evaluations, cal.monotone
            );
        }
    }
    emit(output_path(c, &exp).as_deref(), &sweep_csv(cells.iter().map(|c| &c.summary)))?;
    eprintln!("{} summary rows", cells.len());
    Ok(())
}

fn cmd_bounds(c: &Common) -> Result<(), Failure> {
    let (_, exp) = load(c, false)?;
    let s = &exp.scenario;
    let report = bound_report(&s.suite, &s.truth, &s.tol).map_err(|e| Failure::Runtime(e.to_string()))?;
    let fmt_opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    let q: Vec<String> = report.q_star.iter().map(|q| q.to_string()).collect();
    let mut out = format!("# asymptotic reference at the ground truth\nK={}\nbeta={}\nV_beta={}\n", report.k, report.beta, report.v_beta);
    if let Some(w) = report.w_beta {
        let vp: Vec<String> = report.v_private.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "W_beta={w}\nV_shared={}\nV_private={}\nV_max={}\nV_min={}\n",
            fmt_opt(report.v_shared),
            vp.join("/"),
            fmt_opt(report.v_max),
            fmt_opt(report.v_min)
        ));
    }
    out.push_str(&format!("beta_max={}\nbeta_min={}\nq_star={}\n", report.beta_max, report.beta_min, q.join("/")));
    out.push_str("h,shared_converse,shared_achievable,joint_converse,joint_achievable\n");
    for &h in &exp.h {
        let b = theorem_bounds(&report, h).map_err(|e| Failure::Config(e.to_string()))?;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.h,
            b.shared_converse,
            b.shared_achievable,
            fmt_opt(b.joint_converse),
            fmt_opt(b.joint_achievable)
        ));
    }
    emit(c.out.as_deref(), &out)
}

fn cmd_validate(c: &Common) -> Result<(), Failure> {
    let (_, cfg) = read_config(c)?;
    let checks = check_assumptions(&cfg);
    let mut failed = Vec::new();
    for check in &checks {
        let status = match check.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => {
                failed.push(check.id);
                "FAIL"
            }
            CheckStatus::Skipped => "skipped",
        };
        println!("{} {status}: {}", check.id, check.detail);
    }
    if !failed.is_empty() {
        return Err(Failure::Config(format!("failed assumption checks: {}", failed.join(", "))));
    }
    // the assumptions hold; the rest of the config must also build
    load(c, false).map(|_| ())
}
