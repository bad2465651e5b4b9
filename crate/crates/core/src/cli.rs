//! Command-line surface. Every subcommand resolves a config, applies flag
//! overrides, writes one CSV plus a manifest and prints a one-line summary.
//!
//! Exit codes: 0 success, 2 divergence or global instability, 3 calibration
//! failure, 4 config or usage error, 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{parse_config, RunConfig};
use crate::error::StabilityError;
use crate::experiments::{
    bifurcation_scan, linear_grid, policy_sweep, seeded_run, stochastic_stability_scan,
    theta_sweep, CellStatus, NoiseScanSpec, TargetSpec,
};
use crate::model::Trajectory;
use crate::output::{
    atomic_write, manifest_path, opt_real, real, sibling, termination_label, trajectory_csv,
    RunManifest, Table,
};
use crate::risk::{
    cycle_period, equity_returns, peak_to_trough, poincare_section, realized_shortfall,
    section_occupancy, CrossingDirection, DEFAULT_PLANE_PRICE,
};
use crate::stability::{
    analyze, classify_with_start, critical_alpha, fixed_point, lyapunov_clone, lyapunov_leading,
    LyapunovSpec, Regime,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Fixed-point leverages of the regime scan.
pub fn default_leverage_grid() -> Vec<f64> {
    (0..29).map(|k| 1.25f64.powi(k)).collect()
}

pub const DEFAULT_THETA_TAU: [f64; 5] = [0.5, 0.75, 0.95, 1.25, 1.5];

const SECTION_GRID: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "levcycle", version, about = "Bank leverage-cycle simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (`key = value`); missing keys take the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Result CSV; the manifest goes next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Seeded trajectory from the default start.
    Simulate,
    /// Fixed point and its feasibility.
    FixedPoint,
    /// Jacobian spectrum, regime and Lyapunov exponent at the fixed point.
    Stability,
    /// Riskiness where the fixed point loses stability.
    CriticalAlpha,
    /// Leading Lyapunov exponent by tangent and clone methods.
    Lyapunov,
    /// Regime over (b, fixed-point leverage) and the stability boundary.
    Bifurcation,
    /// Calibrated realized shortfall across cyclicality.
    PolicySweep,
    /// Critical point across adjustment speeds.
    ThetaSweep,
    /// Deterministic versus noisy critical leverage across cyclicality.
    StochasticStability,
    /// Upward price crossings of the section plane.
    Poincare,
    /// Realized shortfall and cycle statistics of one run.
    Risk,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::FixedPoint => "fixed-point",
            Command::Stability => "stability",
            Command::CriticalAlpha => "critical-alpha",
            Command::Lyapunov => "lyapunov",
            Command::Bifurcation => "bifurcation",
            Command::PolicySweep => "policy-sweep",
            Command::ThetaSweep => "theta-sweep",
            Command::StochasticStability => "stochastic-stability",
            Command::Poincare => "poincare",
            Command::Risk => "risk",
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

/// Result CSV and the summary line of a finished command. `code` is nonzero
/// when the run completed but ended in divergence or failed calibration.
struct Outcome {
    csv: String,
    extra: Vec<(PathBuf, String)>,
    summary: String,
    status: String,
    code: i32,
}

impl Outcome {
    fn ok(csv: String, summary: String) -> Self {
        Self {
            csv,
            extra: Vec::new(),
            summary,
            status: "completed".into(),
            code: EXIT_OK,
        }
    }
}

fn stability_failure(e: StabilityError) -> Failure {
    match e {
        StabilityError::Param(p) => Failure::new(EXIT_CONFIG, p.to_string()),
        other => Failure::new(EXIT_FAILURE, other.to_string()),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
            })?;
            parse_config(&text)
                .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(b) = cli.b {
        cfg.model.policy.b = b;
    }
    if let Some(alpha) = cli.alpha {
        cfg.model.policy.alpha = alpha;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.display().to_string());
    }
    cfg.validate()
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    Ok(cfg)
}

fn trajectory_status(traj: &Trajectory) -> (String, i32) {
    let code = if traj.is_diverged() { EXIT_DIVERGED } else { EXIT_OK };
    (termination_label(&traj.termination), code)
}

fn cmd_simulate(cfg: &RunConfig) -> Outcome {
    let traj = seeded_run(&cfg.model, &cfg.garch, cfg.seed, cfg.n_steps);
    let (status, code) = trajectory_status(&traj);
    let last = traj.last_state();
    Outcome {
        csv: trajectory_csv(&traj),
        extra: Vec::new(),
        summary: format!(
            "simulate: {} steps, {status}, final price {}",
            traj.len(),
            real(last.p)
        ),
        status,
        code,
    }
}

fn cmd_fixed_point(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let fp = fixed_point(&cfg.model).map_err(stability_failure)?;
    let s = fp.state;
    let mut t = Table::new(&[
        "sigma_sq", "w_f", "price", "n", "l_b", "p_lag", "lambda_star", "r_star", "feasible",
    ]);
    t.push(vec![
        real(s.sigma_sq),
        real(s.w_f),
        real(s.p),
        real(s.n),
        real(s.l_b),
        real(s.p_lag),
        real(fp.lambda_star),
        real(fp.r_star),
        fp.feasible.to_string(),
    ]);
    Ok(Outcome::ok(
        t.to_csv(),
        format!(
            "fixed-point: lambda* = {}, n* = {}, feasible = {}",
            real(fp.lambda_star),
            real(s.n),
            fp.feasible
        ),
    ))
}

fn cmd_stability(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let report = analyze(&cfg.model, Some(cfg.n_steps)).map_err(stability_failure)?;
    let mut t = Table::new(&["index", "re", "im", "modulus", "transverse"]);
    for (k, e) in report.eigenvalues.iter().enumerate() {
        t.push(vec![
            k.to_string(),
            real(e.re),
            real(e.im),
            real(e.norm()),
            "false".into(),
        ]);
    }
    for (k, e) in report.transverse.iter().enumerate() {
        t.push(vec![
            k.to_string(),
            real(e.re),
            real(e.im),
            real(e.norm()),
            "true".into(),
        ]);
    }
    let mut out = Outcome::ok(
        t.to_csv(),
        format!(
            "stability: regime {}, spectral radius {}, lyapunov {}",
            report.regime,
            real(report.spectral_radius),
            opt_real(report.lyapunov)
        ),
    );
    out.status = format!("completed ({})", report.regime);
    if report.regime == Regime::GloballyUnstable {
        out.code = EXIT_DIVERGED;
    }
    Ok(out)
}

fn cmd_critical_alpha(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let cp = critical_alpha(&cfg.model, cfg.model.policy.b).map_err(stability_failure)?;
    let mut t = Table::new(&["b", "alpha_c", "lambda_c", "r_c"]);
    t.push(vec![
        real(cfg.model.policy.b),
        real(cp.alpha_c),
        real(cp.lambda_c),
        real(cp.r_c),
    ]);
    Ok(Outcome::ok(
        t.to_csv(),
        format!(
            "critical-alpha: alpha_c = {}, lambda_c = {}, r_c = {}",
            real(cp.alpha_c),
            real(cp.lambda_c),
            real(cp.r_c)
        ),
    ))
}

fn cmd_lyapunov(cfg: &RunConfig) -> Outcome {
    let (regime, start) = classify_with_start(&cfg.model);
    let spec = LyapunovSpec {
        garch: cfg.garch,
        seed: cfg.seed,
        n_steps: cfg.n_steps,
        burn_in: cfg.burn_in,
    };
    let tangent = lyapunov_leading(&cfg.model, &start, &spec);
    let clone = lyapunov_clone(&cfg.model, &start, &spec);
    let mut t = Table::new(&[
        "method",
        "exponent",
        "reliable",
        "steps_counted",
        "mean_target_leverage",
    ]);
    for (name, e) in [("tangent", &tangent), ("clone", &clone)] {
        t.push(vec![
            name.into(),
            real(e.exponent),
            e.reliable.to_string(),
            e.steps_counted.to_string(),
            real(e.mean_target_leverage),
        ]);
    }
    let code = if tangent.reliable { EXIT_OK } else { EXIT_DIVERGED };
    Outcome {
        csv: t.to_csv(),
        extra: Vec::new(),
        summary: format!(
            "lyapunov: tangent {} clone {} per year (deterministic regime {regime})",
            real(tangent.exponent),
            real(clone.exponent)
        ),
        status: if tangent.reliable {
            "completed".into()
        } else {
            "diverged".into()
        },
        code,
    }
}

fn b_grid(cfg: &RunConfig) -> Vec<f64> {
    linear_grid(-0.5, 0.5, cfg.b_points)
}

fn cmd_bifurcation(cfg: &RunConfig, out: &Path) -> Outcome {
    let table = bifurcation_scan(&b_grid(cfg), &default_leverage_grid(), &cfg.model);
    let mut cells = Table::new(&["b", "lambda_star", "alpha", "regime"]);
    for c in &table.cells {
        cells.push(vec![
            real(c.b),
            real(c.lambda_star),
            real(c.alpha),
            c.regime.to_string(),
        ]);
    }
    let mut boundary = Table::new(&["b", "alpha_c", "lambda_c", "r_c", "error"]);
    let mut found = 0;
    for (b, res) in &table.boundary {
        match res {
            Ok(cp) => {
                found += 1;
                boundary.push(vec![
                    real(*b),
                    real(cp.alpha_c),
                    real(cp.lambda_c),
                    real(cp.r_c),
                    String::new(),
                ]);
            }
            Err(e) => boundary.push(vec![
                real(*b),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ]),
        }
    }
    let mut o = Outcome::ok(
        cells.to_csv(),
        format!(
            "bifurcation: {} cells, boundary found for {found} of {} b values",
            table.cells.len(),
            table.boundary.len()
        ),
    );
    o.extra.push((sibling(out, ".boundary.csv"), boundary.to_csv()));
    o
}

fn cmd_policy_sweep(cfg: &RunConfig) -> Outcome {
    let template = TargetSpec {
        lambda_hat: cfg.lambda_hat,
        r_hat: cfg.r_hat,
        b: cfg.model.policy.b,
        seeds: cfg.seeds(),
        t_len: cfg.n_steps,
        burn_in: cfg.burn_in,
    };
    let rows = policy_sweep(&b_grid(cfg), &template, &cfg.model, &cfg.garch, cfg.q);
    let mut t = Table::new(&[
        "b",
        "alpha",
        "e_bar",
        "mean_leverage",
        "mean_r",
        "rs_q",
        "rs_normalized",
        "status",
    ]);
    for r in &rows {
        t.push(vec![
            real(r.b),
            opt_real(r.alpha),
            opt_real(r.e_bar),
            opt_real(r.mean_leverage),
            opt_real(r.mean_r),
            opt_real(r.rs_q),
            opt_real(r.rs_normalized),
            format!("\"{}\"", r.status.to_string().replace('"', "'")),
        ]);
    }
    let ok = rows.iter().filter(|r| r.status == CellStatus::Ok).count();
    let b_star = crate::experiments::argmin_b(&rows);
    let code = if b_star.is_some() {
        EXIT_OK
    } else {
        EXIT_CALIBRATION
    };
    Outcome {
        csv: t.to_csv(),
        extra: Vec::new(),
        summary: format!(
            "policy-sweep: {ok} of {} cells calibrated, b* = {}",
            rows.len(),
            opt_real(b_star)
        ),
        status: if code == EXIT_OK {
            "completed".into()
        } else {
            "calibration failed".into()
        },
        code,
    }
}

fn cmd_theta_sweep(cfg: &RunConfig) -> Outcome {
    let rows = theta_sweep(&DEFAULT_THETA_TAU, &cfg.model);
    let mut t = Table::new(&["theta_tau", "alpha_c", "lambda_c", "r_c", "error"]);
    for r in &rows {
        match &r.critical {
            Ok(cp) => t.push(vec![
                real(r.theta_tau),
                real(cp.alpha_c),
                real(cp.lambda_c),
                real(cp.r_c),
                String::new(),
            ]),
            Err(e) => t.push(vec![
                real(r.theta_tau),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ]),
        }
    }
    let found = rows.iter().filter(|r| r.critical.is_ok()).count();
    Outcome::ok(
        t.to_csv(),
        format!("theta-sweep: critical point found for {found} of {} speeds", rows.len()),
    )
}

fn cmd_stochastic_stability(cfg: &RunConfig) -> Outcome {
    let spec = NoiseScanSpec {
        n_steps: cfg.n_steps,
        burn_in: cfg.burn_in,
        ..NoiseScanSpec::new(cfg.seeds())
    };
    // The noisy threshold is only defined for procyclical policies.
    let grid: Vec<f64> = b_grid(cfg).into_iter().filter(|&b| b < 0.0).collect();
    let rows = stochastic_stability_scan(&grid, &cfg.model, &cfg.garch, &spec);
    let mut t = Table::new(&[
        "b",
        "deterministic_lambda_c",
        "stochastic_lambda_c",
        "mean_target_leverage",
    ]);
    for r in &rows {
        t.push(vec![
            real(r.b),
            opt_real(r.deterministic.as_ref().ok().map(|c| c.lambda_c)),
            opt_real(r.stochastic_lambda_c.as_ref().ok().copied()),
            opt_real(r.mean_target_leverage),
        ]);
    }
    let found = rows.iter().filter(|r| r.stochastic_lambda_c.is_ok()).count();
    Outcome::ok(
        t.to_csv(),
        format!(
            "stochastic-stability: noisy threshold found for {found} of {} b values",
            rows.len()
        ),
    )
}

fn cmd_poincare(cfg: &RunConfig) -> Outcome {
    let traj = seeded_run(&cfg.model, &cfg.garch, cfg.seed, cfg.n_steps);
    let (status, code) = trajectory_status(&traj);
    let plane = DEFAULT_PLANE_PRICE;
    let pts = poincare_section(&traj, plane, CrossingDirection::Upward);
    let mut t = Table::new(&["t_years", "n", "sigma_sq", "price"]);
    for p in &pts {
        t.push(vec![real(p.t_years), real(p.n), real(p.sigma_sq), real(p.price)]);
    }
    Outcome {
        csv: t.to_csv(),
        extra: Vec::new(),
        summary: format!(
            "poincare: {} crossings of p = {}, occupancy {}",
            pts.len(),
            real(plane),
            real(section_occupancy(&pts, SECTION_GRID))
        ),
        status,
        code,
    }
}

fn cmd_risk(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let traj = seeded_run(&cfg.model, &cfg.garch, cfg.seed, cfg.n_steps + 1);
    if traj.is_diverged() {
        return Ok(Outcome {
            csv: trajectory_csv(&traj),
            extra: Vec::new(),
            summary: format!("risk: {}", termination_label(&traj.termination)),
            status: termination_label(&traj.termination),
            code: EXIT_DIVERGED,
        });
    }
    let returns = equity_returns(&traj)
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?
        .skip(cfg.burn_in);
    let score = realized_shortfall(&returns, cfg.q)
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let prices = traj.prices();
    let tail = &prices[cfg.burn_in.min(prices.len())..];
    let period = cycle_period(tail, cfg.model.tau).ok();
    let ratio = peak_to_trough(tail).ok();
    let mut t = Table::new(&["q", "t_len", "rs_q", "cycle_period_years", "peak_to_trough"]);
    t.push(vec![
        real(score.q),
        score.t_len.to_string(),
        real(score.rs_q),
        opt_real(period),
        opt_real(ratio),
    ]);
    Ok(Outcome::ok(
        t.to_csv(),
        format!(
            "risk: RS_q = {} over {} returns, period {} years",
            real(score.rs_q),
            score.t_len,
            opt_real(period)
        ),
    ))
}

fn execute(command: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    Ok(match command {
        Command::Simulate => cmd_simulate(cfg),
        Command::FixedPoint => cmd_fixed_point(cfg)?,
        Command::Stability => cmd_stability(cfg)?,
        Command::CriticalAlpha => cmd_critical_alpha(cfg)?,
        Command::Lyapunov => cmd_lyapunov(cfg),
        Command::Bifurcation => cmd_bifurcation(cfg, out),
        Command::PolicySweep => cmd_policy_sweep(cfg),
        Command::ThetaSweep => cmd_theta_sweep(cfg),
        Command::StochasticStability => cmd_stochastic_stability(cfg),
        Command::Poincare => cmd_poincare(cfg),
        Command::Risk => cmd_risk(cfg)?,
    })
}

/// Writes results under their final names on success; a run that ends in
/// divergence or failed calibration writes them with an `.incomplete` suffix.
fn publish(out: &Path, outcome: &Outcome, manifest: &RunManifest) -> Result<(), Failure> {
    let mark = |p: &Path| {
        if outcome.code == EXIT_OK {
            p.to_path_buf()
        } else {
            sibling(p, ".incomplete")
        }
    };
    let io = |e: std::io::Error| Failure::new(EXIT_FAILURE, e.to_string());
    for (path, text) in &outcome.extra {
        atomic_write(&mark(path), text).map_err(io)?;
    }
    atomic_write(&mark(out), &outcome.csv).map_err(io)?;
    atomic_write(&manifest_path(&mark(out)), &manifest.render()).map_err(io)
}

fn run(cli: &Cli) -> Result<i32, Failure> {
    let cfg = resolve_config(cli)?;
    let out = cfg
        .out
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cli.command.name())));
    let outcome = execute(cli.command, &cfg, &out)?;
    let manifest = RunManifest::new(&cfg, cli.command.name(), &outcome.status);
    publish(&out, &outcome, &manifest)?;
    println!("{}", outcome.summary);
    Ok(outcome.code)
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(Failure::new(EXIT_CONFIG, format!("--threads {n}: {e}"))),
        },
        None => run(&cli),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
