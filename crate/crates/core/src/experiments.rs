//! Experiment protocols: calibration to average leverage and size, the policy
//! sweep over cyclicality, the regime scan over (b, leverage), the
//! adjustment-speed sweep and the noisy stability scan.
//!
//! Every cell is an independent task over read-only inputs with its own
//! seeds, so tables are identical under any thread count.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{CalibrationError, RiskError, StabilityError};
use crate::model::{simulate, ModelParams, State, Trajectory};
use crate::risk::{equity_returns, realized_shortfall};
use crate::stability::{
    alpha_for_leverage, classify_regime, critical_alpha, seed_median_exponent,
    stochastic_critical_leverage, CriticalPoint, Regime,
};
use crate::stochastic::{GarchParams, GarchShocks};

pub const CALIBRATION_TOL: f64 = 0.01;
pub const MAX_CALIBRATION_ITERS: usize = 100;
const DAMPING: f64 = 0.5;
const FD_LOG_STEP: f64 = 0.05;
const MAX_BACKTRACKS: usize = 12;

/// Calibration targets for time-averaged target leverage and relative size.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub lambda_hat: f64,
    pub r_hat: f64,
    pub b: f64,
    pub seeds: Vec<u64>,
    /// Averaging window in steps.
    pub t_len: usize,
    pub burn_in: usize,
}

impl TargetSpec {
    pub fn new(lambda_hat: f64, r_hat: f64, b: f64, seeds: Vec<u64>) -> Self {
        Self {
            lambda_hat,
            r_hat,
            b,
            seeds,
            t_len: 5000,
            burn_in: 500,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        crate::error::require(self.lambda_hat > 1.0, "lambda_hat", self.lambda_hat, "lambda_hat > 1")?;
        crate::error::require(self.r_hat > 0.0, "r_hat", self.r_hat, "r_hat > 0")?;
        if self.seeds.is_empty() || self.t_len == 0 {
            return Err(CalibrationError::Infeasible(
                "need at least one seed and a positive window".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded trajectory of `burn_in + t_len` steps from the default start.
pub fn seeded_run(
    params: &ModelParams,
    garch: &GarchParams,
    seed: u64,
    n_steps: usize,
) -> Trajectory {
    simulate(
        &State::initial(params),
        params,
        &mut GarchShocks::new(*garch, seed),
        n_steps,
    )
}

/// Seed-averaged time means of target leverage and relative size, or `None`
/// if any run diverges.
pub fn simulated_averages(
    params: &ModelParams,
    garch: &GarchParams,
    spec: &TargetSpec,
) -> Option<(f64, f64)> {
    let runs: Vec<Option<(f64, f64)>> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let traj = seeded_run(params, garch, seed, spec.burn_in + spec.t_len);
            if traj.is_diverged() {
                return None;
            }
            let lev = traj.mean_target_leverage(spec.burn_in);
            let r = traj.mean_relative_size(spec.burn_in);
            (lev.is_finite() && r.is_finite() && r > 0.0).then_some((lev, r))
        })
        .collect();
    let k = runs.len() as f64;
    runs.into_iter()
        .try_fold((0.0, 0.0), |(a, b), r| r.map(|(l, s)| (a + l, b + s)))
        .map(|(a, b)| (a / k, b / k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub e_bar: f64,
    pub lambda_sim: f64,
    pub r_sim: f64,
    pub iterations: usize,
}

/// Riskiness and equity target putting the fixed point at the targets.
pub fn fixed_point_guess(spec: &TargetSpec, params: &ModelParams) -> (f64, f64) {
    let p = params.with_b(spec.b);
    let alpha = alpha_for_leverage(&p, spec.lambda_hat);
    let e_bar = p.mu / (spec.lambda_hat * (p.w_f0 / spec.r_hat + p.w_b));
    (alpha, e_bar)
}

/// Starting point for calibration. Noise keeps perceived risk far above
/// `sigma0_sq`, so the riskiness is set from the mean perceived risk of a
/// constant-leverage pilot run rather than from the fixed point.
pub fn initial_guess(spec: &TargetSpec, params: &ModelParams, garch: &GarchParams) -> (f64, f64) {
    let (alpha_fp, e_bar) = fixed_point_guess(spec, params);
    let pilot = params.with_b(0.0).with_alpha(spec.lambda_hat).with_e_bar(e_bar);
    let seed = spec.seeds.first().copied().unwrap_or(0);
    let traj = seeded_run(&pilot, garch, seed, spec.burn_in + spec.t_len);
    if traj.is_diverged() || traj.len() <= spec.burn_in {
        return (alpha_fp, e_bar);
    }
    let tail = &traj.points[spec.burn_in..];
    let mean_sq = tail.iter().map(|p| p.state.sigma_sq).sum::<f64>() / tail.len() as f64;
    let eff = mean_sq + params.policy.sigma0_sq;
    (spec.lambda_hat * eff.powf(-spec.b), e_bar)
}

/// Finds `(alpha, e_bar)` whose simulated averages match both targets to
/// [`CALIBRATION_TOL`], by damped Broyden iteration in log coordinates with
/// common seeds for every evaluation.
pub fn match_targets(
    spec: &TargetSpec,
    params: &ModelParams,
    garch: &GarchParams,
) -> Result<Calibration, CalibrationError> {
    spec.validate()?;
    let base = params.with_b(spec.b);
    base.validate()?;
    garch.validate()?;
    let target = Vector2::new(spec.lambda_hat.ln(), spec.r_hat.ln());
    let eval = |x: &Vector2<f64>| -> Option<(Vector2<f64>, (f64, f64))> {
        let p = base.with_alpha(x[0].exp()).with_e_bar(x[1].exp());
        if p.validate().is_err() {
            return None;
        }
        let (lev, r) = simulated_averages(&p, garch, spec)?;
        (lev > 0.0).then(|| (Vector2::new(lev.ln(), r.ln()) - target, (lev, r)))
    };
    let converged = |avg: (f64, f64)| {
        (avg.0 / spec.lambda_hat - 1.0).abs() < CALIBRATION_TOL
            && (avg.1 / spec.r_hat - 1.0).abs() < CALIBRATION_TOL
    };

    let (a0, e0) = initial_guess(spec, params, garch);
    let mut x = Vector2::new(a0.ln(), e0.ln());
    let (mut f, mut avg) = eval(&x).ok_or_else(|| {
        CalibrationError::Infeasible("simulation diverges at the initial guess".into())
    })?;
    let mut jac = Matrix2::zeros();
    for j in 0..2 {
        let mut xp = x;
        xp[j] += FD_LOG_STEP;
        let (fp, _) = eval(&xp).ok_or_else(|| {
            CalibrationError::Infeasible("simulation diverges near the initial guess".into())
        })?;
        jac.set_column(j, &((fp - f) / FD_LOG_STEP));
    }

    for it in 0..MAX_CALIBRATION_ITERS {
        if converged(avg) {
            return Ok(Calibration {
                alpha: x[0].exp(),
                e_bar: x[1].exp(),
                lambda_sim: avg.0,
                r_sim: avg.1,
                iterations: it,
            });
        }
        let full = jac
            .lu()
            .solve(&(-f))
            .filter(|d| d.iter().all(|v| v.is_finite()))
            .ok_or_else(|| CalibrationError::Infeasible("singular calibration Jacobian".into()))?;
        let mut scale = DAMPING;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let dx = full * scale;
            if let Some(res) = eval(&(x + dx)) {
                accepted = Some((dx, res));
                break;
            }
            scale *= 0.5;
        }
        let (dx, (f_new, avg_new)) = accepted.ok_or_else(|| {
            CalibrationError::Infeasible(
                "every trial step diverges; no model solution with the required targets".into(),
            )
        })?;
        let df = f_new - f;
        let denom = dx.dot(&dx);
        if denom > 0.0 {
            jac += (df - jac * dx) * dx.transpose() / denom;
        }
        x += dx;
        f = f_new;
        avg = avg_new;
    }
    if converged(avg) {
        return Ok(Calibration {
            alpha: x[0].exp(),
            e_bar: x[1].exp(),
            lambda_sim: avg.0,
            r_sim: avg.1,
            iterations: MAX_CALIBRATION_ITERS,
        });
    }
    Err(CalibrationError::NoConvergence {
        iterations: MAX_CALIBRATION_ITERS,
        residual: f.amax(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    CalibrationFailed(String),
    InvalidReturns(String),
}

impl std::fmt::Display for CellStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellStatus::Ok => f.write_str("ok"),
            CellStatus::CalibrationFailed(m) => write!(f, "calibration_failed: {m}"),
            CellStatus::InvalidReturns(m) => write!(f, "invalid_returns: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub b: f64,
    pub alpha: Option<f64>,
    pub e_bar: Option<f64>,
    pub mean_leverage: Option<f64>,
    pub mean_r: Option<f64>,
    pub rs_q: Option<f64>,
    /// `rs_q` divided by the `b = -0.5` row's value.
    pub rs_normalized: Option<f64>,
    pub status: CellStatus,
}

/// Seed-averaged realized shortfall over the `t_len` returns after burn-in.
pub fn mean_shortfall(
    params: &ModelParams,
    garch: &GarchParams,
    spec: &TargetSpec,
    q: f64,
) -> Result<f64, RiskError> {
    let scores: Result<Vec<f64>, RiskError> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let traj = seeded_run(params, garch, seed, spec.burn_in + spec.t_len + 1);
            let returns = equity_returns(&traj)?;
            let window = returns.skip(spec.burn_in);
            if window.len() < spec.t_len {
                return Err(RiskError::TooShort {
                    needed: spec.t_len,
                    have: window.len(),
                });
            }
            Ok(realized_shortfall(&window.take(spec.t_len), q)?.rs_q)
        })
        .collect();
    let scores = scores?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn sweep_cell(
    b: f64,
    template: &TargetSpec,
    params: &ModelParams,
    garch: &GarchParams,
    q: f64,
) -> SweepRow {
    let spec = TargetSpec {
        b,
        ..template.clone()
    };
    let mut row = SweepRow {
        b,
        alpha: None,
        e_bar: None,
        mean_leverage: None,
        mean_r: None,
        rs_q: None,
        rs_normalized: None,
        status: CellStatus::Ok,
    };
    let cal = match match_targets(&spec, params, garch) {
        Ok(c) => c,
        Err(e) => {
            row.status = CellStatus::CalibrationFailed(e.to_string());
            return row;
        }
    };
    row.alpha = Some(cal.alpha);
    row.e_bar = Some(cal.e_bar);
    row.mean_leverage = Some(cal.lambda_sim);
    row.mean_r = Some(cal.r_sim);
    let p = params.with_b(b).with_alpha(cal.alpha).with_e_bar(cal.e_bar);
    match mean_shortfall(&p, garch, &spec, q) {
        Ok(rs) => row.rs_q = Some(rs),
        Err(e) => row.status = CellStatus::InvalidReturns(e.to_string()),
    }
    row
}

/// Calibrates and scores every `b`, then normalizes by the `b = -0.5` row.
/// Cells share the template's seeds so that policies face identical shocks.
pub fn policy_sweep(
    b_grid: &[f64],
    template: &TargetSpec,
    params: &ModelParams,
    garch: &GarchParams,
    q: f64,
) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = b_grid
        .par_iter()
        .map(|&b| sweep_cell(b, template, params, garch, q))
        .collect();
    let reference = rows
        .iter()
        .find(|r| (r.b + 0.5).abs() < 1e-9)
        .and_then(|r| r.rs_q);
    if let Some(base) = reference {
        for r in &mut rows {
            r.rs_normalized = r.rs_q.map(|v| v / base);
        }
    }
    rows
}

/// Evenly spaced grid of `points` values on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Minimizing `b` of the normalized shortfall: vertex of the parabola
/// through the lowest grid point and its two neighbours (the two nearest
/// points at an edge), kept inside those three points.
pub fn argmin_b(rows: &[SweepRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.rs_normalized.map(|v| (r.b, v)))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let k = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)?;
    if pts.len() < 3 {
        return Some(pts[k].0);
    }
    let c = k.clamp(1, pts.len() - 2);
    let (x0, y0) = pts[c - 1];
    let (x1, y1) = pts[c];
    let (x2, y2) = pts[c + 1];
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if !(curv > 0.0) {
        return Some(pts[k].0);
    }
    // y = y0 + d01 (x - x0) + curv (x - x0)(x - x1)
    let vertex = 0.5 * (x0 + x1) - d01 / (2.0 * curv);
    Some(vertex.clamp(x0, x2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeCell {
    pub b: f64,
    pub alpha: f64,
    pub lambda_star: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationTable {
    pub cells: Vec<RegimeCell>,
    /// Critical point per cyclicality, in `b_grid` order.
    pub boundary: Vec<(f64, Result<CriticalPoint, StabilityError>)>,
}

/// Regime for every (b, fixed-point leverage) cell, plus the linear
/// stability boundary per `b`. Cells are indexed by leverage so that a row
/// covers the same leverages whatever the cyclicality.
pub fn bifurcation_scan(
    b_grid: &[f64],
    leverage_grid: &[f64],
    params: &ModelParams,
) -> BifurcationTable {
    let jobs: Vec<(f64, f64)> = b_grid
        .iter()
        .flat_map(|&b| leverage_grid.iter().map(move |&l| (b, l)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(b, lambda)| {
            let p = params.with_b(b);
            let alpha = alpha_for_leverage(&p, lambda);
            RegimeCell {
                b,
                alpha,
                lambda_star: lambda,
                regime: classify_regime(&p.with_alpha(alpha)),
            }
        })
        .collect();
    let boundary = b_grid
        .par_iter()
        .map(|&b| (b, critical_alpha(params, b)))
        .collect();
    BifurcationTable { cells, boundary }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaRow {
    pub theta_tau: f64,
    pub critical: Result<CriticalPoint, StabilityError>,
}

/// Critical leverage and size for each balance-sheet adjustment speed
/// `theta * tau`, at the parameters' own cyclicality.
pub fn theta_sweep(theta_tau_grid: &[f64], params: &ModelParams) -> Vec<ThetaRow> {
    theta_tau_grid
        .par_iter()
        .map(|&tt| ThetaRow {
            theta_tau: tt,
            critical: critical_alpha(&params.with_theta_tau(tt), params.policy.b),
        })
        .collect()
}

/// Run-length settings of the noisy Lyapunov searches.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseScanSpec {
    pub seeds: Vec<u64>,
    pub n_steps: usize,
    pub burn_in: usize,
    /// Relative bisection tolerance on riskiness.
    pub tol: f64,
}

impl NoiseScanSpec {
    pub fn new(seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            n_steps: 10_000,
            burn_in: 1_000,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStabilityRow {
    pub b: f64,
    pub deterministic: Result<CriticalPoint, StabilityError>,
    /// Time-averaged target leverage where the seed-median exponent turns
    /// positive.
    pub stochastic_lambda_c: Result<f64, StabilityError>,
    /// Time-averaged target leverage under noise at the deterministic
    /// critical riskiness.
    pub mean_target_leverage: Option<f64>,
}

pub fn stochastic_stability_scan(
    b_grid: &[f64],
    params: &ModelParams,
    garch: &GarchParams,
    spec: &NoiseScanSpec,
) -> Vec<NoiseStabilityRow> {
    b_grid
        .par_iter()
        .map(|&b| {
            let deterministic = critical_alpha(params, b);
            let stochastic = stochastic_critical_leverage(
                params,
                b,
                garch,
                &spec.seeds,
                spec.n_steps,
                spec.burn_in,
                spec.tol,
            )
            .map(|t| t.critical_leverage);
            let mean_target_leverage = deterministic.as_ref().ok().and_then(|c| {
                let (_, lev) = seed_median_exponent(
                    &params.with_b(b),
                    c.alpha_c,
                    garch,
                    &spec.seeds,
                    spec.n_steps,
                    spec.burn_in,
                );
                lev.is_finite().then_some(lev)
            });
            NoiseStabilityRow {
                b,
                deterministic,
                stochastic_lambda_c: stochastic,
                mean_target_leverage,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(b: f64, v: f64) -> SweepRow {
        SweepRow {
            b,
            alpha: None,
            e_bar: None,
            mean_leverage: None,
            mean_r: None,
            rs_q: Some(v),
            rs_normalized: Some(v),
            status: CellStatus::Ok,
        }
    }

    #[test]
    fn argmin_recovers_parabola_vertex() {
        let rows: Vec<SweepRow> = linear_grid(-0.5, 0.5, 21)
            .into_iter()
            .map(|b| row(b, 1.0 + 3.0 * (b + 0.13) * (b + 0.13)))
            .collect();
        assert!((argmin_b(&rows).unwrap() + 0.13).abs() < 1e-12);
    }

    #[test]
    fn argmin_at_edge_stays_on_grid_span() {
        let rows: Vec<SweepRow> = linear_grid(-0.5, 0.5, 11)
            .into_iter()
            .map(|b| row(b, 1.0 + b))
            .collect();
        assert_eq!(argmin_b(&rows), Some(-0.5));
    }

    #[test]
    fn grid_endpoints() {
        let g = linear_grid(-0.5, 0.5, 21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -0.5);
        assert_eq!(g[20], 0.5);
        assert!((g[10]).abs() < 1e-15);
    }

    #[test]
    fn initial_guess_reproduces_fixed_point_targets() {
        let spec = TargetSpec::new(5.8, 0.27, -0.5, vec![1]);
        let params = ModelParams::default();
        let (alpha, e_bar) = fixed_point_guess(&spec, &params);
        let p = params.with_alpha(alpha).with_e_bar(e_bar);
        assert!((p.policy.fixed_point_leverage() - 5.8).abs() < 1e-9);
        assert!((p.fixed_point_relative_size() - 0.27).abs() < 1e-9);
    }
}
