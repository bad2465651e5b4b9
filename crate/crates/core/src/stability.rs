//! Fixed point, linear stability and Lyapunov exponents of the map.
//!
//! At the fixed point the price sits at the fundamental value, where the
//! fund's weight update vanishes for every `w_f`. The map therefore has a line
//! of fixed points along `w_f` and its Jacobian carries an exact unit
//! eigenvalue with eigenvector `e_{w_f}`. Stability is decided by the
//! remaining five eigenvalues (the minor with the `w_f` row and column
//! removed); the Lyapunov estimators likewise measure growth transverse to
//! the `w_f` direction.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::eigen::{self, C64};
use crate::error::StabilityError;
use crate::model::{derived_quantities, step, ModelParams, State};
use crate::stochastic::{GarchParams, GarchShocks, ShockSource};

/// Relative finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-7;
/// Relative price displacement used to probe the fixed point.
pub const PROBE_KICK: f64 = 1e-6;
/// Riskiness range of the critical-point scan for `b = -0.5`. Other
/// cyclicalities scan the range covering the same fixed-point leverages.
pub const ALPHA_SCAN: (f64, f64) = (1e-4, 10.0);
pub const SCAN_RATIO: f64 = 1.25;
pub const BISECTION_TOL: f64 = 1e-4;
/// Separation of the clone trajectory, relative to the norm of the initial
/// state.
pub const CLONE_SEPARATION: f64 = 1e-8;

const CONVERGENCE_YEARS: f64 = 100.0;
const BOUNDED_YEARS: f64 = 500.0;
/// Prices beyond this multiple of `mu` count as unbounded.
const PRICE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub state: State,
    pub lambda_star: f64,
    pub r_star: f64,
    /// `n*` in `(0, 1)` and positive equity.
    pub feasible: bool,
}

pub fn fixed_point(params: &ModelParams) -> Result<FixedPoint, StabilityError> {
    if params.policy.sigma0_sq == 0.0 && params.policy.b < 0.0 {
        return Err(StabilityError::DegenerateFixedPoint);
    }
    params.validate()?;
    let state = State::at_targets(params, 0.0);
    let lambda_star = params.policy.fixed_point_leverage();
    let equity = state.p * state.n / params.w_b - state.l_b;
    Ok(FixedPoint {
        state,
        lambda_star,
        r_star: params.fixed_point_relative_size(),
        feasible: state.n > 0.0 && state.n < 1.0 && equity > 0.0,
    })
}

/// The fixed point with its price displaced by `kick` (relative).
pub fn perturbed_fixed_point(params: &ModelParams, kick: f64) -> State {
    let mut s = State::at_targets(params, 0.0);
    s.p *= 1.0 + kick;
    s
}

/// Central-difference Jacobian of `g` at `x` with per-coordinate step
/// `max(h, h|x_j|)`. Where the backward point is outside the domain of `g`
/// (signalled by `None`) a forward difference is used instead.
pub fn fd_jacobian<G>(g: G, x: &[f64; 6], h: f64) -> Result<DMatrix<f64>, StabilityError>
where
    G: Fn(&[f64; 6]) -> Option<[f64; 6]>,
{
    let mut jac = DMatrix::zeros(6, 6);
    let mut base: Option<Option<[f64; 6]>> = None;
    for j in 0..6 {
        let hj = h.max(h * x[j].abs());
        let mut xp = *x;
        xp[j] += hj;
        let mut xm = *x;
        xm[j] -= hj;
        let plus = g(&xp).ok_or(StabilityError::NonFiniteJacobian)?;
        let (minus, width) = match g(&xm) {
            Some(m) => (m, 2.0 * hj),
            None => {
                let at = *base.get_or_insert_with(|| g(x));
                (at.ok_or(StabilityError::NonFiniteJacobian)?, hj)
            }
        };
        for i in 0..6 {
            jac[(i, j)] = (plus[i] - minus[i]) / width;
        }
    }
    if jac.iter().all(|v| v.is_finite()) {
        Ok(jac)
    } else {
        Err(StabilityError::NonFiniteJacobian)
    }
}

fn map_with_shock(params: &ModelParams, chi: f64) -> impl Fn(&[f64; 6]) -> Option<[f64; 6]> + '_ {
    move |x| {
        let (y, status) = step(&State::from_array(*x), params, chi);
        (!status.is_diverged()).then(|| y.to_array())
    }
}

/// Jacobian of the deterministic map at `x`.
pub fn jacobian(params: &ModelParams, x: &State, h: f64) -> Result<DMatrix<f64>, StabilityError> {
    jacobian_with_shock(params, x, 0.0, h)
}

/// Jacobian of the map at `x` with this step's shock held fixed.
pub fn jacobian_with_shock(
    params: &ModelParams,
    x: &State,
    chi: f64,
    h: f64,
) -> Result<DMatrix<f64>, StabilityError> {
    fd_jacobian(map_with_shock(params, chi), &x.to_array(), h)
}

/// The 5x5 minor without the fund-weight row and column.
pub fn reduced_jacobian(jac: &DMatrix<f64>) -> DMatrix<f64> {
    jac.clone().remove_row(State::W_F).remove_column(State::W_F)
}

/// Largest modulus among the eigenvalues transverse to the neutral direction.
pub fn spectral_radius_at_fixed_point(params: &ModelParams) -> Result<f64, StabilityError> {
    let fp = fixed_point(params)?;
    let jac = jacobian(params, &fp.state, DEFAULT_FD_STEP)?;
    Ok(eigen::spectral_radius(&reduced_jacobian(&jac))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Stable,
    Cycles,
    GloballyUnstable,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Stable => "stable",
            Regime::Cycles => "cycles",
            Regime::GloballyUnstable => "globally_unstable",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub fixed_point: FixedPoint,
    /// All six eigenvalues of the Jacobian at the fixed point, by descending
    /// modulus. One of them is the neutral unit eigenvalue.
    pub eigenvalues: Vec<C64>,
    /// The five eigenvalues transverse to the neutral direction.
    pub transverse: Vec<C64>,
    /// Max modulus over `transverse`.
    pub spectral_radius: f64,
    /// Per-year leading exponent from the probe start, when requested.
    pub lyapunov: Option<f64>,
    pub regime: Regime,
}

/// Linear analysis at the fixed point plus regime classification, and
/// optionally a deterministic Lyapunov run of `lyapunov_steps` steps.
pub fn analyze(
    params: &ModelParams,
    lyapunov_steps: Option<usize>,
) -> Result<StabilityReport, StabilityError> {
    let fp = fixed_point(params)?;
    let jac = jacobian(params, &fp.state, DEFAULT_FD_STEP)?;
    let eigenvalues = eigen::eigenvalues(&jac)?;
    let transverse = eigen::eigenvalues(&reduced_jacobian(&jac))?;
    let spectral_radius = transverse.iter().map(|e| e.norm()).fold(0.0, f64::max);
    let (regime, start) = classify_with_radius(params, spectral_radius);
    let lyapunov = lyapunov_steps.map(|n| {
        let spec = LyapunovSpec {
            garch: GarchParams::zero(),
            seed: 0,
            n_steps: n,
            burn_in: n / 10,
        };
        lyapunov_leading(params, &start, &spec).exponent
    });
    Ok(StabilityReport {
        fixed_point: fp,
        eigenvalues,
        transverse,
        spectral_radius,
        lyapunov,
        regime,
    })
}

/// Three-way regime of the deterministic system.
///
/// Stable when the fixed point is linearly stable and a run from the probe
/// start approaches it. Otherwise Cycles when some probe start stays bounded
/// for 500 years, GloballyUnstable when every probe diverges.
pub fn classify_regime(params: &ModelParams) -> Regime {
    let radius = spectral_radius_at_fixed_point(params).unwrap_or(f64::INFINITY);
    classify_with_radius(params, radius).0
}

/// The regime plus a start on the relevant attractor: the bounded probe for
/// Cycles, the fixed-point probe otherwise.
pub fn classify_with_start(params: &ModelParams) -> (Regime, State) {
    let radius = spectral_radius_at_fixed_point(params).unwrap_or(f64::INFINITY);
    classify_with_radius(params, radius)
}

/// The regime plus the start it was decided from: the bounded probe for
/// Cycles, the fixed-point probe otherwise.
fn classify_with_radius(params: &ModelParams, radius: f64) -> (Regime, State) {
    let fp = State::at_targets(params, 0.0);
    let probe = perturbed_fixed_point(params, PROBE_KICK);
    if radius < 1.0 && converges(params, &probe, &fp) {
        return (Regime::Stable, probe);
    }
    let probes = [
        probe,
        perturbed_fixed_point(params, 1e-3),
        State::initial(params),
    ];
    let steps = (BOUNDED_YEARS / params.tau).round() as usize;
    match probes.iter().find(|s| stays_bounded(params, s, steps)) {
        Some(s) => (Regime::Cycles, *s),
        None => (Regime::GloballyUnstable, probe),
    }
}

/// Distance to the fixed point, ignoring the neutral fund weight.
fn transverse_distance(x: &State, fp: &State) -> f64 {
    let a = x.to_array();
    let b = fp.to_array();
    (0..6)
        .filter(|&i| i != State::W_F)
        .map(|i| (a[i] - b[i]).abs() / b[i].abs().max(1.0))
        .fold(0.0, f64::max)
}

fn converges(params: &ModelParams, start: &State, fp: &State) -> bool {
    let steps = (CONVERGENCE_YEARS / params.tau).round() as usize;
    let traj = crate::model::simulate(start, params, &mut crate::stochastic::NoShocks, steps);
    if traj.is_diverged() {
        return false;
    }
    let d0 = transverse_distance(start, fp);
    let d1 = transverse_distance(&traj.last_state(), fp);
    d1 < 0.5 * d0
}

fn stays_bounded(params: &ModelParams, start: &State, steps: usize) -> bool {
    let mut x = *start;
    let bound = PRICE_BOUND * params.mu;
    for _ in 0..steps {
        let (y, status) = step(&x, params, 0.0);
        if status.is_diverged() || y.p > bound {
            return false;
        }
        x = y;
    }
    true
}

/// Critical point of the deterministic system for a given cyclicality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub alpha_c: f64,
    /// Fixed-point leverage at `alpha_c`.
    pub lambda_c: f64,
    /// Relative size of the fixed point at `alpha_c`.
    pub r_c: f64,
}

/// Converts a fixed-point leverage to the riskiness producing it.
pub fn alpha_for_leverage(params: &ModelParams, lambda: f64) -> f64 {
    let pol = params.policy;
    lambda * pol.sigma0_sq.powf(-pol.b)
}

/// Geometric grid of riskiness values spanning fixed-point leverages
/// `ALPHA_SCAN / sigma0` whatever the cyclicality.
pub fn alpha_scan_grid(params: &ModelParams) -> Vec<f64> {
    let (lo, hi) = ALPHA_SCAN;
    let scale = params.policy.sigma0_sq.powf(-0.5 - params.policy.b);
    let mut out = Vec::new();
    let mut alpha = lo;
    while alpha <= hi * (1.0 + 1e-12) {
        out.push(alpha * scale);
        alpha *= SCAN_RATIO;
    }
    out
}

/// Riskiness at which the transverse spectral radius crosses 1: geometric
/// scan for a bracket, then bisection.
pub fn critical_alpha(params: &ModelParams, b: f64) -> Result<CriticalPoint, StabilityError> {
    let params = params.with_b(b);
    params.validate()?;
    let radius = |alpha: f64| spectral_radius_at_fixed_point(&params.with_alpha(alpha));
    let grid = alpha_scan_grid(&params);
    let mut bracket = None;
    let mut prev: Option<f64> = None;
    for &alpha in &grid {
        let r = radius(alpha).unwrap_or(f64::INFINITY);
        if r >= 1.0 {
            if let Some(lo) = prev {
                bracket = Some((lo, alpha));
            }
            break;
        }
        prev = Some(alpha);
    }
    let (mut lo, mut hi) = bracket.ok_or(StabilityError::NoBracket {
        lo: grid[0],
        hi: *grid.last().unwrap_or(&grid[0]),
    })?;
    while (hi - lo) / lo > BISECTION_TOL {
        let mid = (lo * hi).sqrt();
        if radius(mid).unwrap_or(f64::INFINITY) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha_c = 0.5 * (lo + hi);
    let at = params.with_alpha(alpha_c);
    Ok(CriticalPoint {
        alpha_c,
        lambda_c: at.policy.fixed_point_leverage(),
        r_c: at.fixed_point_relative_size(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSpec {
    pub garch: GarchParams,
    pub seed: u64,
    pub n_steps: usize,
    pub burn_in: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovEstimate {
    /// Per-year rate; NaN if no step was counted.
    pub exponent: f64,
    /// False when the trajectory diverged before `n_steps`.
    pub reliable: bool,
    pub steps_counted: usize,
    /// Time mean of the target leverage over the counted steps.
    pub mean_target_leverage: f64,
}

struct Accumulator {
    log_growth: f64,
    lambda_bar: f64,
    counted: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            log_growth: 0.0,
            lambda_bar: 0.0,
            counted: 0,
        }
    }

    fn finish(self, tau: f64, reliable: bool) -> LyapunovEstimate {
        let k = self.counted as f64;
        LyapunovEstimate {
            exponent: if self.counted == 0 {
                f64::NAN
            } else {
                self.log_growth / (k * tau)
            },
            reliable,
            steps_counted: self.counted,
            mean_target_leverage: self.lambda_bar / k,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Tangent-space estimate of the leading exponent along a (possibly noisy)
/// trajectory. Each step multiplies the tangent by the Jacobian at the
/// realized state with the realized shock, removes its fund-weight
/// component and renormalizes.
pub fn lyapunov_leading(
    params: &ModelParams,
    initial: &State,
    spec: &LyapunovSpec,
) -> LyapunovEstimate {
    let mut shocks = GarchShocks::new(spec.garch, spec.seed);
    let mut x = *initial;
    let mut v = [1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let nv = norm(&v);
    v.iter_mut().for_each(|c| *c /= nv);
    let mut acc = Accumulator::new();
    for k in 0..spec.n_steps {
        let chi = shocks.next_shock();
        let jac = match jacobian_with_shock(params, &x, chi, DEFAULT_FD_STEP) {
            Ok(j) => j,
            Err(_) => return acc.finish(params.tau, false),
        };
        let (y, status) = step(&x, params, chi);
        if status.is_diverged() {
            return acc.finish(params.tau, false);
        }
        let mut w = [0.0; 6];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = (0..6).map(|j| jac[(i, j)] * v[j]).sum();
        }
        w[State::W_F] = 0.0;
        let growth = norm(&w);
        if !(growth > 0.0 && growth.is_finite()) {
            return acc.finish(params.tau, false);
        }
        for i in 0..6 {
            v[i] = w[i] / growth;
        }
        if k >= spec.burn_in {
            acc.log_growth += growth.ln();
            acc.lambda_bar += derived_quantities(&y, params).lambda_bar;
            acc.counted += 1;
        }
        x = y;
    }
    acc.finish(params.tau, true)
}

/// Two-trajectory estimate: a clone displaced by [`CLONE_SEPARATION`]
/// consumes the same shocks as the base run and is pulled back to that
/// separation every step. The clone's fund weight is reset to the base's.
///
/// On chaotic attractors of this map the estimate drifts upward as the
/// separation shrinks, so it agrees with [`lyapunov_leading`] only when the
/// separation is comparable to the finite-difference step.
pub fn lyapunov_clone(
    params: &ModelParams,
    initial: &State,
    spec: &LyapunovSpec,
) -> LyapunovEstimate {
    let mut shocks = GarchShocks::new(spec.garch, spec.seed);
    let d0 = CLONE_SEPARATION * norm(&initial.to_array());
    let mut x = *initial;
    let mut c = *initial;
    c.p += d0;
    let mut acc = Accumulator::new();
    for k in 0..spec.n_steps {
        let chi = shocks.next_shock();
        let (y, s1) = step(&x, params, chi);
        let (z, s2) = step(&c, params, chi);
        if s1.is_diverged() || s2.is_diverged() {
            return acc.finish(params.tau, false);
        }
        let ya = y.to_array();
        let mut za = z.to_array();
        za[State::W_F] = ya[State::W_F];
        let diff: Vec<f64> = (0..6).map(|i| za[i] - ya[i]).collect();
        let d = norm(&diff);
        if !(d > 0.0 && d.is_finite()) {
            return acc.finish(params.tau, false);
        }
        let mut next = ya;
        for i in 0..6 {
            next[i] += diff[i] * d0 / d;
        }
        if k >= spec.burn_in {
            acc.log_growth += (d / d0).ln();
            acc.lambda_bar += derived_quantities(&y, params).lambda_bar;
            acc.counted += 1;
        }
        x = y;
        c = State::from_array(next);
    }
    acc.finish(params.tau, true)
}

/// Result of the noisy stability threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticThreshold {
    pub alpha: f64,
    /// Seed-averaged time mean of the target leverage at the crossing.
    pub critical_leverage: f64,
}

/// Median over seeds of the tangent exponent at riskiness `alpha`, with
/// diverged runs counted as `+inf`, and the mean target leverage over the
/// runs that completed.
pub fn seed_median_exponent(
    params: &ModelParams,
    alpha: f64,
    garch: &GarchParams,
    seeds: &[u64],
    n_steps: usize,
    burn_in: usize,
) -> (f64, f64) {
    let p = params.with_alpha(alpha);
    let start = perturbed_fixed_point(&p, PROBE_KICK);
    let runs: Vec<LyapunovEstimate> = seeds
        .par_iter()
        .map(|&seed| {
            let spec = LyapunovSpec {
                garch: *garch,
                seed,
                n_steps,
                burn_in,
            };
            lyapunov_leading(&p, &start, &spec)
        })
        .collect();
    let mut exps: Vec<f64> = runs
        .iter()
        .map(|r| {
            if r.reliable && r.exponent.is_finite() {
                r.exponent
            } else {
                f64::INFINITY
            }
        })
        .collect();
    exps.sort_by(f64::total_cmp);
    let m = exps.len();
    let median = if m % 2 == 1 {
        exps[m / 2]
    } else {
        0.5 * (exps[m / 2 - 1] + exps[m / 2])
    };
    let done: Vec<f64> = runs
        .iter()
        .filter(|r| r.reliable)
        .map(|r| r.mean_target_leverage)
        .collect();
    let mean_lev = if done.is_empty() {
        f64::NAN
    } else {
        done.iter().sum::<f64>() / done.len() as f64
    };
    (median, mean_lev)
}

/// Noisy stability threshold: scans riskiness upward for the first positive
/// seed-median exponent, bisects the crossing to relative `tol`, and returns
/// the time-averaged target leverage on the stable side of the crossing.
pub fn stochastic_critical_leverage(
    params: &ModelParams,
    b: f64,
    garch: &GarchParams,
    seeds: &[u64],
    n_steps: usize,
    burn_in: usize,
    tol: f64,
) -> Result<StochasticThreshold, StabilityError> {
    let params = params.with_b(b);
    params.validate()?;
    let eval = |alpha: f64| seed_median_exponent(&params, alpha, garch, seeds, n_steps, burn_in);
    let grid = alpha_scan_grid(&params);
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for &alpha in &grid {
        let (exp, lev) = eval(alpha);
        if exp > 0.0 {
            if let Some(lo) = prev {
                bracket = Some((lo, (alpha, lev)));
            }
            break;
        }
        prev = Some((alpha, lev));
    }
    let ((mut lo, mut lev_lo), (mut hi, _)) = bracket.ok_or(StabilityError::NoSignChange {
        lo: grid[0],
        hi: *grid.last().unwrap_or(&grid[0]),
    })?;
    while (hi - lo) / lo > tol {
        let mid = (lo * hi).sqrt();
        let (exp, lev) = eval(mid);
        if exp > 0.0 {
            hi = mid;
        } else {
            lo = mid;
            lev_lo = lev;
        }
    }
    Ok(StochasticThreshold {
        alpha: (lo * hi).sqrt(),
        critical_leverage: lev_lo,
    })
}
