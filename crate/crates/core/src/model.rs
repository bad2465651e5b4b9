//! Bank and fund balance sheets, the leverage-control policy family, and the
//! six-dimensional map that advances the market by one time step.
//!
//! The state vector is `(sigma_sq, w_f, p, n, l_b, p_lag)`: the bank's perceived
//! variance, the fund's risky weight, the price, the bank's share of the risky
//! asset, the bank's liabilities and the previous price. All balance-sheet
//! adjustments inside a step are decided from the pre-step state, before the
//! new clearing price is known.

use crate::error::{require, ParamError};
use crate::stochastic::ShockSource;

/// Clearing denominators at or below this value are treated as a blow-up.
pub const DIVERGENCE_EPS: f64 = 1e-12;
/// Lower clamp for the fund's risky weight.
pub const W_F_MIN: f64 = 1e-6;
/// Upper clamp for the fund's risky weight.
pub const W_F_MAX: f64 = 1.0 - 1e-6;
/// Relative price displacement of the default starting state.
pub const DEFAULT_PRICE_KICK: f64 = 1e-3;
/// Perceived variance of the default starting state.
pub const DEFAULT_INITIAL_VARIANCE: f64 = 1e-4;

/// Sign of `dF/dsigma^2` for a leverage policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cyclicality {
    Procyclical,
    Constant,
    Countercyclical,
}

/// The policy family `F(sigma^2) = alpha * (sigma^2 + sigma0_sq)^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    /// Bank riskiness.
    pub alpha: f64,
    /// Risk offset; caps target leverage for `b < 0`.
    pub sigma0_sq: f64,
    /// Cyclicality exponent in `[-0.5, 0.5]`.
    pub b: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            alpha: 0.075,
            sigma0_sq: 1e-6,
            b: -0.5,
        }
    }
}

impl PolicyParams {
    pub fn new(alpha: f64, sigma0_sq: f64, b: f64) -> Result<Self, ParamError> {
        let p = Self {
            alpha,
            sigma0_sq,
            b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        require(self.alpha > 0.0, "alpha", self.alpha, "alpha > 0")?;
        require(
            self.sigma0_sq > 0.0,
            "sigma0_sq",
            self.sigma0_sq,
            "sigma0_sq > 0",
        )?;
        require(
            (-0.5..=0.5).contains(&self.b),
            "b",
            self.b,
            "-0.5 <= b <= 0.5",
        )
    }

    /// Target leverage for a perceived variance.
    pub fn target_leverage(&self, sigma_sq: f64) -> f64 {
        self.alpha * (sigma_sq + self.sigma0_sq).powf(self.b)
    }

    /// Derivative of the target leverage with respect to perceived variance.
    pub fn policy_sensitivity(&self, sigma_sq: f64) -> f64 {
        if self.b == 0.0 {
            return 0.0;
        }
        self.alpha * self.b * (sigma_sq + self.sigma0_sq).powf(self.b - 1.0)
    }

    /// Target leverage at zero perceived risk, i.e. the fixed-point leverage.
    pub fn fixed_point_leverage(&self) -> f64 {
        self.target_leverage(0.0)
    }

    pub fn cyclicality(&self) -> Cyclicality {
        if self.b < 0.0 {
            Cyclicality::Procyclical
        } else if self.b > 0.0 {
            Cyclicality::Countercyclical
        } else {
            Cyclicality::Constant
        }
    }
}

/// All model constants. Rates are per year, `tau` is years per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub tau: f64,
    /// Memory of the volatility estimate.
    pub delta: f64,
    /// Horizon the one-step return is rescaled to.
    pub t_var: f64,
    pub policy: PolicyParams,
    /// Bank equity target.
    pub e_bar: f64,
    /// Bank's fixed risky weight.
    pub w_b: f64,
    /// Balance-sheet adjustment speed (levering up, and down unless `theta_minus` is set).
    pub theta: f64,
    /// Optional deleveraging speed.
    pub theta_minus: Option<f64>,
    /// Equity redistribution speed.
    pub eta: f64,
    /// Fundamental value.
    pub mu: f64,
    /// Fund mean-reversion rate.
    pub rho: f64,
    /// Fund's initial (and fixed-point) risky weight.
    pub w_f0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            tau: 0.1,
            delta: 0.5,
            t_var: 0.1,
            policy: PolicyParams::default(),
            e_bar: 2.27,
            w_b: 0.3,
            theta: 9.5,
            theta_minus: None,
            eta: 10.0,
            mu: 25.0,
            rho: 0.1,
            w_f0: 0.5,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        require(self.tau > 0.0, "tau", self.tau, "tau > 0")?;
        let td = self.tau * self.delta;
        require(td > 0.0 && td < 1.0, "delta", self.delta, "0 < tau*delta < 1")?;
        let tr = self.tau * self.rho;
        require(tr > 0.0 && tr < 1.0, "rho", self.rho, "0 < tau*rho < 1")?;
        require(self.t_var >= 0.0, "t_var", self.t_var, "t_var >= 0")?;
        require(self.theta >= 0.0, "theta", self.theta, "theta >= 0")?;
        if let Some(tm) = self.theta_minus {
            require(tm >= 0.0, "theta_minus", tm, "theta_minus >= 0")?;
        }
        require(self.eta >= 0.0, "eta", self.eta, "eta >= 0")?;
        require(self.mu > 0.0, "mu", self.mu, "mu > 0")?;
        require(self.e_bar >= 0.0, "e_bar", self.e_bar, "e_bar >= 0")?;
        require(
            self.w_b > 0.0 && self.w_b <= 1.0,
            "w_b",
            self.w_b,
            "0 < w_b <= 1",
        )?;
        require(
            self.w_f0 > 0.0 && self.w_f0 < 1.0,
            "w_f0",
            self.w_f0,
            "0 < w_f0 < 1",
        )?;
        self.policy.validate()
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.policy.alpha = alpha;
        self
    }

    pub fn with_b(mut self, b: f64) -> Self {
        self.policy.b = b;
        self
    }

    pub fn with_e_bar(mut self, e_bar: f64) -> Self {
        self.e_bar = e_bar;
        self
    }

    pub fn with_theta_tau(mut self, theta_tau: f64) -> Self {
        self.theta = theta_tau / self.tau;
        self
    }

    /// Speed used when the balance sheet shrinks.
    pub fn deleveraging_speed(&self) -> f64 {
        self.theta_minus.unwrap_or(self.theta)
    }

    /// Bank-to-fund size ratio `A_B/A_F` of the fixed point, in closed form.
    pub fn fixed_point_relative_size(&self) -> f64 {
        let lambda = self.policy.fixed_point_leverage();
        1.0 / (self.mu / (self.e_bar * lambda * self.w_f0) - self.w_b / self.w_f0)
    }
}

/// Point in the six-dimensional state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub sigma_sq: f64,
    pub w_f: f64,
    pub p: f64,
    pub n: f64,
    pub l_b: f64,
    pub p_lag: f64,
}

impl State {
    pub const DIM: usize = 6;
    pub const SIGMA_SQ: usize = 0;
    pub const W_F: usize = 1;
    pub const P: usize = 2;
    pub const N: usize = 3;
    pub const L_B: usize = 4;
    pub const P_LAG: usize = 5;

    pub fn to_array(&self) -> [f64; 6] {
        [self.sigma_sq, self.w_f, self.p, self.n, self.l_b, self.p_lag]
    }

    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            sigma_sq: x[0],
            w_f: x[1],
            p: x[2],
            n: x[3],
            l_b: x[4],
            p_lag: x[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_live(&self) -> bool {
        self.is_finite() && self.p > 0.0 && self.p_lag > 0.0
    }

    /// Price at the fundamental value with the bank at its equity target and at
    /// the target leverage implied by `sigma_sq`. With `sigma_sq = 0` this is
    /// the fixed point.
    pub fn at_targets(params: &ModelParams, sigma_sq: f64) -> Self {
        let lambda = params.policy.target_leverage(sigma_sq);
        Self {
            sigma_sq,
            w_f: params.w_f0,
            p: params.mu,
            n: lambda * params.e_bar * params.w_b / params.mu,
            l_b: (lambda - 1.0) * params.e_bar,
            p_lag: params.mu,
        }
    }

    /// Default starting state: bank on target for a moderate perceived
    /// variance, price displaced by [`DEFAULT_PRICE_KICK`].
    pub fn initial(params: &ModelParams) -> Self {
        let sigma_sq = params.policy.sigma0_sq.max(DEFAULT_INITIAL_VARIANCE);
        let mut s = Self::at_targets(params, sigma_sq);
        s.p *= 1.0 + DEFAULT_PRICE_KICK;
        s
    }

    /// Max-norm distance relative to the max-norm of `other`.
    pub fn relative_distance(&self, other: &State) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        let diff = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        diff / scale
    }
}

/// Balance-sheet quantities implied by a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derived {
    pub a_b: f64,
    pub e_b: f64,
    /// Realized leverage; NaN when the bank is insolvent.
    pub lambda: f64,
    pub lambda_bar: f64,
    pub delta_b: f64,
    pub kappa_b: f64,
    pub kappa_f: f64,
    pub c_b: f64,
    pub c_f: f64,
    pub a_f: f64,
    pub r_size: f64,
    pub insolvent: bool,
}

pub fn derived_quantities(state: &State, params: &ModelParams) -> Derived {
    let tau = params.tau;
    let (p, n) = (state.p, state.n);
    let a_b = p * n / params.w_b;
    let e_b = a_b - state.l_b;
    let lambda_bar = params.policy.target_leverage(state.sigma_sq);
    let gap = lambda_bar * e_b - a_b;
    let speed = if gap >= 0.0 {
        params.theta
    } else {
        params.deleveraging_speed()
    };
    let delta_b = tau * speed * gap;
    let kappa_b = tau * params.eta * (params.e_bar - e_b);
    let kappa_f = -kappa_b;
    let c_b = (1.0 - params.w_b) * n * p / params.w_b + kappa_b;
    let c_f = (1.0 - state.w_f) * (1.0 - n) * p / state.w_f + kappa_f;
    let a_f = (1.0 - n) * p / state.w_f;
    let insolvent = e_b <= 0.0;
    Derived {
        a_b,
        e_b,
        lambda: if insolvent { f64::NAN } else { a_b / e_b },
        lambda_bar,
        delta_b,
        kappa_b,
        kappa_f,
        c_b,
        c_f,
        a_f,
        r_size: a_b / a_f,
        insolvent,
    }
}

/// Risky-asset demands of bank and fund at a candidate price, given the
/// pre-step balance sheets and the fund's updated weight. Clearing means the
/// two sum to one.
pub fn market_demands(
    state: &State,
    derived: &Derived,
    w_f_new: f64,
    price: f64,
    params: &ModelParams,
) -> (f64, f64) {
    let n = state.n;
    let d_b = params.w_b * (n * price + derived.c_b + derived.delta_b) / price;
    let d_f = w_f_new * ((1.0 - n) * price + derived.c_f) / price;
    (d_b, d_f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceReason {
    /// Clearing-price denominator at or below [`DIVERGENCE_EPS`].
    ClearingDenominator,
    NonPositivePrice,
    NonFinite,
}

impl std::fmt::Display for DivergenceReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ClearingDenominator => "clearing_denominator",
            Self::NonPositivePrice => "non_positive_price",
            Self::NonFinite => "non_finite",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Live,
    /// The fund weight was clamped this many times during the step.
    Clamped(u32),
    /// Terminal; the returned state must not be iterated further.
    Diverged(DivergenceReason),
}

impl StepStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, StepStatus::Diverged(_))
    }
}

/// Applies the map once. `chi` is this step's fund shock (0 for the
/// deterministic system).
pub fn step(state: &State, params: &ModelParams, chi: f64) -> (State, StepStatus) {
    let d = derived_quantities(state, params);
    step_with_derived(state, &d, params, chi)
}

pub(crate) fn step_with_derived(
    state: &State,
    d: &Derived,
    params: &ModelParams,
    chi: f64,
) -> (State, StepStatus) {
    let tau = params.tau;
    let td = tau * params.delta;

    let ret = (state.p / state.p_lag).ln() * params.t_var / tau;
    let sigma_sq = (1.0 - td) * state.sigma_sq + td * ret * ret;

    let raw_w_f = state.w_f
        + state.w_f / state.p * (tau * params.rho * (params.mu - state.p) + tau.sqrt() * chi);
    let w_f = raw_w_f.clamp(W_F_MIN, W_F_MAX);
    let clamped = w_f != raw_w_f;

    let n = state.n;
    let bank_flow = d.c_b + d.delta_b;
    let denom = 1.0 - params.w_b * n - (1.0 - n) * w_f;
    let p = (params.w_b * bank_flow + w_f * d.c_f) / denom;
    let next = State {
        sigma_sq,
        w_f,
        p,
        n: params.w_b * (n * p + bank_flow) / p,
        l_b: state.l_b + d.delta_b,
        p_lag: state.p,
    };

    let status = if !(denom > DIVERGENCE_EPS) {
        StepStatus::Diverged(DivergenceReason::ClearingDenominator)
    } else if !next.is_finite() {
        StepStatus::Diverged(DivergenceReason::NonFinite)
    } else if !(p > 0.0) {
        StepStatus::Diverged(DivergenceReason::NonPositivePrice)
    } else if clamped {
        StepStatus::Clamped(1)
    } else {
        StepStatus::Live
    };
    (next, status)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    /// 1-based step index; the state is `x(step * tau)`.
    pub step: usize,
    pub state: State,
    pub derived: Derived,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    /// Step `step` (1-based) failed; no point was recorded for it.
    Diverged {
        step: usize,
        reason: DivergenceReason,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub initial: State,
    pub points: Vec<TrajectoryPoint>,
    pub termination: Termination,
    pub clamp_count: usize,
    /// Steps on which `n` left `[0, 1]`.
    pub n_excursions: usize,
    /// Steps on which bank equity was non-positive.
    pub insolvent_steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    pub fn time_years(&self, index: usize) -> f64 {
        self.points[index].step as f64 * self.tau
    }

    pub fn prices(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.state.p).collect()
    }

    pub fn states(&self) -> Vec<State> {
        self.points.iter().map(|pt| pt.state).collect()
    }

    pub fn last_state(&self) -> State {
        self.points.last().map_or(self.initial, |pt| pt.state)
    }

    /// Time average of the target leverage after discarding `burn_in` points.
    pub fn mean_target_leverage(&self, burn_in: usize) -> f64 {
        mean(self.points.iter().skip(burn_in).map(|pt| pt.derived.lambda_bar))
    }

    /// Time average of the bank-to-fund size ratio after `burn_in` points.
    pub fn mean_relative_size(&self, burn_in: usize) -> f64 {
        mean(self.points.iter().skip(burn_in).map(|pt| pt.derived.r_size))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = it.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

/// Iterates the map for up to `n_steps`, drawing one shock per step, and stops
/// at the first divergence.
pub fn simulate<S: ShockSource + ?Sized>(
    initial: &State,
    params: &ModelParams,
    noise: &mut S,
    n_steps: usize,
) -> Trajectory {
    let mut traj = Trajectory {
        tau: params.tau,
        initial: *initial,
        points: Vec::with_capacity(n_steps),
        termination: Termination::Completed,
        clamp_count: 0,
        n_excursions: 0,
        insolvent_steps: 0,
    };
    let mut x = *initial;
    for k in 1..=n_steps {
        let chi = noise.next_shock();
        let (next, status) = step(&x, params, chi);
        if let StepStatus::Diverged(reason) = status {
            traj.termination = Termination::Diverged { step: k, reason };
            break;
        }
        let clamped = matches!(status, StepStatus::Clamped(_));
        let derived = derived_quantities(&next, params);
        traj.clamp_count += clamped as usize;
        traj.n_excursions += !(0.0..=1.0).contains(&next.n) as usize;
        traj.insolvent_steps += derived.insolvent as usize;
        traj.points.push(TrajectoryPoint {
            step: k,
            state: next,
            derived,
            clamped,
        });
        x = next;
    }
    traj
}
