//! Seeded shock streams and the GARCH(1,1) process driving the fund's demand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{require, ParamError};

/// Source of one fund shock `chi(t)` per map iteration.
pub trait ShockSource {
    fn next_shock(&mut self) -> f64;
}

/// The deterministic limit: every shock is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoShocks;

impl ShockSource for NoShocks {
    fn next_shock(&mut self) -> f64 {
        0.0
    }
}

/// Reproducible stream of standard-normal draws.
///
/// Backed by ChaCha8, whose output is specified independently of platform and
/// word size, so a seed pins the whole sequence.
#[derive(Debug, Clone)]
pub struct ShockStream {
    rng: ChaCha8Rng,
}

pub fn make_stream(seed: u64) -> ShockStream {
    ShockStream {
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl ShockStream {
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Seed for sweep cell `index` derived from a base seed.
pub fn cell_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchParams {
    /// Baseline variance.
    pub a0: f64,
    /// Weight on the previous squared shock.
    pub a1: f64,
    /// Weight on the previous variance.
    pub b1: f64,
}

impl Default for GarchParams {
    fn default() -> Self {
        Self {
            a0: 1e-3,
            a1: 0.016,
            b1: 0.87,
        }
    }
}

impl GarchParams {
    pub fn new(a0: f64, a1: f64, b1: f64) -> Result<Self, ParamError> {
        let g = Self { a0, a1, b1 };
        g.validate()?;
        Ok(g)
    }

    /// All-zero parameters: the noiseless limit.
    pub fn zero() -> Self {
        Self {
            a0: 0.0,
            a1: 0.0,
            b1: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        require(self.a0 >= 0.0, "a0", self.a0, "a0 >= 0")?;
        require(self.a1 >= 0.0, "a1", self.a1, "a1 >= 0")?;
        require(self.b1 >= 0.0, "b1", self.b1, "b1 >= 0")
    }

    pub fn is_stationary(&self) -> bool {
        self.a1 + self.b1 < 1.0
    }

    pub fn is_deterministic(&self) -> bool {
        self.a0 == 0.0 && self.a1 == 0.0 && self.b1 == 0.0
    }

    /// Long-run mean of `chi^2`, `a0 / (1 - a1 - b1)`, when stationary.
    pub fn stationary_variance(&self) -> Option<f64> {
        self.is_stationary()
            .then(|| self.a0 / (1.0 - self.a1 - self.b1))
    }

    /// Starts at the stationary variance (or `a0`) with no previous shock.
    pub fn initial_state(&self) -> GarchState {
        GarchState {
            s_sq: self.stationary_variance().unwrap_or(self.a0),
            chi_prev: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchState {
    pub s_sq: f64,
    pub chi_prev: f64,
}

/// Advances the variance recursion and draws this step's shock.
pub fn garch_step(
    state: &GarchState,
    params: &GarchParams,
    rng: &mut ShockStream,
) -> (f64, GarchState) {
    let s_sq = params.a0 + params.a1 * state.chi_prev * state.chi_prev + params.b1 * state.s_sq;
    let chi = s_sq.sqrt() * rng.standard_normal();
    (
        chi,
        GarchState {
            s_sq,
            chi_prev: chi,
        },
    )
}

/// GARCH(1,1) shocks on a seeded stream.
#[derive(Debug, Clone)]
pub struct GarchShocks {
    params: GarchParams,
    state: GarchState,
    stream: ShockStream,
}

impl GarchShocks {
    pub fn new(params: GarchParams, seed: u64) -> Self {
        Self {
            params,
            state: params.initial_state(),
            stream: make_stream(seed),
        }
    }

    pub fn state(&self) -> GarchState {
        self.state
    }
}

impl ShockSource for GarchShocks {
    fn next_shock(&mut self) -> f64 {
        if self.params.is_deterministic() {
            return 0.0;
        }
        let (chi, next) = garch_step(&self.state, &self.params, &mut self.stream);
        self.state = next;
        chi
    }
}

/// Wraps a source and keeps every shock it hands out.
#[derive(Debug, Clone)]
pub struct Recorder<S> {
    inner: S,
    pub recorded: Vec<f64>,
}

impl<S: ShockSource> Recorder<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            recorded: Vec::new(),
        }
    }
}

impl<S: ShockSource> ShockSource for Recorder<S> {
    fn next_shock(&mut self) -> f64 {
        let chi = self.inner.next_shock();
        self.recorded.push(chi);
        chi
    }
}

/// Plays back a fixed shock sequence; yields zero once it is exhausted.
#[derive(Debug, Clone)]
pub struct Replay {
    values: Vec<f64>,
    pos: usize,
}

impl Replay {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.values.len() - self.pos
    }
}

impl ShockSource for Replay {
    fn next_shock(&mut self) -> f64 {
        let v = self.values.get(self.pos).copied().unwrap_or(0.0);
        self.pos += 1;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: u64, n: usize) -> Vec<f64> {
        let mut s = make_stream(seed);
        (0..n).map(|_| s.standard_normal()).collect()
    }

    #[test]
    fn same_seed_same_draws() {
        assert_eq!(draws(7, 1000), draws(7, 1000));
    }

    #[test]
    fn distinct_seeds_differ() {
        assert_ne!(draws(1, 1000), draws(2, 1000));
    }

    #[test]
    fn standard_normal_moments() {
        let n = 1_000_000;
        let xs = draws(11, n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn no_autoregression_gives_constant_variance() {
        let g = GarchParams::new(2e-3, 0.0, 0.0).unwrap();
        let mut st = g.initial_state();
        let mut rng = make_stream(3);
        for _ in 0..100 {
            let (_, next) = garch_step(&st, &g, &mut rng);
            assert_eq!(next.s_sq, 2e-3);
            st = next;
        }
    }

    #[test]
    fn zero_baseline_stays_silent() {
        let g = GarchParams::new(0.0, 0.3, 0.5).unwrap();
        let mut st = GarchState {
            s_sq: 0.0,
            chi_prev: 0.0,
        };
        let mut rng = make_stream(5);
        for _ in 0..1000 {
            let (chi, next) = garch_step(&st, &g, &mut rng);
            assert_eq!(chi, 0.0);
            st = next;
        }
    }

    #[test]
    fn recursion_matches_scalar_evaluation() {
        let g = GarchParams::default();
        let mut src = GarchShocks::new(g, 9);
        let mut prev = src.state();
        for _ in 0..500 {
            src.next_shock();
            let now = src.state();
            let expect = g.a0 + g.a1 * prev.chi_prev * prev.chi_prev + g.b1 * prev.s_sq;
            assert_eq!(now.s_sq.to_bits(), expect.to_bits());
            prev = now;
        }
    }

    #[test]
    fn stationary_variance_long_run() {
        let g = GarchParams::new(1e-3, 0.016, 0.87).unwrap();
        let target: f64 = 1e-3 / (1.0 - 0.016 - 0.87);
        assert!((target - 8.772e-3).abs() < 1e-6);
        let mut src = GarchShocks::new(g, 2024);
        let n = 1_000_000;
        let m = (0..n).map(|_| src.next_shock().powi(2)).sum::<f64>() / n as f64;
        assert!((m / target - 1.0).abs() < 0.02, "sample {m} vs {target}");
    }

    #[test]
    fn record_and_replay() {
        let mut rec = Recorder::new(GarchShocks::new(GarchParams::default(), 42));
        let live: Vec<f64> = (0..1000).map(|_| rec.next_shock()).collect();
        let mut replay = Replay::new(rec.recorded.clone());
        let again: Vec<f64> = (0..1000).map(|_| replay.next_shock()).collect();
        assert_eq!(live, again);
        assert_eq!(replay.remaining(), 0);
    }

    #[test]
    fn non_stationary_falls_back_to_baseline() {
        let g = GarchParams::new(1e-3, 0.5, 0.6).unwrap();
        assert!(!g.is_stationary());
        assert_eq!(g.initial_state().s_sq, 1e-3);
    }
}
