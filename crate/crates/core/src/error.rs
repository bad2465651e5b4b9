use thiserror::Error;

/// A parameter violated one of its domain constraints.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{name} = {value} violates {constraint}")]
pub struct ParamError {
    pub name: &'static str,
    pub value: f64,
    pub constraint: &'static str,
}

impl ParamError {
    pub(crate) fn new(name: &'static str, value: f64, constraint: &'static str) -> Self {
        Self {
            name,
            value,
            constraint,
        }
    }
}

pub(crate) fn require(
    ok: bool,
    name: &'static str,
    value: f64,
    constraint: &'static str,
) -> Result<(), ParamError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ParamError::new(name, value, constraint))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("QR iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("eigenpair residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("fixed point undefined: sigma0_sq = 0 with b < 0 puts n* at infinity")]
    DegenerateFixedPoint,
    #[error("jacobian has non-finite entries (state near divergence)")]
    NonFiniteJacobian,
    #[error("no spectral-radius crossing of 1 for alpha in [{lo:e}, {hi:e}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("no sign change of the Lyapunov exponent for alpha in [{lo:e}, {hi:e}]")]
    NoSignChange { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("return series contains an invalid entry at index {0}")]
    InvalidEntry(usize),
    #[error("quantile q = {0} must lie in (0, 1)")]
    Quantile(f64),
    #[error("q*T = {0} is not a positive integer")]
    NonIntegerTail(f64),
    #[error("trajectory needs at least {needed} live steps, has {have}")]
    TooShort { needed: usize, have: usize },
    #[error("only {0} qualifying peaks, need at least 3")]
    TooFewPeaks(usize),
    #[error("series must be non-empty with positive values")]
    BadSeries,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("calibration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no model solution with the required targets: {0}")]
    Infeasible(String),
}

/// A configuration document was rejected; `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: cannot parse `{value}` for `{key}`")]
    Malformed {
        line: usize,
        key: String,
        value: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: `{key}` set twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ParamError,
    },
}
