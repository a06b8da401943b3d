use thiserror::Error;

/// Errors raised by model construction, the exact engine and the bound evaluators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition row {row} is not stochastic (sum = {sum}, min entry = {min})")]
    NonStochasticRow { row: usize, sum: f64, min: f64 },
    #[error("transition matrix is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("model has {states} states but {what} has length {len}")]
    LengthMismatch {
        states: usize,
        what: &'static str,
        len: usize,
    },
    #[error("denominator must be at least 1")]
    ZeroDenominator,
    #[error("chain is reducible: state {state} cannot reach every other state")]
    ReducibleChain { state: usize },
    #[error("chain is periodic with period {period}")]
    PeriodicChain { period: usize },
    #[error("payoff is constant under the stationary law")]
    DegeneratePayoff,
    #[error("unknown builtin model '{0}'")]
    UnknownBuiltin(String),
    #[error("parameter {name} = {value} out of range ({range})")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("operation requires an exact-tier model")]
    SampledTierUnsupported,
    #[error("variance {0:e} is degenerate")]
    DegenerateVariance(f64),
    #[error(
        "memory budget exceeded: n = {n}, states = {states}, lattice range = {range} \
         needs {bytes} bytes, budget {budget}"
    )]
    BudgetExceeded {
        n: usize,
        states: usize,
        range: usize,
        bytes: u128,
        budget: u128,
    },
    #[error("argument {0} outside (0, 1)")]
    OutOfRange(f64),
    #[error("trajectory of length {len} is shorter than block length {m}")]
    TrajectoryTooShort { len: usize, m: usize },
    #[error("sampled model has no conditional sampler for nested resampling")]
    NestedEstimateUnavailable,
    #[error("decay of conditional means cannot be certified")]
    NoDecayCertificate,
    #[error("covariance window too small to certify a geometric tail")]
    WindowTooSmall,
    #[error("certificate has {have} entries, {need} required")]
    InsufficientCertificateLength { have: usize, need: usize },
    #[error("beta = {0} must exceed 1")]
    BetaOutOfRange(f64),
    #[error("x = {0} must be nonnegative")]
    NegativeX(f64),
    #[error("gamma |ln gamma| = {0} is not below 1")]
    GammaTooLarge(f64),
    #[error("conditional-mean norms supplied for {have} indices, {need} required")]
    MissingNorms { have: usize, need: usize },
    #[error("normal tail at x = {0} underflows")]
    ZeroDenominatorTail(f64),
    #[error("{have} samples supplied, at least {need} required")]
    TooFewSamples { have: usize, need: usize },
    #[error("speed exponent {0} outside (0, 1/2)")]
    ExponentOutOfRange(f64),
    #[error("normalising scale {0:e} underflows")]
    DegenerateGap(f64),
    #[error("invalid model file: {0}")]
    ModelFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
