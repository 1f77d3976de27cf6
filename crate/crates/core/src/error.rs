use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("measure has zero total mass")]
    ZeroMass,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{escaped:e} of the mass maps outside the output bins")]
    RangeEscape { escaped: f64 },

    #[error("matrix is rank deficient (smallest/largest singular value = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("measures do not share a discrete support")]
    SupportMismatch,

    #[error("divergence lower bound is infinite: phi(0) = +inf and the data has mass off the range")]
    InfiniteBound,

    #[error("transport solver stalled after {iterations} pivots")]
    SolverStall { iterations: usize },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("data measure has no mass on the range of the forward map")]
    EmptyRangeMass,

    #[error("{outside:e} of the data mass lies outside the range of the forward map")]
    RangeMismatch { outside: f64 },

    #[error("no parameter within {tolerance:e} of the fiber over the requested point")]
    EmptyFiber { tolerance: f64 },

    #[error("prior vanishes on a fiber that carries data mass")]
    PriorVanishes,

    #[error("instance too large for brute force: n = {n} (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("unsupported data: {0}")]
    UnsupportedData(String),

    #[error("parameter domain is unbounded; a grid search needs a bounded domain")]
    UnboundedDomain,

    #[error("parse error: {0}")]
    Parse(String),
}
