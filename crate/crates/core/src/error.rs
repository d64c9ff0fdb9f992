use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("raw moment order {0} outside 1..=6")]
    MomentOrder(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("non-finite value in system output at t = {t}")]
    NonFinite { t: f64 },

    #[error("event location did not converge within {iterations} iterations near t = {t}")]
    EventLocation { t: f64, iterations: usize },

    #[error("simulation failed at point {point:?}: {reason}")]
    Simulation { point: Vec<f64>, reason: String },

    #[error("zero variance in observable {0}")]
    ZeroVariance(usize),

    #[error("noise horizon [0, {noise}] does not cover map horizon [{t0}, {t_max}]")]
    Horizon { noise: f64, t0: f64, t_max: f64 },

    #[error("map is not strictly monotone on its support")]
    NonMonotone,

    #[error("analytic oracle not valid: {0}")]
    OracleDomain(String),

    #[error("too many failed samples: {failed} of {n}")]
    TooManyFailures { failed: usize, n: usize },

    #[error("no feasible point found; max constraint violation {violation:e}")]
    Infeasible { violation: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("config error: {0}")]
    Config(String),
}
