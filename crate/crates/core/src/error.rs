use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular kernel evaluation at the origin ({0})")]
    SingularEvaluation(String),

    #[error("unsupported Bessel order nu = {0}; only integer and half-integer orders are implemented")]
    UnsupportedOrder(f64),

    #[error("kernel under-resolved: sigma = {sigma} is below the grid spacing h = {spacing}")]
    UnderResolvedKernel { sigma: f64, spacing: f64 },

    #[error("box too small: tail mass {tail:.3e} beyond half-width {half_width} exceeds {tolerance:.1e}")]
    TailMass {
        tail: f64,
        half_width: f64,
        tolerance: f64,
    },

    #[error("box-size search exceeded L = {0}")]
    BoxSearchExhausted(f64),

    #[error("density positive where the target underflows (cell {cell})")]
    SupportViolation { cell: usize },

    #[error("positivity violated: value {value:.3e} in cell {cell} at t = {time}")]
    Positivity { cell: usize, value: f64, time: f64 },

    #[error("weight overflow: clamped exponent inside the support of rho (face {face}, rho = {rho:.3e})")]
    WeightOverflow { face: usize, rho: f64 },

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("insufficient samples: need {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("no admissible delta found for sigma_* search")]
    NoAdmissibleDelta,

    #[error("KL divergence {0:.3e} is at the floor; ratio undefined")]
    KlAtFloor(f64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sweep member sigma = {sigma} failed: {message}")]
    SweepMember { sigma: f64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
