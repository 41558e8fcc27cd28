use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resolution {resolution:e} m resolves gap {gap:e} m with fewer than 6 cells")]
    ResolutionTooCoarse { gap: f64, resolution: f64 },

    #[error("invalid geometry: {0}")]
    GeometryInvalid(String),

    #[error("point ({:e}, {:e}, {:e}) m lies outside the domain", .point[0], .point[1], .point[2])]
    OutOfDomain { point: [f64; 3] },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("angular frequency must be positive")]
    ZeroFrequency,

    #[error("Clausius-Mossotti denominator vanishes")]
    DegenerateDenominator,

    #[error("time step underflow at t = {time:e} s near ({:e}, {:e}, {:e}) m", .position[0], .position[1], .position[2])]
    StepUnderflow { time: f64, position: [f64; 3] },

    #[error("field grids do not match")]
    GridMismatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), reason: reason.into() }
    }
}
