use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChordError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("family parameter {mu} outside admissible range [{lo}, {hi}]")]
    MuOutOfRange { mu: f64, lo: f64, hi: f64 },

    #[error("plane is not Lagrangian: |omega(u, w)| = {0:e}")]
    NotLagrangian(f64),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("trajectory breached the collision floor (r = {radius:e} < {floor:e})")]
    CollisionFloor { radius: f64, floor: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("period collapsed to {tau:e} (floor {floor:e})")]
    TauCollapsed { tau: f64, floor: f64 },

    #[error("dH vanishes along the Lagrangian at a chord endpoint")]
    DimensionError,

    #[error("seed chord is degenerate (sigma_min = {0:e})")]
    SeedDegenerate(f64),

    #[error("contact condition failed ({0} violating samples)")]
    ContactFailed(usize),

    #[error("too few samples projected onto the level set: {accepted} < {required}")]
    SamplingFailed { accepted: usize, required: usize },

    #[error("sigma fell below the floor: {sigma:e} < {floor:e}")]
    SigmaFloor { sigma: f64, floor: f64 },

    #[error("flow diverged: {0}")]
    Divergence(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for ChordError {
    fn from(e: std::io::Error) -> Self {
        ChordError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ChordError>;
