use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what} at grid point {point:?}")]
    NonFinite { what: String, point: [usize; 3] },

    #[error("integrand {component} is not integrable at t = 0 (fitted local exponent {exponent:.4} <= -1)")]
    NonIntegrable { component: String, exponent: f64 },

    #[error("singular frame ({context}) at grid point {point:?}: det = {det:e}")]
    SingularFrame {
        context: String,
        point: [usize; 3],
        det: f64,
    },

    #[error("metric not positive definite at grid point {point:?}")]
    NotPositive { point: [usize; 3] },

    #[error("step dt = {dt:e} violates the CFL limit; use dt <= {dt_max:e}")]
    Cfl { dt: f64, dt_max: f64 },

    #[error("energy ceiling breached at t = {t:e}: remainder {norm:e} > ceiling {ceiling:e} (fitted growth exponent {growth:.3})")]
    EnergyBreach {
        t: f64,
        norm: f64,
        ceiling: f64,
        growth: f64,
    },

    #[error("Sobolev order {s} exceeds the supported maximum {max}")]
    SobolevOrder { s: usize, max: usize },

    #[error("invalid Kasner exponents at grid point {point:?}: {reason}")]
    Exponents { point: [usize; 3], reason: String },

    #[error("degenerate data at grid point {point:?}: {reason}")]
    Degenerate { point: [usize; 3], reason: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Io(_) | Error::Invalid(_) => 4,
            _ => 3,
        }
    }
}
