use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A joint in a morphology config violates a chain invariant.
    #[error("invalid joint `{joint}`: {reason}")]
    InvalidJoint { joint: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A config value failed schema or invariant validation.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot decode frame {id:#05x} (dlc {dlc}): {reason}")]
    Decode { id: u16, dlc: u8, reason: String },

    #[error("bus `{bus}` infeasible at {rate_hz} Hz: utilization {utilization:.4} >= 1")]
    BusInfeasible {
        bus: String,
        rate_hz: f64,
        utilization: f64,
    },

    /// A dynamometer or teleop procedure could not run to completion.
    #[error("{0}")]
    Procedure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for errors caused by bad input (configs, arguments, files) rather
    /// than failures while running a procedure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidJoint { .. }
                | Error::Dimension { .. }
                | Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Json(_)
                | Error::Toml(_)
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
