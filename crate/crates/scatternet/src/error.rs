use std::path::PathBuf;

use scatternet_core::SimError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A scenario or record file that does not parse or fails validation.
    #[error("bad scenario {origin}: {message}")]
    BadScenario { origin: String, message: String },
    #[error("simulation failed: {0}")]
    Sim(SimError),
    #[error("replay diverged at step {step}: {what} recorded {recorded} but replay gave {replayed}")]
    ReplayDivergence {
        step: usize,
        what: String,
        recorded: String,
        replayed: String,
    },
    #[error("sweep of {runs} runs exceeds the limit of {limit}; pass --force to run it anyway")]
    SweepTooLarge { runs: usize, limit: usize },
    #[error("bad sweep axis: {0}")]
    BadAxis(String),
    #[error("port {port} is already in use")]
    PortInUse { port: u16 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<SimError> for Error {
    fn from(e: SimError) -> Self {
        Error::Sim(e)
    }
}

impl Error {
    pub fn bad(origin: impl Into<String>, message: impl Into<String>) -> Self {
        Error::BadScenario { origin: origin.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
