//! Host-side companion of `scatternet-core`. Everything that needs files,
//! threads or sockets lives here.

pub mod error;
pub mod export;
pub mod protocol;
pub mod record;
pub mod scenario;
pub mod session;
pub mod sweep;

pub use error::{Error, Result};
pub use record::SessionRecord;
pub use scenario::{LoadedScenario, ScenarioFile};
