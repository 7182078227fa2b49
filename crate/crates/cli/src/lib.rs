//! Library surface of the pipeline driver, so integration tests can run the
//! subcommands in-process under a thread pool of their choosing.

pub mod artifacts;
pub mod bench;
pub mod commands;
pub mod config;
pub mod synth;

pub use commands::Paths;
pub use config::Experiment;

use tokendance_core::error::CoreError;

/// Process exit code for a pipeline failure: 2 for configuration problems and
/// missing upstream artifacts (user-fixable without a code change), 3 for
/// numerical breakdown, 1 otherwise.
pub fn exit_code_for(e: &CoreError) -> i32 {
    match e {
        CoreError::MissingArtifact(_) => 2,
        CoreError::Numerical(_)
        | CoreError::NonFinite { .. }
        | CoreError::DegenerateRotation(_) => 3,
        _ => 1,
    }
}
