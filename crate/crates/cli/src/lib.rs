//! Command-line front end: configuration, mode orchestration, manifests and
//! SVG plots.

pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod run;

pub use config::{Mode, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use run::run;
