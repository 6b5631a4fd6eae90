//! File formats, run configuration and the mode runners behind the `nvsr`
//! binary.

pub mod config;
pub mod csvio;
pub mod error;
pub mod plot;
pub mod run;
pub mod scatter;

pub use config::{Mode, Overrides, RunConfig};
pub use csvio::{emit_decay_csv, ingest_decay_csv};
pub use error::{CliError, CliResult};
pub use run::run;
pub use scatter::{emit_scatter, ingest_scatter_csv, scatter_analysis, ScatterCutoffs, ScatterRecord, ScatterReport};
