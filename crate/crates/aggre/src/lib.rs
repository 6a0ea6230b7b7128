//! File formats, dataset loading and the command implementations behind the
//! `aggre` binary.

pub mod bundle;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
mod wire;

pub use bundle::Bundle;
pub use checkpoint::Checkpoint;
pub use config::{ContextPolicy, RunConfig};
pub use dataset::SplitFiles;
pub use error::{AppError, Result};
pub use report::{EvalReport, LogLine};
