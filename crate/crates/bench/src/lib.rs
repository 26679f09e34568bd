//! Benchmark harness: fits every method on one split of a trial and writes the
//! comparison tables.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod registry;
pub mod report;
pub mod synth;

pub use config::{validate_config, Diagnostics, RunConfig};
pub use error::{BenchError, Result};
pub use pipeline::{run, MethodRun, RunReport};
pub use registry::{Family, FittedRule, MethodParams, METHODS};
