//! Construction and evaluation of individualized treatment rules from
//! two-arm randomized trials with a binary outcome.

pub mod causal_forest;
pub mod dataset;
pub mod direct_rules;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod metalearners;
pub mod rng;
pub mod rule;
pub mod synthetic;
pub mod virtual_twins;

pub use error::{ItrError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
