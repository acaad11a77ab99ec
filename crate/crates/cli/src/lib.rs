//! Command-line front end: validated configs, the design → analyze → verify
//! pipeline, and byte-stable JSON/CSV emission.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod pipeline;

pub use config::{load_config, Args, Command, ConfigError, Format, RunConfig};
pub use pipeline::{run_pipeline, Report, Status};

/// Exit status for configuration and runtime errors.
pub const EXIT_ERROR: u8 = 2;
