//! Configuration and experiment layer of the `stefan-sim` command.

// `!(x > 0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;

pub use config::{ExperimentKind, SimConfig};
pub use experiment::{run_experiment, run_from_file, ExperimentError, RunSummary};
