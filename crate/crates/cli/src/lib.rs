//! Spec loading, experiment running and result files for the `fedweight` tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod error;
pub mod output;
pub mod presets;
pub mod run;
pub mod setup;
pub mod spec;

pub use error::CliError;
pub use run::{execute, write_bundle, Experiment, Summary};
pub use spec::{ExperimentSpec, Overrides};
