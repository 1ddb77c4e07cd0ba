//! Deterministic federated-learning simulator with pluggable aggregation
//! strategies and convergence diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod diagnostics;
pub mod error;
pub mod local_update;
pub mod metrics;
pub mod objectives;
pub mod params;
pub mod protocol;
pub mod rng;
pub mod strategies;

pub use datasets::{LabeledDataset, Partition, ShardConfig};
pub use error::{Error, Result};
pub use local_update::{LocalWork, LrSchedule};
pub use metrics::{confidence_interval, rounds_to_threshold, RunStats};
pub use objectives::{Architecture, ClassifierObjective, ClientObjective, Model, QuadraticObjective};
pub use params::ParamVector;
pub use protocol::{
    run_federated, run_seeds, ExperimentResult, FedConfig, Federation, LossEval, Outcome, RoundRecord, RunOptions,
    Track,
};
pub use strategies::{CoefficientVector, RoundContext, Strategy};
