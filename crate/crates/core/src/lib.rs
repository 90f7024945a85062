//! Federated-learning simulation core for collaboratively trained models.
//!
//! Everything here is `no_std` + `alloc` and deterministic given its seeds:
//! parameter vectors and small models with local (optionally proximal)
//! training, client partitioning strategies, server-side aggregation,
//! evaluation metrics, the round orchestrator, and the governed model
//! registry state machine. File formats, persistence and the CLI live in the
//! `fedcode` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod aggregation;
pub mod dataset;
pub mod error;
pub mod governance;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod params;
pub mod partition;
pub mod seed;
pub mod synthetic;
pub mod train;

pub use aggregation::{AggregationConfig, AggregationKind, ClientUpdate};
pub use dataset::{Dataset, LabeledExample};
pub use error::{Error, Result};
pub use governance::{GateConfig, Registry, RegistrySettings, Verdict};
pub use model::{ModelKind, ModelSpec};
pub use orchestrator::{ExperimentConfig, Mode, PartitionSource, RoundReport};
pub use params::{ParameterVector, Segment};
pub use partition::{PartitionPlan, PartitionSpec, Strategy};
pub use synthetic::CorpusConfig;
pub use train::{local_train, TrainConfig};
