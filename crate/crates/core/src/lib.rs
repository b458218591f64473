//! FedMLAC federated-learning simulator.
//!
//! Clients train a personalized model and a shared Plug-in model by mutual
//! distillation; the server aggregates Plug-in uploads with layer-wise pruning.

pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod seed;
pub mod server;
pub mod sim;

pub use client::{ClientState, ClientUpload, LocalUpdateConfig, TeacherMode};
pub use config::{AdversaryConfig, AdversaryKind, Algorithm, EvalMode, FederationConfig, RunManifest};
pub use data::{Dataset, PartitionPlan, PartitionStrategy, Sample};
pub use error::{Error, Result};
pub use metrics::{evaluate, macro_f1, rate_slope};
pub use nn::{Activation, ModelParams, ModelSpec};
pub use server::{AggregationConfig, LayerAudit, TrustedSet};
pub use sim::{run_simulation, Federation, RoundRecord, SimulationSummary};
