//! Deterministic federated-learning simulator.
//!
//! Local update rules for FedAvg, FedProx, SCAFFOLD, FedMix, Moon and the
//! pseudo-data methods AugMean, AugCA and their combination FedAug, on top
//! of a small from-scratch dense-network engine. Also contains the
//! local-learning-bias probe and run reporting.

pub mod algorithms;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod nn;
pub mod probe;
pub mod report;
pub mod rng;

pub use algorithms::{AlgorithmKind, AlgorithmSpec, LocalResult};
pub use config::RunConfig;
pub use data::{LabeledDataset, PartitionSpec, PseudoDataset};
pub use engine::{run_simulation, ClientContext, RoundState};
pub use error::{Error, Result};
pub use nn::{DenseNet, ModelGrads, ModelParams, ModelSpec, Tensor};
pub use probe::ProbeReport;
pub use report::{RoundMetrics, RunReport};
