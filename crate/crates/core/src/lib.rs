//! Decentralized stochastic optimization with compressed gossip.

pub mod compression;
pub mod consensus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod problems;
pub mod topology;
pub mod verify;

pub use compression::Compressor;
pub use error::{Error, Result};
pub use metrics::{MessagePolicy, Row, RunRecord, TrafficLedger};
pub use optim::{Algorithm, OptimizerConfig, SimOptions, Simulation};
pub use topology::{Graph, MixingMatrix, TopologySpec};
