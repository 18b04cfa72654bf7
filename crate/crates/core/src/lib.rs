//! A deterministic simulator of the stochastic CRQW shared-memory model.
//!
//! Processes run operation state machines against word-sized cells whose
//! state-changing instructions queue per cell and apply one per timestep.
//! The crate provides the timestep engine, random-delay schedulers, the
//! back-on register and CAS primitives with naive baselines, adaptive
//! workloads, analysis metrics, linearizability checkers, composition and
//! lower-bound harnesses, an experiment runner and a hardware benchmark.

pub mod apps;
pub mod audit;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod history;
pub mod hwbench;
pub mod lincheck;
pub mod memory;
pub mod metrics;
pub mod object;
pub mod ops;
pub mod primitives;
pub mod rng;
pub mod sched;
pub mod sim;
pub mod workload;

/// Process identifier in `0..P`.
pub type Pid = u32;
/// Operation identifier, unique within a run.
pub type OpId = u64;

pub use config::{Profile, SimConfig};
pub use error::{Result, SimError};
