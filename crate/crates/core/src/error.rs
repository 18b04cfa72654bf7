use thiserror::Error;

use crate::memory::CellId;
use crate::Pid;

/// Errors surfaced by the simulator and its harnesses.
#[derive(Debug, Error)]
pub enum SimError {
    /// A caller broke an engine precondition (e.g. scheduling a waiting process).
    #[error("contract violation at t={t}: {msg}")]
    ContractViolation { t: u64, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown cell id {0}")]
    UnknownCell(CellId),

    #[error("process {pid} is busy; cannot invoke a new operation at t={t}")]
    ProcessBusy { pid: Pid, t: u64 },

    #[error("binding error: {0}")]
    Binding(String),

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("trace parse error at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn contract(t: u64, msg: impl Into<String>) -> Self {
        SimError::ContractViolation { t, msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
