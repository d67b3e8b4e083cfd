use thiserror::Error;

use crate::clock::VectorClock;
use crate::Key;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("vector clock width mismatch: {left} vs {right}")]
    WidthMismatch { left: usize, right: usize },
    #[error("server index {index} out of range for clock width {width}")]
    IndexOutOfRange { index: usize, width: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("cannot resolve versions of different keys {left:?} and {right:?}")]
    KeyMismatch { left: Key, right: Key },
}

/// A dependency that neither half of the dual cache can satisfy. The protocol
/// guarantees this never happens; seeing it means an invariant was broken.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unsatisfiable dependency {key}@{required}: local coverage is {covered:?}")]
pub struct UnsatisfiedDependency {
    pub key: Key,
    pub required: VectorClock,
    pub covered: Option<VectorClock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error(transparent)]
    Unsatisfied(#[from] UnsatisfiedDependency),
    #[error("propagation hop {hop} out of range for a {n}-server chain")]
    HopOutOfRange { hop: usize, n: usize },
    #[error("batch write must contain at least one write")]
    EmptyBatch,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("key {0:?} not found in store")]
    NotFound(Key),
    #[error("store log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("store log line {line}: {source}")]
    Corrupt {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("server rejected request: {0}")]
    Server(#[from] ServerError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed session blob: {0}")]
    Decode(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation did not quiesce within {0} steps")]
    StepBudgetExhausted(u64),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("write {key}@{vc} never reached tail integration")]
    NeverIntegrated { key: Key, vc: VectorClock },
}
