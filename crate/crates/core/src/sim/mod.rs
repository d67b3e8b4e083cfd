//! Deterministic discrete-event simulation of a cluster and its clients.
//!
//! Time is logical. Every action (a client request reaching a server, a
//! peer message being delivered) runs to completion on one server before
//! the next is popped, and messages on one directed link are delivered in
//! send order whatever delays were sampled.

mod baseline;
mod engine;
mod measure;
mod queue;
pub mod scripts;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::CacheDump;
use crate::checker::Violation;
use crate::server::{PropagationMode, ServerConfig};
use crate::trace::Trace;
use crate::version::{Key, Version};

pub use baseline::BaselineServer;
pub use engine::{run, Simulation};
pub use measure::{anomaly_rate, measure_visibility, workflow_of_sessions, Visibility};
pub use queue::{link_delivery_time, EventQueue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RoamingPolicy {
    #[default]
    UniformRandom,
    RoundRobin,
    Sticky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BaselineMode {
    #[default]
    CausalMesh,
    EventualBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FaultKind {
    #[default]
    LinkStall,
}

/// Holds back every message on `link` that would arrive during
/// `[start, start + duration)` until the window closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    #[serde(default)]
    pub kind: FaultKind,
    pub link: (usize, usize),
    pub start: u64,
    pub duration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    /// Inclusive bounds on every link hop, server-to-server and
    /// client-to-server alike.
    pub delay_range: (u64, u64),
    /// Added to a reply whenever the server had to read the store.
    pub store_latency: u64,
    pub roaming_policy: RoamingPolicy,
    pub propagation_mode: PropagationMode,
    pub baseline_mode: BaselineMode,
    pub faults: Vec<FaultSpec>,
    pub tail_disseminate: bool,
    pub ring_capacity: usize,
    /// Gap between consecutive workflow arrivals.
    pub arrival_interval: u64,
    /// Wait between polls and before retries.
    pub poll_interval: u64,
    /// Run the snapshot checks after every this many steps.
    pub state_check_every: Option<usize>,
    pub max_steps: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 3,
            seed: 0,
            delay_range: (1, 10),
            store_latency: 5,
            roaming_policy: RoamingPolicy::UniformRandom,
            propagation_mode: PropagationMode::TwoRound,
            baseline_mode: BaselineMode::CausalMesh,
            faults: Vec::new(),
            tail_disseminate: false,
            ring_capacity: crate::cache::DEFAULT_RING_CAPACITY,
            arrival_interval: 2,
            poll_interval: 5,
            state_check_every: Some(50),
            max_steps: 50_000_000,
        }
    }
}

impl SimConfig {
    pub fn server_config(&self) -> ServerConfig {
        ServerConfig {
            propagation_mode: self.propagation_mode,
            tail_disseminate: self.tail_disseminate,
            ring_capacity: self.ring_capacity,
            ..ServerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshots {
    pub servers: Vec<CacheDump>,
    pub store: BTreeMap<Key, Version>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub steps: u64,
    pub end_time: u64,
    pub workflows: usize,
    pub committed: usize,
    /// Read transactions refused because the cut predated an own write.
    pub txn_aborts: usize,
    /// Whole-workflow restarts under TCC.
    pub tcc_aborts: usize,
    pub deliveries: usize,
    pub protocol_faults: usize,
    pub state_samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimOutput {
    pub trace: Trace,
    pub snapshots: Snapshots,
    /// Distinct findings of the periodic snapshot checks; `at` is the step.
    pub state_violations: Vec<Violation>,
    pub stats: SimStats,
}
