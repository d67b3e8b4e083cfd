use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::checker::check_sessions;
use crate::error::SimError;
use crate::trace::{Event, SessionId, Trace, WorkflowId};

/// How long a write took to become visible at its tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visibility {
    /// Propagation deliveries up to and including tail integration.
    pub hops: usize,
    /// Logical time from the write reply to tail integration.
    pub latency: u64,
}

/// Measures the write recorded at trace index `write` (a client write
/// reply).
pub fn measure_visibility(trace: &Trace, write: usize) -> Result<Visibility, SimError> {
    let ev = trace
        .events
        .get(write)
        .ok_or_else(|| SimError::Config(format!("no event at index {write}")))?;
    let Event::ClientWriteReply { key, vc, .. } = &ev.event else {
        return Err(SimError::Config(format!("event {write} is not a write reply")));
    };
    let mut hops = 0;
    for e in &trace.events[write..] {
        match &e.event {
            Event::PropagateDeliver { key: k, vc: c, .. } if k == key && c == vc => hops += 1,
            Event::TailIntegrate { key: k, vc: c, .. } if k == key && c == vc => {
                return Ok(Visibility {
                    hops,
                    latency: e.t - ev.t,
                })
            }
            _ => {}
        }
    }
    Err(SimError::NeverIntegrated {
        key: key.clone(),
        vc: vc.clone(),
    })
}

/// Owning workflow of every session, following forks.
pub fn workflow_of_sessions(trace: &Trace) -> BTreeMap<SessionId, WorkflowId> {
    let mut out = BTreeMap::new();
    for e in trace.iter() {
        match &e.event {
            Event::WorkflowStart { workflow, session, .. } => {
                out.insert(*session, *workflow);
            }
            Event::SessionFork { parent, child } => {
                if let Some(&w) = out.get(parent) {
                    out.insert(*child, w);
                }
            }
            _ => {}
        }
    }
    out
}

/// Fraction of workflows with at least one session-guarantee violation.
pub fn anomaly_rate(trace: &Trace) -> f64 {
    let owner = workflow_of_sessions(trace);
    let total: BTreeSet<WorkflowId> = owner.values().copied().collect();
    if total.is_empty() {
        return 0.0;
    }
    let bad: BTreeSet<WorkflowId> = check_sessions(trace)
        .iter()
        .filter_map(|v| v.session.and_then(|s| owner.get(&s).copied()))
        .collect();
    bad.len() as f64 / total.len() as f64
}
