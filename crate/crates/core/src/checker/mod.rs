//! Trace and snapshot oracles.
//!
//! Everything here is a pure function of a trace and/or cache snapshots; the
//! checker never touches protocol state. A read of key `k` at clock `c` is
//! taken to observe every write of `k` whose clock is dominated by `c`.

mod minimize;
mod session;
mod state;
mod txn;

use serde::{Deserialize, Serialize};

use crate::clock::VectorClock;
use crate::trace::{Event, SessionId};
use crate::version::Key;

pub use minimize::{minimize_witness, revalidate, MINIMIZE_BUDGET};
pub use session::{check_cut_coverage, check_sessions};
pub use state::{check_convergence, check_requests, check_state, Divergence};
pub use txn::{check_atomic_visibility, check_repeatable_reads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    ReadYourWrites,
    MonotonicReads,
    WritesFollowReads,
    MonotonicWrites,
    CutCoverage,
    CCacheNotCut,
    PvcBound,
    NotGloballyAvailable,
    AtomicVisibility,
    RepeatableRead,
}

impl ViolationKind {
    /// Kinds found by scanning a trace's client operations.
    pub fn is_session_kind(self) -> bool {
        matches!(
            self,
            ViolationKind::ReadYourWrites
                | ViolationKind::MonotonicReads
                | ViolationKind::WritesFollowReads
                | ViolationKind::MonotonicWrites
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Key>,
    /// Index of the offending trace event (or simulation step for snapshot
    /// checks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<usize>,
    pub detail: String,
    /// Trace event indices that together exhibit the violation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witness: Vec<usize>,
}

impl Violation {
    pub(crate) fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Violation {
            kind,
            session: None,
            server: None,
            key: None,
            at: None,
            detail: detail.into(),
            witness: Vec::new(),
        }
    }
}

/// Join of the clock of every version at its tail integration. Not part of
/// the protocol; it bounds everything that may legitimately be visible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PvcTracker {
    pub pvc: VectorClock,
}

impl PvcTracker {
    pub fn new(n: usize) -> Self {
        PvcTracker {
            pvc: VectorClock::zero(n),
        }
    }

    pub fn observe(&mut self, e: &Event) {
        if let Event::TailIntegrate { vc, .. } = e {
            if vc.width() == self.pvc.width() {
                self.pvc.merge_assign(vc);
            }
        }
    }
}

/// Cluster width inferred from the first clock in a trace.
pub fn trace_width(trace: &crate::trace::Trace) -> Option<usize> {
    trace.iter().find_map(|e| match &e.event {
        Event::ClientWriteReply { vc, .. }
        | Event::TailIntegrate { vc, .. }
        | Event::MissFetch { vc, .. }
        | Event::PropagateSend { vc, .. } => Some(vc.width()),
        Event::BatchCommit { writes, .. } => writes.first().map(|w| w.vc.width()),
        _ => None,
    })
}
