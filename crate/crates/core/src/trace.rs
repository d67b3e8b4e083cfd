//! Execution traces: what clients asked, what servers answered and how
//! writes moved through the chain. The checker consumes these.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::VectorClock;
use crate::error::TraceError;
use crate::version::{Deps, Key, Value};

pub type SessionId = u64;
pub type WorkflowId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnItem {
    pub key: Key,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    /// Clock observed after merging with the session's local entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vc: Option<VectorClock>,
    /// See [`Event::ClientReadReply`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub served: Option<VectorClock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub key: Key,
    pub value: Value,
    pub vc: VectorClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadSource {
    Server,
    WriteBuffer,
    ReadSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    /// A read transaction's cut predates the session's own write to `key`.
    ReadTxnOwnWrite { key: Key },
    /// No buffered version of `key` fits the workflow's read set.
    TccIncompatible { key: Key },
    /// Parallel branches read incompatible versions.
    ParallelValidation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Event {
    WorkflowStart {
        workflow: WorkflowId,
        session: SessionId,
        attempt: u32,
    },
    WorkflowEnd {
        workflow: WorkflowId,
        session: SessionId,
        committed: bool,
    },
    SessionFork {
        parent: SessionId,
        child: SessionId,
    },
    SessionJoin {
        parent: SessionId,
        child: SessionId,
    },
    ClientWriteReq {
        session: SessionId,
        server: usize,
        key: Key,
        value: Value,
    },
    ClientWriteReply {
        session: SessionId,
        server: usize,
        key: Key,
        vc: VectorClock,
    },
    ClientReadReq {
        session: SessionId,
        server: usize,
        key: Key,
        deps: Deps,
    },
    ClientReadReply {
        session: SessionId,
        server: usize,
        key: Key,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
        /// Clock observed after merging with the session's local entries.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vc: Option<VectorClock>,
        /// Clock of the cached version the server answered with, when the
        /// read was a cache hit. Only hits expose other sessions' writes.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        served: Option<VectorClock>,
        #[serde(default)]
        fetched: bool,
    },
    ReadTxnReq {
        session: SessionId,
        server: usize,
        keys: Vec<Key>,
        deps: Deps,
    },
    ReadTxnReply {
        session: SessionId,
        server: usize,
        items: Vec<TxnItem>,
    },
    TccReadReq {
        session: SessionId,
        server: usize,
        key: Key,
        deps: Deps,
    },
    TccReadReply {
        session: SessionId,
        server: usize,
        key: Key,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vc: Option<VectorClock>,
        source: ReadSource,
    },
    BatchCommit {
        session: SessionId,
        server: usize,
        writes: Vec<BatchItem>,
    },
    Abort {
        session: SessionId,
        workflow: WorkflowId,
        #[serde(flatten)]
        reason: AbortReason,
    },
    PropagateSend {
        from: usize,
        to: usize,
        origin: usize,
        hop: usize,
        key: Key,
        vc: VectorClock,
    },
    PropagateDeliver {
        from: usize,
        to: usize,
        origin: usize,
        hop: usize,
        key: Key,
        vc: VectorClock,
    },
    TailIntegrate {
        server: usize,
        origin: usize,
        hop: usize,
        key: Key,
        vc: VectorClock,
    },
    /// Versions a server moved into its visible cache in one step.
    Integrated {
        server: usize,
        versions: Vec<(Key, VectorClock)>,
    },
    MissFetch {
        server: usize,
        key: Key,
        value: Value,
        vc: VectorClock,
    },
    /// A handler rejected its input. Never expected outside the unsafe
    /// single-round mode.
    ProtocolFault {
        server: usize,
        message: String,
    },
}

impl Event {
    /// The session an event belongs to, if any.
    pub fn session(&self) -> Option<SessionId> {
        use Event::*;
        match self {
            WorkflowStart { session, .. }
            | WorkflowEnd { session, .. }
            | ClientWriteReq { session, .. }
            | ClientWriteReply { session, .. }
            | ClientReadReq { session, .. }
            | ClientReadReply { session, .. }
            | ReadTxnReq { session, .. }
            | ReadTxnReply { session, .. }
            | TccReadReq { session, .. }
            | TccReadReply { session, .. }
            | BatchCommit { session, .. }
            | Abort { session, .. } => Some(*session),
            SessionFork { child, .. } | SessionJoin { child, .. } => Some(*child),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Logical time.
    pub t: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Events in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, t: u64, event: Event) {
        self.events.push(TraceEvent { t, event });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    /// The events at `indices`, in the given order.
    pub fn subsequence(&self, indices: &[usize]) -> Trace {
        Trace {
            events: indices.iter().map(|&i| self.events[i].clone()).collect(),
        }
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(r: impl Read) -> Result<Trace, TraceError> {
        let mut events = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
            events.push(e);
        }
        Ok(Trace { events })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
        Trace::read_jsonl(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut t = Trace::new();
        t.push(
            3,
            Event::ClientReadReply {
                session: 1,
                server: 0,
                key: "x".into(),
                value: Some("v".into()),
                vc: Some(VectorClock::from([1, 0])),
                served: None,
                fetched: false,
            },
        );
        t.push(
            4,
            Event::Abort {
                session: 1,
                workflow: 2,
                reason: AbortReason::ReadTxnOwnWrite { key: "y".into() },
            },
        );
        let text = t.to_jsonl();
        assert!(text.starts_with(r#"{"t":3,"type":"ClientReadReply""#));
        let back = Trace::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = Trace::read_jsonl("{\"t\":1,\"type\":\"Nope\"}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
    }
}
