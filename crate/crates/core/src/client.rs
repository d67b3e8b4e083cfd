//! Workflow-side sessions.
//!
//! A session travels with a workflow from function to function (and from
//! server to server). Reads served from a C-cache go into `deps`; the
//! session's own writes, and fetched values that are not yet known to be
//! everywhere, go into `local` and are only ever sent as write dependencies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::VectorClock;
use crate::error::SessionError;
use crate::server::{Effects, ReadReply, Server, TccServer};
use crate::store::Store;
use crate::tcc::{ReadSet, TccReadReply};
use crate::version::{resolve, Deps, Key, Value, VersionedValue};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalEntry {
    #[serde(flatten)]
    pub version: VersionedValue,
    /// Join of the clocks of this session's own writes to the key, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub written: Option<VectorClock>,
}

impl LocalEntry {
    pub fn is_own_write(&self) -> bool {
        self.written.is_some()
    }

    fn merge(&mut self, other: &LocalEntry) {
        self.version = resolve(&self.version, &other.version);
        self.written = match (self.written.take(), &other.written) {
            (Some(mut a), Some(b)) => {
                a.merge_assign(b);
                Some(a)
            }
            (a, b) => a.or_else(|| b.clone()),
        };
    }
}

/// Outcome of a read from the session's point of view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observed {
    pub key: Key,
    /// The value returned to the application, after merging with `local`.
    pub value: VersionedValue,
    /// The clock the server returned, before the local merge.
    pub served: VectorClock,
    pub fetched: bool,
}

/// A read transaction either returns every key or is aborted as a whole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxnOutcome {
    Committed(Vec<(Key, Option<Observed>)>),
    /// The server's cut predates one of the session's own writes to `key`.
    Abort { key: Key },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientSession {
    pub workflow: u64,
    pub deps: Deps,
    pub local: BTreeMap<Key, LocalEntry>,
    /// Server that accepted the most recent write; its predecessor in the
    /// ring is where that write finishes propagating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_write_origin: Option<usize>,
}

impl ClientSession {
    pub fn new(workflow: u64) -> Self {
        ClientSession {
            workflow,
            ..ClientSession::default()
        }
    }

    /// Clocks of all `local` entries, sent along with writes.
    pub fn local_deps(&self) -> Deps {
        self.local.iter().map(|(k, e)| (k.clone(), e.version.vc.clone())).collect()
    }

    fn merge_local(&mut self, key: &str, entry: LocalEntry) {
        match self.local.get_mut(key) {
            Some(cur) => cur.merge(&entry),
            None => {
                self.local.insert(key.to_owned(), entry);
            }
        }
    }

    /// Records the clock assigned to a write by server `server`.
    pub fn apply_write(&mut self, key: &str, value: impl Into<Value>, vc: VectorClock, server: usize) {
        self.last_write_origin = Some(server);
        let entry = LocalEntry {
            version: VersionedValue::new(value, vc.clone()),
            written: Some(vc),
        };
        self.merge_local(key, entry);
    }

    /// Folds a read reply into the session. `None` when the key does not
    /// exist anywhere and the session never wrote it.
    pub fn apply_read(&mut self, key: &str, reply: &ReadReply) -> Option<Observed> {
        let (served, fetched) = match reply {
            ReadReply::Hit(v) => {
                self.deps.add(key, &v.vc);
                (v.clone(), false)
            }
            ReadReply::Fetched(v) => {
                self.merge_local(
                    key,
                    LocalEntry {
                        version: v.clone(),
                        written: None,
                    },
                );
                (v.clone(), true)
            }
            ReadReply::NotFound => {
                return self.local.get(key).map(|e| Observed {
                    key: key.to_owned(),
                    value: e.version.clone(),
                    served: e.version.vc.clone(),
                    fetched: false,
                })
            }
        };
        let value = match self.local.get(key) {
            Some(e) => resolve(&e.version, &served),
            None => served.clone(),
        };
        Some(Observed {
            key: key.to_owned(),
            value,
            served: served.vc,
            fetched,
        })
    }

    /// Whether a transaction reply must be aborted. Only the session's own
    /// writes can be newer than a server's cut.
    pub fn txn_conflict(&self, replies: &[(Key, ReadReply)]) -> Option<Key> {
        replies.iter().find_map(|(k, r)| {
            let ReadReply::Hit(v) = r else { return None };
            let written = self.local.get(k)?.written.as_ref()?;
            (!written.dominated_by(&v.vc)).then(|| k.clone())
        })
    }

    pub fn apply_read_txn(&mut self, replies: &[(Key, ReadReply)]) -> TxnOutcome {
        if let Some(key) = self.txn_conflict(replies) {
            return TxnOutcome::Abort { key };
        }
        TxnOutcome::Committed(replies.iter().map(|(k, r)| (k.clone(), self.apply_read(k, r))).collect())
    }

    /// Copy for a parallel branch.
    pub fn fork(&self) -> ClientSession {
        self.clone()
    }

    /// Merges a finished branch back in.
    pub fn join(&mut self, branch: &ClientSession) {
        self.deps.merge(&branch.deps);
        for (k, e) in &branch.local {
            self.merge_local(k, e.clone());
        }
        if self.last_write_origin.is_none() {
            self.last_write_origin = branch.last_write_origin;
        }
    }

    /// Canonical JSON encoding carried across function migrations.
    pub fn migrate(&self) -> String {
        serde_json::to_string(self).expect("session serializes")
    }

    pub fn resume(blob: &str) -> Result<ClientSession, SessionError> {
        Ok(serde_json::from_str(blob)?)
    }

    pub fn read(&mut self, ep: &mut impl Endpoint, key: &str) -> Result<Option<Observed>, SessionError> {
        let reply = ep.read(key, &self.deps)?;
        Ok(self.apply_read(key, &reply))
    }

    pub fn write(&mut self, ep: &mut impl Endpoint, key: &str, value: impl Into<Value>) -> Result<VectorClock, SessionError> {
        let value = value.into();
        let vc = ep.write(key, value.clone(), &self.deps, &self.local_deps())?;
        self.apply_write(key, value, vc.clone(), ep.server_id());
        Ok(vc)
    }

    pub fn read_txn(&mut self, ep: &mut impl Endpoint, keys: &[Key]) -> Result<TxnOutcome, SessionError> {
        let replies = ep.read_txn(keys, &self.deps)?;
        Ok(self.apply_read_txn(&replies))
    }
}

/// Outcome of a transactional read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TccRead {
    Value(Option<Value>),
    Abort,
}

/// Where a transactional read was answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TccSource {
    WriteBuffer,
    ReadSet,
    Server,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TccSession {
    pub session: ClientSession,
    pub write_buffer: Vec<(Key, Value)>,
    pub readset: ReadSet,
}

impl TccSession {
    pub fn new(workflow: u64) -> Self {
        TccSession {
            session: ClientSession::new(workflow),
            ..TccSession::default()
        }
    }

    pub fn write(&mut self, key: &str, value: impl Into<Value>) {
        self.write_buffer.push((key.to_owned(), value.into()));
    }

    /// Answers from the write buffer or the read set without a server call.
    pub fn read_locally(&self, key: &str) -> Option<(TccSource, Value)> {
        if let Some((_, v)) = self.write_buffer.iter().rev().find(|(k, _)| k == key) {
            return Some((TccSource::WriteBuffer, v.clone()));
        }
        self.readset.get(key).map(|v| (TccSource::ReadSet, v.value.clone()))
    }

    pub fn apply_tcc_read(&mut self, key: &str, reply: &TccReadReply) -> TccRead {
        match reply {
            TccReadReply::Found(v) => {
                self.session.deps.add(key, &v.vc);
                self.readset.insert(v.clone());
                TccRead::Value(Some(v.value.clone()))
            }
            TccReadReply::Fetched(v) => {
                self.session.merge_local(
                    key,
                    LocalEntry {
                        version: v.versioned_value(),
                        written: None,
                    },
                );
                self.readset.insert(v.clone());
                TccRead::Value(Some(v.value.clone()))
            }
            TccReadReply::NotFound => TccRead::Value(None),
            TccReadReply::Abort => TccRead::Abort,
        }
    }

    /// Records the clocks assigned to the flushed buffer.
    pub fn apply_commit(&mut self, clocks: &[VectorClock], server: usize) {
        let batch = std::mem::take(&mut self.write_buffer);
        for ((k, v), vc) in batch.into_iter().zip(clocks) {
            self.session.apply_write(&k, v, vc.clone(), server);
        }
    }

    pub fn read(&mut self, ep: &mut impl Endpoint, key: &str) -> Result<(TccSource, TccRead), SessionError> {
        if let Some((src, v)) = self.read_locally(key) {
            return Ok((src, TccRead::Value(Some(v))));
        }
        let reply = ep.read_tcc(key, &self.session.deps, &self.readset)?;
        Ok((TccSource::Server, self.apply_tcc_read(key, &reply)))
    }

    pub fn commit(&mut self, ep: &mut impl Endpoint) -> Result<Vec<VectorClock>, SessionError> {
        if self.write_buffer.is_empty() {
            return Ok(Vec::new());
        }
        let clocks = ep.batch_write(&self.write_buffer, &self.session.deps, &self.session.local_deps())?;
        self.apply_commit(&clocks, ep.server_id());
        Ok(clocks)
    }
}

/// A connection to one cache server.
pub trait Endpoint {
    fn server_id(&self) -> usize;
    fn write(&mut self, key: &str, value: Value, deps: &Deps, local: &Deps) -> Result<VectorClock, SessionError>;
    fn read(&mut self, key: &str, deps: &Deps) -> Result<ReadReply, SessionError>;
    fn read_txn(&mut self, keys: &[Key], deps: &Deps) -> Result<Vec<(Key, ReadReply)>, SessionError>;
    fn read_tcc(&mut self, key: &str, deps: &Deps, readset: &ReadSet) -> Result<TccReadReply, SessionError>;
    fn batch_write(&mut self, batch: &[(Key, Value)], deps: &Deps, local: &Deps) -> Result<Vec<VectorClock>, SessionError>;
}

/// In-process endpoint over a server and a store. Effects that leave the
/// server are collected in `outbox`; store writes are applied immediately.
pub struct LocalEndpoint<'a, S> {
    pub server: &'a mut S,
    pub store: &'a mut Store,
    pub outbox: Effects,
}

impl<'a, S> LocalEndpoint<'a, S> {
    pub fn new(server: &'a mut S, store: &'a mut Store) -> Self {
        LocalEndpoint {
            server,
            store,
            outbox: Effects::default(),
        }
    }

    fn absorb(&mut self, fx: Effects) -> Result<(), SessionError> {
        for v in &fx.store_writes {
            self.store.put(v.clone()).map_err(|e| SessionError::Transport(e.to_string()))?;
        }
        self.outbox.extend(fx);
        Ok(())
    }
}

fn unsupported(what: &str) -> SessionError {
    SessionError::Transport(format!("{what} is not supported by this server"))
}

impl Endpoint for LocalEndpoint<'_, Server> {
    fn server_id(&self) -> usize {
        self.server.id()
    }

    fn write(&mut self, key: &str, value: Value, deps: &Deps, local: &Deps) -> Result<VectorClock, SessionError> {
        let (vc, fx) = self.server.handle_client_write(key, value, deps, local);
        self.absorb(fx)?;
        Ok(vc)
    }

    fn read(&mut self, key: &str, deps: &Deps) -> Result<ReadReply, SessionError> {
        let (r, fx) = self.server.handle_client_read(key, deps, self.store)?;
        self.absorb(fx)?;
        Ok(r)
    }

    fn read_txn(&mut self, keys: &[Key], deps: &Deps) -> Result<Vec<(Key, ReadReply)>, SessionError> {
        let (r, fx) = self.server.handle_client_read_txn(keys, deps, self.store)?;
        self.absorb(fx)?;
        Ok(r)
    }

    fn read_tcc(&mut self, _: &str, _: &Deps, _: &ReadSet) -> Result<TccReadReply, SessionError> {
        Err(unsupported("transactional read"))
    }

    fn batch_write(&mut self, batch: &[(Key, Value)], deps: &Deps, local: &Deps) -> Result<Vec<VectorClock>, SessionError> {
        let (c, fx) = self.server.handle_batch_write(batch, deps, local)?;
        self.absorb(fx)?;
        Ok(c)
    }
}

impl Endpoint for LocalEndpoint<'_, TccServer> {
    fn server_id(&self) -> usize {
        self.server.id()
    }

    fn write(&mut self, key: &str, value: Value, deps: &Deps, local: &Deps) -> Result<VectorClock, SessionError> {
        let (vc, fx) = self.server.handle_client_write(key, value, deps, local);
        self.absorb(fx)?;
        Ok(vc)
    }

    fn read(&mut self, _: &str, _: &Deps) -> Result<ReadReply, SessionError> {
        Err(unsupported("plain read"))
    }

    fn read_txn(&mut self, _: &[Key], _: &Deps) -> Result<Vec<(Key, ReadReply)>, SessionError> {
        Err(unsupported("read transaction"))
    }

    fn read_tcc(&mut self, key: &str, deps: &Deps, readset: &ReadSet) -> Result<TccReadReply, SessionError> {
        let (r, fx) = self.server.handle_client_read_tcc(key, deps, readset, self.store)?;
        self.absorb(fx)?;
        Ok(r)
    }

    fn batch_write(&mut self, batch: &[(Key, Value)], deps: &Deps, local: &Deps) -> Result<Vec<VectorClock>, SessionError> {
        let (c, fx) = self.server.handle_batch_write(batch, deps, local)?;
        self.absorb(fx)?;
        Ok(c)
    }
}
