//! The per-server state machine: client handlers, the global vector clock
//! and the two-round propagation chain.
//!
//! Handlers never block and never wait for a reply. Each one mutates the
//! local state and returns the messages, store writes and events it
//! produced; delivering them is the caller's business.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::{CCache, CacheDump, ClosureRule, ICache, TccCCache, VisibleHalf, DEFAULT_RING_CAPACITY};
use crate::clock::VectorClock;
use crate::error::ServerError;
use crate::store::Store;
use crate::version::{Deps, Key, Value, Version, VersionedValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PropagationMode {
    #[default]
    TwoRound,
    /// One round only, with same-key versions treated as implicit
    /// dependencies. Unsafe; kept to reproduce the anomaly it causes.
    SingleRoundBuggy,
}

impl PropagationMode {
    /// Hop number at which a propagated write reaches its tail.
    pub fn tail_hop(self, n: usize) -> usize {
        match self {
            PropagationMode::TwoRound => 2 * n - 2,
            PropagationMode::SingleRoundBuggy => n.saturating_sub(2),
        }
    }

    pub fn closure_rule(self) -> ClosureRule {
        match self {
            PropagationMode::TwoRound => ClosureRule::Dominated,
            PropagationMode::SingleRoundBuggy => ClosureRule::NotNewer,
        }
    }

    fn inserts_at(self, hop: usize, n: usize) -> bool {
        match self {
            PropagationMode::TwoRound => hop + 1 < n,
            PropagationMode::SingleRoundBuggy => hop < self.tail_hop(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FlushMode {
    /// Store writes are applied before the client is acknowledged.
    #[default]
    Synchronous,
    /// Store writes are queued and drained later by the harness.
    AsyncLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub propagation_mode: PropagationMode,
    /// After tail integration, tell every other server to integrate the
    /// write as well.
    pub tail_disseminate: bool,
    pub flush_mode: FlushMode,
    pub ring_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            propagation_mode: PropagationMode::TwoRound,
            tail_disseminate: false,
            flush_mode: FlushMode::Synchronous,
            ring_capacity: DEFAULT_RING_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagateMsg {
    pub origin: usize,
    /// 0 when delivered to the origin's successor.
    pub hop: usize,
    pub version: Version,
}

impl PropagateMsg {
    /// The server this message is addressed to.
    pub fn destination(&self, n: usize) -> usize {
        (self.origin + self.hop + 1) % n
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeerMessage {
    Propagate(PropagateMsg),
    IntegrateHint { key: Key, vc: VectorClock },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outgoing {
    pub from: usize,
    pub to: usize,
    pub msg: PeerMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerEvent {
    /// The write finished its propagation chain at this server.
    TailIntegrate { version: Version, hop: usize },
    /// A store value was copied into the cache under a fresh clock.
    MissFetch { key: Key, value: Value, vc: VectorClock },
    /// Versions moved from the I-cache into the visible cache.
    Integrated { versions: Vec<(Key, VectorClock)> },
}

/// Everything a handler asks its environment to do.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Effects {
    pub outgoing: Vec<Outgoing>,
    pub store_writes: Vec<Version>,
    pub events: Vec<ServerEvent>,
}

impl Effects {
    pub fn extend(&mut self, other: Effects) {
        self.outgoing.extend(other.outgoing);
        self.store_writes.extend(other.store_writes);
        self.events.extend(other.events);
    }

    pub fn store_reads(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, ServerEvent::MissFetch { .. }))
            .count()
    }

    fn integrated(&mut self, moved: Vec<Version>) {
        if !moved.is_empty() {
            self.events.push(ServerEvent::Integrated {
                versions: moved.into_iter().map(|v| (v.key, v.vc)).collect(),
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadReply {
    /// Served from the C-cache. Safe to record as a dependency.
    Hit(VersionedValue),
    /// Not yet known to be everywhere: either a copy of a store value or an
    /// earlier such copy still in the I-cache. Recorded client-side only.
    Fetched(VersionedValue),
    NotFound,
}

impl ReadReply {
    pub fn value(&self) -> Option<&VersionedValue> {
        match self {
            ReadReply::Hit(v) | ReadReply::Fetched(v) => Some(v),
            ReadReply::NotFound => None,
        }
    }
}

/// The servers a write visits: `2n` entries starting at its origin. The
/// last one is the tail.
pub fn chain_of(origin: usize, n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| (origin + i) % n).collect()
}

pub fn successor(id: usize, n: usize) -> usize {
    (id + 1) % n
}

/// The server where writes originating at `origin` finish their chain.
pub fn tail_of(origin: usize, n: usize) -> usize {
    (origin + n - 1) % n
}

#[derive(Debug, Clone)]
pub struct ServerState<C> {
    id: usize,
    n: usize,
    gvc: VectorClock,
    visible: C,
    icache: ICache,
    config: ServerConfig,
    /// Store copies this server made, by key.
    copies: BTreeMap<Key, VectorClock>,
}

pub type Server = ServerState<CCache>;
pub type TccServer = ServerState<TccCCache>;

impl Server {
    pub fn new(id: usize, n: usize, config: ServerConfig) -> Self {
        ServerState::with_cache(id, n, config, CCache::new())
    }
}

impl TccServer {
    pub fn new_tcc(id: usize, n: usize, config: ServerConfig) -> Self {
        ServerState::with_cache(id, n, config, TccCCache::new(config.ring_capacity))
    }
}

impl<C: VisibleHalf> ServerState<C> {
    pub fn with_cache(id: usize, n: usize, config: ServerConfig, visible: C) -> Self {
        assert!(n >= 1 && id < n, "server {id} outside a cluster of {n}");
        ServerState {
            id,
            n,
            gvc: VectorClock::zero(n),
            visible,
            icache: ICache::new(),
            config,
            copies: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gvc(&self) -> &VectorClock {
        &self.gvc
    }

    pub fn visible(&self) -> &C {
        &self.visible
    }

    pub fn icache(&self) -> &ICache {
        &self.icache
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn dump(&self) -> CacheDump {
        CacheDump::capture(&self.visible, &self.icache)
    }

    fn rule(&self) -> ClosureRule {
        self.config.propagation_mode.closure_rule()
    }

    pub(crate) fn integrate(&mut self, deps: &Deps) -> Result<Vec<Version>, ServerError> {
        let rule = self.rule();
        Ok(self.visible.integrate_from(&mut self.icache, &mut self.gvc, deps, rule)?)
    }

    /// Integrates `deps` and records what moved in `fx`.
    pub(crate) fn integrate_into(&mut self, deps: &Deps, fx: &mut Effects) -> Result<(), ServerError> {
        let moved = self.integrate(deps)?;
        fx.integrated(moved);
        Ok(())
    }

    /// Assigns the next clock after merging `deps`, files the version in the
    /// I-cache and starts its propagation chain.
    pub(crate) fn originate(&mut self, key: &str, value: Value, deps: Deps, fx: &mut Effects) -> VectorClock {
        for (_, d) in deps.iter() {
            self.gvc.merge_assign(d);
        }
        self.gvc
            .increment_assign(self.id)
            .expect("id is in range");
        let vc = self.gvc.clone();
        let version = Version::new(key, value, vc.clone(), deps);
        self.icache.insert(version.clone());
        fx.store_writes.push(version.clone());
        fx.outgoing.push(Outgoing {
            from: self.id,
            to: successor(self.id, self.n),
            msg: PeerMessage::Propagate(PropagateMsg {
                origin: self.id,
                hop: 0,
                version,
            }),
        });
        vc
    }

    /// `local` holds the clocks of the session's own recent writes (and
    /// fetched copies); they become dependencies of the new version.
    pub fn handle_client_write(
        &mut self,
        key: &str,
        value: impl Into<Value>,
        deps: &Deps,
        local: &Deps,
    ) -> (VectorClock, Effects) {
        let mut fx = Effects::default();
        let all = deps.merged(local);
        let vc = self.originate(key, value.into(), all, &mut fx);
        (vc, fx)
    }

    /// Serves `key` once dependencies are integrated and nothing visible
    /// holds it.
    ///
    /// Only cold store data (never written through the cache, so at the zero
    /// clock) is copied in. A warm key that is not visible here has writes in
    /// flight whose dependencies may be missing; it reads as absent until it
    /// is integrated. A second miss on the same key reuses the pending copy.
    pub(crate) fn fetch(&mut self, key: &str, store: &Store, fx: &mut Effects) -> ReadReply {
        if let Some(vc) = self.copies.get(key) {
            if let Some(v) = self.icache.versions(key).iter().find(|v| &v.vc == vc) {
                return ReadReply::Fetched(v.versioned_value());
            }
        }
        let Some(stored) = store.try_get(key) else {
            return ReadReply::NotFound;
        };
        if stored.vc.entries().iter().any(|&e| e != 0) {
            return ReadReply::NotFound;
        }
        let value = stored.value.clone();
        let vc = self.originate(key, value.clone(), Deps::new(), fx);
        self.copies.insert(key.to_owned(), vc.clone());
        fx.events.push(ServerEvent::MissFetch {
            key: key.to_owned(),
            value: value.clone(),
            vc: vc.clone(),
        });
        ReadReply::Fetched(VersionedValue::new(value, vc))
    }

    /// Handles one propagation hop.
    pub fn handle_server_write(&mut self, msg: PropagateMsg) -> Result<Effects, ServerError> {
        let mode = self.config.propagation_mode;
        let tail = mode.tail_hop(self.n);
        if msg.hop > tail {
            return Err(ServerError::HopOutOfRange { hop: msg.hop, n: self.n });
        }
        let mut fx = Effects::default();
        if msg.hop < tail {
            if mode.inserts_at(msg.hop, self.n) {
                self.icache.insert(msg.version.clone());
            }
            fx.outgoing.push(Outgoing {
                from: self.id,
                to: successor(self.id, self.n),
                msg: PeerMessage::Propagate(PropagateMsg {
                    hop: msg.hop + 1,
                    ..msg
                }),
            });
            return Ok(fx);
        }

        // Closing over the version itself also brings in every earlier
        // version of the key its clock covers.
        let v = msg.version;
        self.icache.insert(v.clone());
        let moved = self.integrate(&v.deps.clone().with(v.key.clone(), &v.vc))?;
        if self.config.tail_disseminate {
            for to in (0..self.n).filter(|&j| j != self.id) {
                fx.outgoing.push(Outgoing {
                    from: self.id,
                    to,
                    msg: PeerMessage::IntegrateHint {
                        key: v.key.clone(),
                        vc: v.vc.clone(),
                    },
                });
            }
        }
        log::trace!("server {} tail-integrated {}@{}", self.id, v.key, v.vc);
        fx.events.push(ServerEvent::TailIntegrate { version: v, hop: msg.hop });
        fx.integrated(moved);
        Ok(fx)
    }

    pub fn handle_peer(&mut self, msg: PeerMessage) -> Result<Effects, ServerError> {
        match msg {
            PeerMessage::Propagate(p) => self.handle_server_write(p),
            PeerMessage::IntegrateHint { key, vc } => {
                let mut fx = Effects::default();
                self.integrate_into(&Deps::new().with(key, &vc), &mut fx)?;
                Ok(fx)
            }
        }
    }
}

impl Server {
    /// Integrates `deps`, then reads `key`.
    pub fn handle_client_read(
        &mut self,
        key: &str,
        deps: &Deps,
        store: &Store,
    ) -> Result<(ReadReply, Effects), ServerError> {
        let mut fx = Effects::default();
        self.integrate_into(deps, &mut fx)?;
        let reply = self.read_after_integration(key, store, &mut fx);
        Ok((reply, fx))
    }

    fn read_after_integration(&mut self, key: &str, store: &Store, fx: &mut Effects) -> ReadReply {
        match self.visible.get(key) {
            Some(v) => ReadReply::Hit(v.clone()),
            None => self.fetch(key, store, fx),
        }
    }

    /// One integration, then every key is read from the same cut. Keys that
    /// are not visible go through the fetch path individually.
    pub fn handle_client_read_txn(
        &mut self,
        keys: &[Key],
        deps: &Deps,
        store: &Store,
    ) -> Result<(Vec<(Key, ReadReply)>, Effects), ServerError> {
        let mut fx = Effects::default();
        self.integrate_into(deps, &mut fx)?;
        let replies = keys
            .iter()
            .map(|k| (k.clone(), self.read_after_integration(k, store, &mut fx)))
            .collect();
        Ok((replies, fx))
    }
}
