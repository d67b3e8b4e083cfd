use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BaselineMode, BaselineServer, EventQueue, RoamingPolicy, SimConfig, SimOutput, SimStats, Snapshots};
use crate::checker::{check_state, PvcTracker, Violation, ViolationKind};
use crate::client::{ClientSession, TccRead, TccSession, TxnOutcome};
use crate::clock::VectorClock;
use crate::error::{ServerError, SimError};
use crate::server::{tail_of, Effects, PeerMessage, ReadReply, Server, ServerEvent, TccServer};
use crate::store::Store;
use crate::tcc::{validate_parallel, ReadSet, TccReadReply};
use crate::trace::{AbortReason, BatchItem, Event, ReadSource, SessionId, Trace, TxnItem};
use crate::version::{Key, Value, Version};
use crate::workload::{Op, Workload};

const MAX_POLLS: u32 = 10_000;
const MAX_TXN_RETRIES: u32 = 100;
/// Attempts per workflow under TCC, counting the first.
const MAX_ATTEMPTS: u32 = 10;

enum Node {
    Mesh(Server),
    Tcc(TccServer),
    Baseline(BaselineServer),
}

enum Wire {
    Peer(PeerMessage),
    Replicate(Version),
}

enum Item {
    Begin { wf: usize },
    Start { wf: usize, attempt: u32, func: usize },
    Issue { wf: usize, attempt: u32, func: usize },
    Arrive { wf: usize, attempt: u32, func: usize },
    Deliver { from: usize, to: usize, msg: Wire },
}

#[derive(Clone)]
enum Sess {
    Cc(ClientSession),
    Tcc(TccSession),
}

struct FnRun {
    server: usize,
    ops: Vec<Op>,
    pc: usize,
    session: SessionId,
    polls: u32,
    retries: u32,
    committing: bool,
}

#[derive(Default)]
struct WfRun {
    attempt: u32,
    fns: BTreeMap<usize, FnRun>,
    joins: BTreeMap<usize, Vec<(usize, SessionId)>>,
    sticky: Option<usize>,
    failed: bool,
}

/// One simulation run. Build with [`Simulation::new`], consume with
/// [`Simulation::run`].
pub struct Simulation {
    cfg: SimConfig,
    workload: Workload,
    nodes: Vec<Node>,
    store: Store,
    queue: EventQueue<Item>,
    rng: ChaCha8Rng,
    now: u64,
    trace: Trace,
    pvc: PvcTracker,
    sessions: BTreeMap<SessionId, Sess>,
    next_session: SessionId,
    wfs: Vec<WfRun>,
    rr: usize,
    stats: SimStats,
    state_violations: Vec<Violation>,
    reported: BTreeSet<(ViolationKind, Option<usize>, Option<Key>)>,
}

/// Runs `workload` under `cfg` to quiescence.
pub fn run(cfg: &SimConfig, workload: &Workload) -> Result<SimOutput, SimError> {
    Simulation::new(cfg.clone(), workload.clone())?.run()
}

impl Simulation {
    pub fn new(cfg: SimConfig, workload: Workload) -> Result<Self, SimError> {
        let n = cfg.n;
        if n == 0 {
            return Err(SimError::Config("need at least one server".into()));
        }
        if cfg.delay_range.0 > cfg.delay_range.1 {
            return Err(SimError::Config(format!("empty delay range {:?}", cfg.delay_range)));
        }
        for f in &cfg.faults {
            if f.link.0 >= n || f.link.1 >= n {
                return Err(SimError::Config(format!("fault on link {:?} outside {n} servers", f.link)));
            }
        }
        for (i, dag) in workload.workflows.iter().enumerate() {
            dag.validate()
                .map_err(|e| SimError::Config(format!("workflow {i}: {e}")))?;
            if let Some(s) = dag.functions.iter().filter_map(|f| f.server).find(|&s| s >= n) {
                return Err(SimError::Config(format!("workflow {i} pinned to server {s} of {n}")));
            }
        }
        let scfg = cfg.server_config();
        let nodes = (0..n)
            .map(|i| match (cfg.baseline_mode, workload.tcc) {
                (BaselineMode::EventualBaseline, _) => Node::Baseline(BaselineServer::new(i, n)),
                (BaselineMode::CausalMesh, false) => Node::Mesh(Server::new(i, n, scfg)),
                (BaselineMode::CausalMesh, true) => Node::Tcc(TccServer::new_tcc(i, n, scfg)),
            })
            .collect();
        let mut store = Store::new();
        for (k, v) in &workload.preload {
            store
                .put(Version::new(k.clone(), v.clone(), VectorClock::zero(n), Default::default()))
                .expect("in-memory store");
        }
        let mut queue = EventQueue::default();
        for wf in 0..workload.workflows.len() {
            queue.push(wf as u64 * cfg.arrival_interval, Item::Begin { wf });
        }
        let wfs = workload.workflows.iter().map(|_| WfRun::default()).collect();
        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            pvc: PvcTracker::new(n),
            stats: SimStats {
                workflows: workload.workflows.len(),
                ..SimStats::default()
            },
            cfg,
            workload,
            nodes,
            store,
            queue,
            now: 0,
            trace: Trace::new(),
            sessions: BTreeMap::new(),
            next_session: 1,
            wfs,
            rr: 0,
            state_violations: Vec::new(),
            reported: BTreeSet::new(),
        })
    }

    pub fn run(mut self) -> Result<SimOutput, SimError> {
        while let Some((t, item)) = self.queue.pop() {
            self.now = t;
            self.stats.steps += 1;
            if self.stats.steps > self.cfg.max_steps {
                return Err(SimError::StepBudgetExhausted(self.cfg.max_steps));
            }
            self.step(item);
            if let Some(k) = self.cfg.state_check_every {
                if k > 0 && self.stats.steps % k as u64 == 0 {
                    self.sample_state();
                }
            }
        }
        self.stats.end_time = self.now;
        let servers = self.dumps();
        Ok(SimOutput {
            trace: self.trace,
            snapshots: Snapshots {
                servers,
                store: self.store.snapshot(),
            },
            state_violations: self.state_violations,
            stats: self.stats,
        })
    }

    fn dumps(&self) -> Vec<crate::cache::CacheDump> {
        self.nodes
            .iter()
            .map(|node| match node {
                Node::Mesh(s) => s.dump(),
                Node::Tcc(s) => s.dump(),
                Node::Baseline(b) => b.dump(),
            })
            .collect()
    }

    fn sample_state(&mut self) {
        if self.cfg.baseline_mode == BaselineMode::EventualBaseline {
            return;
        }
        self.stats.state_samples += 1;
        for mut v in check_state(&self.dumps(), &self.pvc.pvc) {
            if self.reported.insert((v.kind, v.server, v.key.clone())) {
                v.at = Some(self.stats.steps as usize);
                self.state_violations.push(v);
            }
        }
    }

    fn delay(&mut self) -> u64 {
        let (lo, hi) = self.cfg.delay_range;
        self.rng.random_range(lo..=hi)
    }

    fn emit(&mut self, e: Event) {
        self.pvc.observe(&e);
        self.trace.push(self.now, e);
    }

    fn fault(&mut self, server: usize, e: ServerError) {
        log::warn!("t={} server {server}: {e}", self.now);
        self.stats.protocol_faults += 1;
        self.emit(Event::ProtocolFault {
            server,
            message: e.to_string(),
        });
    }

    fn new_session(&mut self, s: Sess) -> SessionId {
        let id = self.next_session;
        self.next_session += 1;
        self.sessions.insert(id, s);
        id
    }

    fn fn_run(&mut self, wf: usize, func: usize) -> &mut FnRun {
        self.wfs[wf].fns.get_mut(&func).expect("function is running")
    }

    fn step(&mut self, item: Item) {
        match item {
            Item::Begin { wf } => self.begin(wf),
            Item::Deliver { from, to, msg } => self.deliver(from, to, msg),
            Item::Start { wf, attempt, func } if attempt == self.wfs[wf].attempt => {
                let server = self.place(wf, func);
                self.fn_run(wf, func).server = server;
                self.issue(wf, func);
            }
            Item::Issue { wf, attempt, func } if attempt == self.wfs[wf].attempt => self.issue(wf, func),
            Item::Arrive { wf, attempt, func } if attempt == self.wfs[wf].attempt => self.arrive(wf, func),
            _ => {}
        }
    }

    fn begin(&mut self, wf: usize) {
        let sess = if self.workload.tcc {
            Sess::Tcc(TccSession::new(wf as u64))
        } else {
            Sess::Cc(ClientSession::new(wf as u64))
        };
        let session = self.new_session(sess);
        let attempt = self.wfs[wf].attempt;
        let run = &mut self.wfs[wf];
        run.fns.clear();
        run.joins.clear();
        self.emit(Event::WorkflowStart {
            workflow: wf as u64,
            session,
            attempt,
        });
        self.schedule_start(wf, 0, session);
    }

    fn place(&mut self, wf: usize, func: usize) -> usize {
        let n = self.cfg.n;
        if let Some(s) = self.workload.workflows[wf].functions[func].server {
            return s;
        }
        match self.cfg.roaming_policy {
            RoamingPolicy::RoundRobin => {
                let s = self.rr % n;
                self.rr += 1;
                s
            }
            RoamingPolicy::UniformRandom => self.rng.random_range(0..n),
            RoamingPolicy::Sticky => match self.wfs[wf].sticky {
                Some(s) => s,
                None => {
                    let s = self.rng.random_range(0..n);
                    self.wfs[wf].sticky = Some(s);
                    s
                }
            },
        }
    }

    fn schedule_start(&mut self, wf: usize, func: usize, session: SessionId) {
        let spec = &self.workload.workflows[wf].functions[func];
        let ops = if self.workload.tcc {
            spec.ops
                .iter()
                .flat_map(|op| match op {
                    Op::ReadTxn { keys } => keys.iter().map(|k| Op::Read { key: k.clone() }).collect(),
                    other => vec![other.clone()],
                })
                .collect()
        } else {
            spec.ops.clone()
        };
        let t = spec.not_before.map_or(self.now, |nb| nb.max(self.now));
        let run = &mut self.wfs[wf];
        run.fns.insert(
            func,
            FnRun {
                server: 0,
                ops,
                pc: 0,
                session,
                polls: 0,
                retries: 0,
                committing: false,
            },
        );
        let attempt = run.attempt;
        self.queue.push(t, Item::Start { wf, attempt, func });
    }

    fn schedule(&mut self, delay: u64, item: Item) {
        self.queue.push(self.now + delay, item);
    }

    /// Sends the function's next request, or finishes the function.
    fn issue(&mut self, wf: usize, func: usize) {
        let attempt = self.wfs[wf].attempt;
        loop {
            let fr = self.fn_run(wf, func);
            let (server, sid) = (fr.server, fr.session);
            let Some(op) = fr.ops.get(fr.pc).cloned() else {
                let is_sink = self.workload.workflows[wf].successors(func).is_empty();
                let pending = matches!(self.sessions.get(&sid), Some(Sess::Tcc(t)) if !t.write_buffer.is_empty());
                if is_sink && pending {
                    self.fn_run(wf, func).committing = true;
                    let d = self.delay();
                    self.schedule(d, Item::Arrive { wf, attempt, func });
                } else {
                    self.finish_function(wf, func);
                }
                return;
            };
            if let Some(Sess::Tcc(t)) = self.sessions.get_mut(&sid) {
                let key = match op {
                    Op::Write { key, value } => {
                        t.write(&key, value);
                        self.fn_run(wf, func).pc += 1;
                        continue;
                    }
                    Op::Read { key } | Op::ReadUntil { key, .. } => key,
                    Op::ReadTxn { .. } => unreachable!("expanded at function start"),
                };
                if let Some((src, value)) = t.read_locally(&key) {
                    let (source, vc) = match src {
                        crate::client::TccSource::WriteBuffer => (ReadSource::WriteBuffer, None),
                        _ => (ReadSource::ReadSet, t.readset.clock(&key).cloned()),
                    };
                    self.emit(Event::TccReadReply {
                        session: sid,
                        server,
                        key,
                        value: Some(value),
                        vc,
                        source,
                    });
                    self.fn_run(wf, func).pc += 1;
                    continue;
                }
                let deps = t.session.deps.clone();
                self.emit(Event::TccReadReq {
                    session: sid,
                    server,
                    key,
                    deps,
                });
            } else {
                let deps = match self.sessions.get(&sid) {
                    Some(Sess::Cc(s)) if self.cfg.baseline_mode == BaselineMode::CausalMesh => s.deps.clone(),
                    _ => Default::default(),
                };
                let e = match op {
                    Op::Write { key, value } => Event::ClientWriteReq {
                        session: sid,
                        server,
                        key,
                        value,
                    },
                    Op::Read { key } | Op::ReadUntil { key, .. } => Event::ClientReadReq {
                        session: sid,
                        server,
                        key,
                        deps,
                    },
                    Op::ReadTxn { keys } => Event::ReadTxnReq {
                        session: sid,
                        server,
                        keys,
                        deps,
                    },
                };
                self.emit(e);
            }
            let d = self.delay();
            self.schedule(d, Item::Arrive { wf, attempt, func });
            return;
        }
    }

    /// Moves to the next op after a reply.
    fn advance(&mut self, wf: usize, func: usize, extra: u64) {
        let attempt = self.wfs[wf].attempt;
        let fr = self.fn_run(wf, func);
        fr.pc += 1;
        fr.polls = 0;
        fr.retries = 0;
        let d = self.delay() + extra;
        self.schedule(d, Item::Issue { wf, attempt, func });
    }

    fn poll_again(&mut self, wf: usize, func: usize) -> bool {
        let attempt = self.wfs[wf].attempt;
        let fr = self.fn_run(wf, func);
        if fr.polls >= MAX_POLLS {
            return false;
        }
        fr.polls += 1;
        self.schedule(self.cfg.poll_interval, Item::Issue { wf, attempt, func });
        true
    }

    /// A request reaches its server and is handled atomically.
    fn arrive(&mut self, wf: usize, func: usize) {
        let fr = self.fn_run(wf, func);
        let (server, sid, committing) = (fr.server, fr.session, fr.committing);
        let op = fr.ops.get(fr.pc).cloned();
        match &self.nodes[server] {
            Node::Mesh(_) => self.arrive_mesh(wf, func, server, sid, op.expect("op pending")),
            Node::Tcc(_) if committing => self.commit_tcc(wf, func, server, sid),
            Node::Tcc(_) => self.arrive_tcc(wf, func, server, sid, op.expect("op pending")),
            Node::Baseline(_) => self.arrive_baseline(wf, func, server, sid, op.expect("op pending")),
        }
    }

    fn arrive_mesh(&mut self, wf: usize, func: usize, server: usize, sid: SessionId, op: Op) {
        let store_latency = self.cfg.store_latency;
        let Node::Mesh(s) = &mut self.nodes[server] else { unreachable!() };
        let Some(Sess::Cc(sess)) = self.sessions.get_mut(&sid) else {
            unreachable!("mesh sessions are plain")
        };
        let until = match &op {
            Op::ReadUntil { value, .. } => Some(value.clone()),
            _ => None,
        };
        match op {
            Op::Write { key, value } => {
                let (vc, fx) = s.handle_client_write(&key, value.clone(), &sess.deps, &sess.local_deps());
                sess.apply_write(&key, value, vc.clone(), server);
                self.emit(Event::ClientWriteReply {
                    session: sid,
                    server,
                    key,
                    vc,
                });
                self.apply_effects(server, fx);
                self.advance(wf, func, 0);
            }
            Op::Read { key } | Op::ReadUntil { key, .. } => match s.handle_client_read(&key, &sess.deps, &self.store) {
                Err(e) => {
                    self.fault(server, e);
                    self.advance(wf, func, 0);
                }
                Ok((reply, fx)) => {
                    let obs = sess.apply_read(&key, &reply);
                    let extra = if fx.store_reads() > 0 { store_latency } else { 0 };
                    let value = obs.as_ref().map(|o| o.value.value.clone());
                    self.emit(Event::ClientReadReply {
                        session: sid,
                        server,
                        key,
                        value: value.clone(),
                        vc: obs.map(|o| o.value.vc),
                        served: hit_clock(&reply),
                        fetched: matches!(reply, ReadReply::Fetched(_)),
                    });
                    self.apply_effects(server, fx);
                    if !satisfied(&until, &value) && self.poll_again(wf, func) {
                        return;
                    }
                    self.advance(wf, func, extra);
                }
            },
            Op::ReadTxn { keys } => match s.handle_client_read_txn(&keys, &sess.deps, &self.store) {
                Err(e) => {
                    self.fault(server, e);
                    self.advance(wf, func, 0);
                }
                Ok((replies, fx)) => {
                    let outcome = sess.apply_read_txn(&replies);
                    let last_origin = sess.last_write_origin;
                    let extra = if fx.store_reads() > 0 { store_latency } else { 0 };
                    match outcome {
                        TxnOutcome::Abort { key } => {
                            self.emit(Event::Abort {
                                session: sid,
                                workflow: wf as u64,
                                reason: AbortReason::ReadTxnOwnWrite { key },
                            });
                            self.apply_effects(server, fx);
                            self.stats.txn_aborts += 1;
                            self.retry_txn(wf, func, tail_of(last_origin.unwrap_or(server), self.cfg.n));
                        }
                        TxnOutcome::Committed(items) => {
                            let items = items
                                .into_iter()
                                .zip(&replies)
                                .map(|((key, o), (_, reply))| TxnItem {
                                    key,
                                    value: o.as_ref().map(|o| o.value.value.clone()),
                                    vc: o.map(|o| o.value.vc),
                                    served: hit_clock(reply),
                                })
                                .collect();
                            self.emit(Event::ReadTxnReply {
                                session: sid,
                                server,
                                items,
                            });
                            self.apply_effects(server, fx);
                            self.advance(wf, func, extra);
                        }
                    }
                }
            },
        }
    }

    /// Re-sends an aborted read transaction to `target`, where the write it
    /// was waiting for becomes visible first.
    fn retry_txn(&mut self, wf: usize, func: usize, target: usize) {
        let attempt = self.wfs[wf].attempt;
        let poll = self.cfg.poll_interval;
        let fr = self.fn_run(wf, func);
        if fr.retries >= MAX_TXN_RETRIES {
            self.wfs[wf].failed = true;
            self.advance(wf, func, 0);
            return;
        }
        fr.retries += 1;
        fr.server = target;
        self.schedule(poll, Item::Issue { wf, attempt, func });
    }

    fn arrive_tcc(&mut self, wf: usize, func: usize, server: usize, sid: SessionId, op: Op) {
        let store_latency = self.cfg.store_latency;
        let Node::Tcc(s) = &mut self.nodes[server] else { unreachable!() };
        let Some(Sess::Tcc(t)) = self.sessions.get_mut(&sid) else {
            unreachable!("tcc sessions are transactional")
        };
        let (key, until) = match op {
            Op::Read { key } => (key, None),
            Op::ReadUntil { key, value } => (key, Some(value)),
            _ => unreachable!("only reads reach a server before commit"),
        };
        match s.handle_client_read_tcc(&key, &t.session.deps, &t.readset, &self.store) {
            Err(e) => {
                self.fault(server, e);
                self.advance(wf, func, 0);
            }
            Ok((reply, fx)) => {
                let vc = match &reply {
                    TccReadReply::Found(v) | TccReadReply::Fetched(v) => Some(v.vc.clone()),
                    _ => None,
                };
                let outcome = t.apply_tcc_read(&key, &reply);
                let extra = if fx.store_reads() > 0 { store_latency } else { 0 };
                match outcome {
                    TccRead::Abort => {
                        self.emit(Event::Abort {
                            session: sid,
                            workflow: wf as u64,
                            reason: AbortReason::TccIncompatible { key },
                        });
                        self.apply_effects(server, fx);
                        self.abort_workflow(wf, sid);
                    }
                    TccRead::Value(value) => {
                        self.emit(Event::TccReadReply {
                            session: sid,
                            server,
                            key,
                            value: value.clone(),
                            vc,
                            source: ReadSource::Server,
                        });
                        self.apply_effects(server, fx);
                        if !satisfied(&until, &value) && self.poll_again(wf, func) {
                            return;
                        }
                        self.advance(wf, func, extra);
                    }
                }
            }
        }
    }

    fn commit_tcc(&mut self, wf: usize, func: usize, server: usize, sid: SessionId) {
        let attempt = self.wfs[wf].attempt;
        let Node::Tcc(s) = &mut self.nodes[server] else { unreachable!() };
        let Some(Sess::Tcc(t)) = self.sessions.get_mut(&sid) else {
            unreachable!("tcc sessions are transactional")
        };
        match s.handle_batch_write(&t.write_buffer, &t.session.deps, &t.session.local_deps()) {
            Err(e) => {
                t.write_buffer.clear();
                self.wfs[wf].failed = true;
                self.fault(server, e);
            }
            Ok((clocks, fx)) => {
                let writes = t
                    .write_buffer
                    .iter()
                    .zip(&clocks)
                    .map(|((key, value), vc)| BatchItem {
                        key: key.clone(),
                        value: value.clone(),
                        vc: vc.clone(),
                    })
                    .collect();
                t.apply_commit(&clocks, server);
                self.emit(Event::BatchCommit {
                    session: sid,
                    server,
                    writes,
                });
                self.apply_effects(server, fx);
            }
        }
        self.fn_run(wf, func).committing = false;
        let d = self.delay();
        self.schedule(d, Item::Issue { wf, attempt, func });
    }

    fn arrive_baseline(&mut self, wf: usize, func: usize, server: usize, sid: SessionId, op: Op) {
        let Node::Baseline(b) = &mut self.nodes[server] else { unreachable!() };
        match op {
            Op::Write { key, value } => {
                let (v, peers) = b.write(&key, value);
                self.emit(Event::ClientWriteReply {
                    session: sid,
                    server,
                    key,
                    vc: v.vc.clone(),
                });
                for p in peers {
                    self.send(server, p, Wire::Replicate(v.clone()));
                }
                self.advance(wf, func, 0);
            }
            Op::Read { ref key } | Op::ReadUntil { ref key, .. } => {
                let got = b.read(key).cloned();
                let value = got.as_ref().map(|v| v.value.clone());
                self.emit(Event::ClientReadReply {
                    session: sid,
                    server,
                    key: key.clone(),
                    value: value.clone(),
                    served: got.as_ref().map(|v| v.vc.clone()),
                    vc: got.map(|v| v.vc),
                    fetched: false,
                });
                let until = match op {
                    Op::ReadUntil { value, .. } => Some(value),
                    _ => None,
                };
                if !satisfied(&until, &value) && self.poll_again(wf, func) {
                    return;
                }
                self.advance(wf, func, 0);
            }
            Op::ReadTxn { keys } => {
                let items = keys
                    .into_iter()
                    .map(|key| {
                        let got = b.read(&key);
                        TxnItem {
                            value: got.map(|v| v.value.clone()),
                            vc: got.map(|v| v.vc.clone()),
                            served: got.map(|v| v.vc.clone()),
                            key,
                        }
                    })
                    .collect();
                self.emit(Event::ReadTxnReply {
                    session: sid,
                    server,
                    items,
                });
                self.advance(wf, func, 0);
            }
        }
    }

    fn finish_function(&mut self, wf: usize, func: usize) {
        let sid = self.fn_run(wf, func).session;
        let succs = self.workload.workflows[wf].successors(func);
        if succs.is_empty() {
            let committed = !self.wfs[wf].failed;
            if committed {
                self.stats.committed += 1;
            }
            self.emit(Event::WorkflowEnd {
                workflow: wf as u64,
                session: sid,
                committed,
            });
            return;
        }
        if let [succ] = succs[..] {
            self.arrive_at(wf, succ, func, sid);
            return;
        }
        for (i, succ) in succs.into_iter().enumerate() {
            let mut copy = self.sessions[&sid].clone();
            if let Sess::Tcc(t) = &mut copy {
                // Buffered writes travel with the first branch only, so the
                // join does not duplicate them.
                if i > 0 {
                    t.write_buffer.clear();
                }
            }
            let child = self.new_session(copy);
            self.emit(Event::SessionFork { parent: sid, child });
            self.arrive_at(wf, succ, func, child);
        }
    }

    /// Hands a finished predecessor's session to `succ`, joining branches
    /// once every predecessor is done.
    fn arrive_at(&mut self, wf: usize, succ: usize, pred: usize, sid: SessionId) {
        let preds = self.workload.workflows[wf].predecessors(succ);
        if preds.len() == 1 {
            self.schedule_start(wf, succ, sid);
            return;
        }
        let arrived = self.wfs[wf].joins.entry(succ).or_default();
        arrived.push((pred, sid));
        if arrived.len() < preds.len() {
            return;
        }
        let mut arrived = self.wfs[wf].joins.remove(&succ).expect("just filled");
        arrived.sort_unstable();
        let parent = arrived[0].1;
        if self.workload.tcc {
            let sets: Vec<ReadSet> = arrived
                .iter()
                .map(|(_, s)| match &self.sessions[s] {
                    Sess::Tcc(t) => t.readset.clone(),
                    Sess::Cc(_) => unreachable!(),
                })
                .collect();
            if !validate_parallel(&sets) {
                self.emit(Event::Abort {
                    session: parent,
                    workflow: wf as u64,
                    reason: AbortReason::ParallelValidation,
                });
                self.abort_workflow(wf, parent);
                return;
            }
        }
        for &(_, child) in &arrived[1..] {
            let c = self.sessions[&child].clone();
            match (self.sessions.get_mut(&parent).expect("live session"), c) {
                (Sess::Cc(p), Sess::Cc(c)) => p.join(&c),
                (Sess::Tcc(p), Sess::Tcc(c)) => {
                    p.session.join(&c.session);
                    for v in c.readset.iter() {
                        p.readset.insert(v.clone());
                    }
                    p.write_buffer.extend(c.write_buffer);
                }
                _ => unreachable!("one workflow, one session kind"),
            }
            self.emit(Event::SessionJoin { parent, child });
        }
        self.schedule_start(wf, succ, parent);
    }

    /// Drops the current attempt and, within the attempt limit, starts the
    /// workflow again with a fresh session.
    fn abort_workflow(&mut self, wf: usize, sid: SessionId) {
        self.stats.tcc_aborts += 1;
        self.emit(Event::WorkflowEnd {
            workflow: wf as u64,
            session: sid,
            committed: false,
        });
        let run = &mut self.wfs[wf];
        run.attempt += 1;
        run.fns.clear();
        run.joins.clear();
        if run.attempt < MAX_ATTEMPTS {
            self.schedule(self.cfg.poll_interval, Item::Begin { wf });
        }
    }

    fn send(&mut self, from: usize, to: usize, msg: Wire) {
        let meta = match &msg {
            Wire::Peer(PeerMessage::Propagate(p)) => Some((p.origin, p.hop, &p.version)),
            Wire::Replicate(v) => Some((from, 0, v)),
            Wire::Peer(_) => None,
        };
        if let Some((origin, hop, v)) = meta {
            let e = Event::PropagateSend {
                from,
                to,
                origin,
                hop,
                key: v.key.clone(),
                vc: v.vc.clone(),
            };
            self.emit(e);
        }
        let d = self.delay();
        self.queue
            .push_on_link((from, to), self.now, d, &self.cfg.faults, Item::Deliver { from, to, msg });
    }

    fn deliver(&mut self, from: usize, to: usize, msg: Wire) {
        let meta = match &msg {
            Wire::Peer(PeerMessage::Propagate(p)) => Some((p.origin, p.hop, &p.version)),
            Wire::Replicate(v) => Some((from, 0, v)),
            Wire::Peer(_) => None,
        };
        if let Some((origin, hop, v)) = meta {
            self.stats.deliveries += 1;
            let e = Event::PropagateDeliver {
                from,
                to,
                origin,
                hop,
                key: v.key.clone(),
                vc: v.vc.clone(),
            };
            self.emit(e);
        }
        let result = match (&mut self.nodes[to], msg) {
            (Node::Mesh(s), Wire::Peer(m)) => s.handle_peer(m),
            (Node::Tcc(s), Wire::Peer(m)) => s.handle_peer(m),
            (Node::Baseline(b), Wire::Replicate(v)) => {
                b.apply(v);
                Ok(Effects::default())
            }
            _ => unreachable!("message kind matches node kind"),
        };
        match result {
            Ok(fx) => self.apply_effects(to, fx),
            Err(e) => self.fault(to, e),
        }
    }

    fn apply_effects(&mut self, server: usize, fx: Effects) {
        let n = self.cfg.n;
        for v in fx.store_writes {
            self.store.put(v).expect("in-memory store");
        }
        for e in fx.events {
            let e = match e {
                ServerEvent::TailIntegrate { version, hop } => Event::TailIntegrate {
                    server,
                    origin: (server + n - (hop + 1) % n) % n,
                    hop,
                    key: version.key,
                    vc: version.vc,
                },
                ServerEvent::MissFetch { key, value, vc } => Event::MissFetch { server, key, value, vc },
                ServerEvent::Integrated { versions } => Event::Integrated { server, versions },
            };
            self.emit(e);
        }
        for o in fx.outgoing {
            self.send(o.from, o.to, Wire::Peer(o.msg));
        }
    }
}

fn hit_clock(reply: &ReadReply) -> Option<VectorClock> {
    match reply {
        ReadReply::Hit(v) => Some(v.vc.clone()),
        _ => None,
    }
}

fn satisfied(until: &Option<Option<Value>>, got: &Option<Value>) -> bool {
    match (until, got) {
        (None, _) => true,
        (Some(_), None) => false,
        (Some(None), Some(_)) => true,
        (Some(Some(want)), Some(v)) => want == v,
    }
}
