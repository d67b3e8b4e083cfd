//! Drives a scripted workload against a TCP cluster and records a trace.
//!
//! Only linear, non-transactional workflows are supported. Logical times in
//! the script (`not_before`) are scaled by `tick`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use causalmesh::client::{ClientSession, TxnOutcome};
use causalmesh::server::{tail_of, ReadReply};
use causalmesh::trace::{AbortReason, Event, SessionId, Trace, TxnItem};
use causalmesh::workload::{Op, Workload, WorkflowDag};
use causalmesh::{Key, Value};

use crate::net::TcpEndpoint;

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub peers: Vec<String>,
    pub tick: Duration,
    pub poll_interval: Duration,
    pub max_polls: u32,
    pub max_txn_retries: u32,
    pub connect_attempts: u32,
}

impl ClientOptions {
    pub fn new(peers: Vec<String>) -> Self {
        ClientOptions {
            peers,
            tick: Duration::from_millis(10),
            poll_interval: Duration::from_millis(20),
            max_polls: 500,
            max_txn_retries: 100,
            connect_attempts: 40,
        }
    }
}

struct Recorder {
    start: Instant,
    trace: Mutex<Trace>,
}

impl Recorder {
    fn emit(&self, e: Event) {
        let t = self.start.elapsed().as_millis() as u64;
        self.trace.lock().expect("recorder lock").push(t, e);
    }
}

fn linear_order(dag: &WorkflowDag) -> anyhow::Result<()> {
    let chain = (1..dag.functions.len()).all(|i| dag.predecessors(i) == [i - 1]) && dag.edges.len() + 1 == dag.functions.len();
    if !chain {
        bail!("the network client only runs linear workflows");
    }
    Ok(())
}

pub fn run_client(workload: &Workload, opts: &ClientOptions) -> anyhow::Result<Trace> {
    if workload.tcc {
        bail!("the network client does not run transactional workloads");
    }
    if !workload.preload.is_empty() {
        log::warn!("preloaded keys are ignored by the network client");
    }
    for d in &workload.workflows {
        d.validate()?;
        linear_order(d)?;
    }
    let rec = Arc::new(Recorder {
        start: Instant::now(),
        trace: Mutex::new(Trace::new()),
    });
    let handles: Vec<_> = workload
        .workflows
        .iter()
        .cloned()
        .enumerate()
        .map(|(wf, dag)| {
            let rec = rec.clone();
            let opts = opts.clone();
            thread::spawn(move || run_workflow(wf, wf as SessionId + 1, &dag, &opts, &rec))
        })
        .collect();
    for h in handles {
        h.join().map_err(|_| anyhow::anyhow!("workflow thread panicked"))??;
    }
    let rec = Arc::try_unwrap(rec).map_err(|_| anyhow::anyhow!("recorder still shared"))?;
    Ok(rec.trace.into_inner().expect("recorder lock"))
}

struct Conns<'a> {
    opts: &'a ClientOptions,
    open: BTreeMap<usize, TcpEndpoint>,
}

impl Conns<'_> {
    fn get(&mut self, server: usize) -> anyhow::Result<&mut TcpEndpoint> {
        if !self.open.contains_key(&server) {
            let addr = self.opts.peers.get(server).with_context(|| format!("no server {server}"))?;
            let ep = TcpEndpoint::connect(server, addr, self.opts.connect_attempts)?;
            self.open.insert(server, ep);
        }
        Ok(self.open.get_mut(&server).expect("just opened"))
    }
}

fn hit_clock(r: &ReadReply) -> Option<causalmesh::VectorClock> {
    match r {
        ReadReply::Hit(v) => Some(v.vc.clone()),
        _ => None,
    }
}

fn run_workflow(wf: usize, session: SessionId, dag: &WorkflowDag, opts: &ClientOptions, rec: &Recorder) -> anyhow::Result<()> {
    let n = opts.peers.len();
    let mut conns = Conns { opts, open: BTreeMap::new() };
    let mut sess = ClientSession::new(wf as u64);
    rec.emit(Event::WorkflowStart {
        workflow: wf as u64,
        session,
        attempt: 0,
    });
    let mut committed = true;
    for (i, f) in dag.functions.iter().enumerate() {
        let due = opts.tick * f.not_before.unwrap_or(0) as u32;
        if let Some(wait) = due.checked_sub(rec.start.elapsed()) {
            thread::sleep(wait);
        }
        let server = f.server.unwrap_or((wf + i) % n);
        for op in &f.ops {
            committed &= run_op(op, session, server, &mut sess, &mut conns, rec)?;
        }
    }
    rec.emit(Event::WorkflowEnd {
        workflow: wf as u64,
        session,
        committed,
    });
    Ok(())
}

fn run_op(op: &Op, session: SessionId, server: usize, sess: &mut ClientSession, conns: &mut Conns, rec: &Recorder) -> anyhow::Result<bool> {
    let opts = conns.opts;
    match op {
        Op::Write { key, value } => {
            rec.emit(Event::ClientWriteReq {
                session,
                server,
                key: key.clone(),
                value: value.clone(),
            });
            let vc = sess.write(conns.get(server)?, key, value.clone())?;
            rec.emit(Event::ClientWriteReply {
                session,
                server,
                key: key.clone(),
                vc,
            });
        }
        Op::Read { key } | Op::ReadUntil { key, .. } => {
            let until: Option<&Option<Value>> = match op {
                Op::ReadUntil { value, .. } => Some(value),
                _ => None,
            };
            for poll in 0.. {
                rec.emit(Event::ClientReadReq {
                    session,
                    server,
                    key: key.clone(),
                    deps: sess.deps.clone(),
                });
                let reply = causalmesh::client::Endpoint::read(conns.get(server)?, key, &sess.deps)?;
                let obs = sess.apply_read(key, &reply);
                let value = obs.as_ref().map(|o| o.value.value.clone());
                rec.emit(Event::ClientReadReply {
                    session,
                    server,
                    key: key.clone(),
                    value: value.clone(),
                    vc: obs.map(|o| o.value.vc),
                    served: hit_clock(&reply),
                    fetched: matches!(reply, ReadReply::Fetched(_)),
                });
                let done = match (until, &value) {
                    (None, _) => true,
                    (Some(_), None) => false,
                    (Some(None), Some(_)) => true,
                    (Some(Some(want)), Some(got)) => want == got,
                };
                if done {
                    break;
                }
                if poll >= opts.max_polls {
                    return Ok(false);
                }
                thread::sleep(opts.poll_interval);
            }
        }
        Op::ReadTxn { keys } => {
            let mut target = server;
            for retry in 0.. {
                rec.emit(Event::ReadTxnReq {
                    session,
                    server: target,
                    keys: keys.clone(),
                    deps: sess.deps.clone(),
                });
                let replies = causalmesh::client::Endpoint::read_txn(conns.get(target)?, keys, &sess.deps)?;
                match sess.apply_read_txn(&replies) {
                    TxnOutcome::Committed(items) => {
                        let items = items
                            .into_iter()
                            .zip(&replies)
                            .map(|((key, o), (_, r)): ((Key, _), _)| TxnItem {
                                key,
                                value: o.as_ref().map(|o| o.value.value.clone()),
                                vc: o.map(|o| o.value.vc),
                                served: hit_clock(r),
                            })
                            .collect();
                        rec.emit(Event::ReadTxnReply {
                            session,
                            server: target,
                            items,
                        });
                        break;
                    }
                    TxnOutcome::Abort { key } => {
                        rec.emit(Event::Abort {
                            session,
                            workflow: sess.workflow,
                            reason: AbortReason::ReadTxnOwnWrite { key },
                        });
                        if retry >= opts.max_txn_retries {
                            return Ok(false);
                        }
                        target = tail_of(sess.last_write_origin.unwrap_or(target), opts.peers.len());
                        thread::sleep(opts.poll_interval);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Per session, what the application saw: write clocks and read results in
/// order, with each run of polls on one key reduced to its final answer.
pub fn client_view(trace: &Trace) -> BTreeMap<SessionId, Vec<String>> {
    let mut out: BTreeMap<SessionId, Vec<(Option<Key>, String)>> = BTreeMap::new();
    for e in trace.iter() {
        let (session, key, line) = match &e.event {
            Event::ClientWriteReply { session, key, vc, .. } => (*session, None, format!("write {key} {vc}")),
            Event::ClientReadReply { session, key, value, vc, .. } => {
                let v = value.as_ref().map(|v| String::from_utf8_lossy(v.as_bytes()).into_owned());
                let c = vc.as_ref().map(|c| c.to_string());
                (*session, Some(key.clone()), format!("read {key} {v:?} {c:?}"))
            }
            Event::ReadTxnReply { session, items, .. } => {
                let parts: Vec<String> = items.iter().map(|i| format!("{}:{:?}", i.key, i.vc)).collect();
                (*session, None, format!("txn {}", parts.join(",")))
            }
            _ => continue,
        };
        let lines = out.entry(session).or_default();
        if key.is_some() && lines.last().is_some_and(|(k, _)| k == &key) {
            lines.pop();
        }
        lines.push((key, line));
    }
    out.into_iter()
        .map(|(s, ls)| (s, ls.into_iter().map(|(_, l)| l).collect()))
        .collect()
}
