//! Session guarantees: read-your-writes, monotonic reads, writes-follow-reads
//! and monotonic writes, plus client-side cut coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{Violation, ViolationKind};
use crate::clock::VectorClock;
use crate::trace::{Event, ReadSource, SessionId, Trace};
use crate::version::{Deps, Key};

struct WriteRec {
    vc: VectorClock,
    own: Arc<Deps>,
    observed: Arc<Deps>,
    mw: Arc<Deps>,
    wfr: Arc<Deps>,
}

/// What a session's history requires of its next reads, split by the
/// guarantee each requirement comes from.
#[derive(Clone, Default)]
struct SessionState {
    /// Own writes.
    own: Arc<Deps>,
    /// Clocks returned by earlier reads.
    observed: Arc<Deps>,
    /// Writes that preceded, in their writer's session, a write this
    /// session observed.
    mw: Arc<Deps>,
    /// Everything else in the causal past of an observed write.
    wfr: Arc<Deps>,
    absorbed: BTreeSet<usize>,
}

fn join_into(target: &mut Arc<Deps>, src: &Arc<Deps>) {
    if Arc::ptr_eq(target, src) || src.is_empty() || target.covers(src) {
        return;
    }
    Arc::make_mut(target).merge(src);
}

fn add(target: &mut Arc<Deps>, key: &str, vc: &VectorClock) {
    if target.get(key).is_some_and(|c| vc.dominated_by(c)) {
        return;
    }
    Arc::make_mut(target).add(key, vc);
}

impl SessionState {
    fn merge(&mut self, other: &SessionState) {
        join_into(&mut self.own, &other.own);
        join_into(&mut self.observed, &other.observed);
        join_into(&mut self.mw, &other.mw);
        join_into(&mut self.wfr, &other.wfr);
        self.absorbed.extend(other.absorbed.iter().copied());
    }
}

#[derive(Default)]
struct Scanner {
    sessions: BTreeMap<SessionId, SessionState>,
    writes: Vec<WriteRec>,
    by_key: BTreeMap<Key, Vec<usize>>,
    violations: Vec<Violation>,
}

impl Scanner {
    fn session(&mut self, id: SessionId) -> &mut SessionState {
        self.sessions.entry(id).or_default()
    }

    fn record_write(&mut self, session: Option<SessionId>, key: &str, vc: &VectorClock) {
        let rec = match session {
            Some(s) => {
                let st = self.session(s);
                let rec = WriteRec {
                    vc: vc.clone(),
                    own: st.own.clone(),
                    observed: st.observed.clone(),
                    mw: st.mw.clone(),
                    wfr: st.wfr.clone(),
                };
                add(&mut st.own, key, vc);
                rec
            }
            None => WriteRec {
                vc: vc.clone(),
                own: Arc::default(),
                observed: Arc::default(),
                mw: Arc::default(),
                wfr: Arc::default(),
            },
        };
        self.by_key.entry(key.to_owned()).or_default().push(self.writes.len());
        self.writes.push(rec);
    }

    /// `vc` is what the application got back; `served` is the cache-hit
    /// clock through which other sessions' writes are observed.
    fn record_read(
        &mut self,
        at: usize,
        session: SessionId,
        server: usize,
        key: &str,
        vc: Option<&VectorClock>,
        served: Option<&VectorClock>,
    ) {
        let st = self.sessions.entry(session).or_default();
        let reqs = [
            (ViolationKind::ReadYourWrites, st.own.get(key)),
            (ViolationKind::MonotonicReads, st.observed.get(key)),
            (ViolationKind::MonotonicWrites, st.mw.get(key)),
            (ViolationKind::WritesFollowReads, st.wfr.get(key)),
        ];
        let failed = reqs
            .into_iter()
            .find_map(|(kind, req)| req.filter(|r| !vc.is_some_and(|c| r.dominated_by(c))).map(|r| (kind, r.clone())));
        if let Some((kind, required)) = failed {
            let got = vc.map_or("nothing".to_owned(), |c| c.to_string());
            self.violations.push(Violation {
                kind,
                session: Some(session),
                server: Some(server),
                key: Some(key.to_owned()),
                at: Some(at),
                detail: format!("read {key} returned {got}, session requires at least {required}"),
                witness: vec![at],
            });
        }
        if let Some(c) = vc {
            add(&mut st.observed, key, c);
        }
        let Some(c) = served else { return };
        for &w in self.by_key.get(key).into_iter().flatten() {
            let rec = &self.writes[w];
            if !rec.vc.dominated_by(c) || !st.absorbed.insert(w) {
                continue;
            }
            join_into(&mut st.mw, &rec.own);
            join_into(&mut st.wfr, &rec.observed);
            join_into(&mut st.wfr, &rec.mw);
            join_into(&mut st.wfr, &rec.wfr);
        }
    }

    fn step(&mut self, at: usize, e: &Event) {
        match e {
            Event::WorkflowStart { session, .. } => {
                self.sessions.entry(*session).or_default();
            }
            Event::SessionFork { parent, child } => {
                let st = self.sessions.get(parent).cloned().unwrap_or_default();
                self.sessions.insert(*child, st);
            }
            Event::SessionJoin { parent, child } => {
                if let Some(st) = self.sessions.get(child).cloned() {
                    self.session(*parent).merge(&st);
                }
            }
            Event::ClientWriteReply { session, key, vc, .. } => self.record_write(Some(*session), key, vc),
            Event::BatchCommit { session, writes, .. } => {
                for w in writes {
                    self.record_write(Some(*session), &w.key, &w.vc);
                }
            }
            Event::MissFetch { key, vc, .. } => self.record_write(None, key, vc),
            Event::ClientReadReply {
                session,
                server,
                key,
                vc,
                served,
                ..
            } => self.record_read(at, *session, *server, key, vc.as_ref(), served.as_ref()),
            // A buffered own write has no clock until the batch commits.
            Event::TccReadReply {
                source: ReadSource::WriteBuffer,
                ..
            } => {}
            Event::TccReadReply {
                session, server, key, vc, ..
            } => self.record_read(at, *session, *server, key, vc.as_ref(), vc.as_ref()),
            Event::ReadTxnReply { session, server, items } => {
                for it in items {
                    self.record_read(at, *session, *server, &it.key, it.vc.as_ref(), it.served.as_ref());
                }
            }
            _ => {}
        }
    }
}

/// Scans client operations for violations of the four session guarantees.
/// Each offending read is reported once, under the first failing guarantee
/// in the order read-your-writes, monotonic reads, monotonic writes,
/// writes-follow-reads. Causality is followed transitively through
/// observed writes and session forks/joins.
pub fn check_sessions(trace: &Trace) -> Vec<Violation> {
    let mut sc = Scanner::default();
    for (i, e) in trace.events.iter().enumerate() {
        sc.step(i, &e.event);
    }
    sc.violations
}

/// Per session, the key-wise snapshot formed by what it has read and
/// written must only grow: a later read may not return an older or missing
/// version of a key already in the snapshot.
pub fn check_cut_coverage(trace: &Trace) -> Vec<Violation> {
    let mut snaps: BTreeMap<SessionId, Deps> = BTreeMap::new();
    let mut out = Vec::new();
    let mut read = |snaps: &mut BTreeMap<SessionId, Deps>, at: usize, s: SessionId, key: &Key, vc: Option<&VectorClock>| {
        let snap = snaps.entry(s).or_default();
        if let Some(prev) = snap.get(key) {
            if !vc.is_some_and(|c| prev.dominated_by(c)) {
                let mut v = Violation::new(
                    ViolationKind::CutCoverage,
                    format!("snapshot held {key}@{prev}, read returned {vc:?}"),
                );
                v.session = Some(s);
                v.key = Some(key.clone());
                v.at = Some(at);
                v.witness = vec![at];
                out.push(v);
            }
        }
        if let Some(c) = vc {
            snap.add(key.clone(), c);
        }
    };
    for (i, e) in trace.events.iter().enumerate() {
        match &e.event {
            Event::SessionFork { parent, child } => {
                let s = snaps.get(parent).cloned().unwrap_or_default();
                snaps.insert(*child, s);
            }
            Event::SessionJoin { parent, child } => {
                let s = snaps.get(child).cloned().unwrap_or_default();
                snaps.entry(*parent).or_default().merge(&s);
            }
            Event::ClientWriteReply { session, key, vc, .. } => {
                snaps.entry(*session).or_default().add(key.clone(), vc);
            }
            Event::BatchCommit { session, writes, .. } => {
                let snap = snaps.entry(*session).or_default();
                for w in writes {
                    snap.add(w.key.clone(), &w.vc);
                }
            }
            Event::TccReadReply {
                source: ReadSource::WriteBuffer,
                ..
            } => {}
            Event::ClientReadReply { session, key, vc, .. } | Event::TccReadReply { session, key, vc, .. } => {
                read(&mut snaps, i, *session, key, vc.as_ref())
            }
            Event::ReadTxnReply { session, items, .. } => {
                for it in items {
                    read(&mut snaps, i, *session, &it.key, it.vc.as_ref());
                }
            }
            _ => {}
        }
    }
    out
}
