//! Transactional checks: atomic visibility of batch commits and repeatable
//! reads within a TCC workflow session.

use std::collections::BTreeMap;

use super::{Violation, ViolationKind};
use crate::clock::VectorClock;
use crate::trace::{BatchItem, Event, ReadSource, SessionId, Trace};
use crate::version::Key;

struct TccRead<'a> {
    at: usize,
    key: &'a Key,
    vc: &'a VectorClock,
}

fn tcc_reads(trace: &Trace) -> BTreeMap<SessionId, Vec<TccRead<'_>>> {
    let mut out: BTreeMap<SessionId, Vec<TccRead<'_>>> = BTreeMap::new();
    for (i, e) in trace.events.iter().enumerate() {
        if let Event::TccReadReply {
            session,
            key,
            vc: Some(vc),
            source,
            ..
        } = &e.event
        {
            if *source != ReadSource::WriteBuffer {
                out.entry(*session).or_default().push(TccRead { at: i, key, vc });
            }
        }
    }
    out
}

/// A TCC read that observes member `j` of a committed batch must see every
/// earlier member `i < j` too: if the same session read member `i`'s key, it
/// must have been at a clock at or above member `i`'s.
pub fn check_atomic_visibility(trace: &Trace) -> Vec<Violation> {
    let reads = tcc_reads(trace);
    let mut batches: Vec<(usize, SessionId, &[BatchItem])> = Vec::new();
    for (i, e) in trace.events.iter().enumerate() {
        if let Event::BatchCommit { session, writes, .. } = &e.event {
            batches.push((i, *session, writes));
        }
    }
    let mut out = Vec::new();
    for (session, rs) in &reads {
        for &(b_at, writer, members) in &batches {
            if writer == *session {
                continue;
            }
            for r in rs {
                let Some(j) = members.iter().position(|m| &m.key == r.key && m.vc.dominated_by(r.vc)) else {
                    continue;
                };
                let missed = members[..j].iter().find_map(|m| {
                    rs.iter()
                        .find(|o| o.key == &m.key && !m.vc.dominated_by(o.vc))
                        .map(|o| (m, o))
                });
                if let Some((m, o)) = missed {
                    let mut v = Violation::new(
                        ViolationKind::AtomicVisibility,
                        format!(
                            "read {}@{} observes a batch whose earlier write {}@{} was read as {}",
                            r.key, r.vc, m.key, m.vc, o.vc
                        ),
                    );
                    v.session = Some(*session);
                    v.key = Some(m.key.clone());
                    v.at = Some(r.at.max(o.at));
                    let mut w = vec![b_at, r.at, o.at];
                    w.sort_unstable();
                    v.witness = w;
                    out.push(v);
                }
            }
        }
    }
    out.sort_by_key(|v| v.at);
    out
}

/// Repeated TCC reads of one key inside a session return the same clock.
/// Reads served from the session's own write buffer and reads that found
/// nothing are not compared.
pub fn check_repeatable_reads(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    for (session, rs) in tcc_reads(trace) {
        let mut first: BTreeMap<&Key, &TccRead<'_>> = BTreeMap::new();
        for r in &rs {
            match first.get(r.key) {
                Some(f) if f.vc != r.vc => {
                    let mut v = Violation::new(
                        ViolationKind::RepeatableRead,
                        format!("{} read at {} and later at {}", r.key, f.vc, r.vc),
                    );
                    v.session = Some(session);
                    v.key = Some(r.key.clone());
                    v.at = Some(r.at);
                    v.witness = vec![f.at, r.at];
                    out.push(v);
                }
                Some(_) => {}
                None => {
                    first.insert(r.key, r);
                }
            }
        }
    }
    out.sort_by_key(|v| v.at);
    out
}
