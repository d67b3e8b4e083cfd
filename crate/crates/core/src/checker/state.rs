//! Snapshot checks over cache dumps, plus the request-side PVC bound.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{PvcTracker, Violation, ViolationKind};
use crate::cache::{is_strict_causal_cut, CacheDump};
use crate::clock::VectorClock;
use crate::trace::{Event, Trace};
use crate::version::{resolve_all, Key, Version, VersionedValue};

/// Checks a simultaneous snapshot of every server:
///
/// * every visible clock is dominated by `pvc`;
/// * every visible version can be integrated at every server, i.e. some mix
///   of that server's visible head and pending versions covers its clock;
/// * each server's visible heads, with their recorded dependencies, form a
///   strict causal cut.
pub fn check_state(dumps: &[CacheDump], pvc: &VectorClock) -> Vec<Violation> {
    let mut out = Vec::new();
    for (s, d) in dumps.iter().enumerate() {
        for v in d.visible.values().flatten() {
            if !v.vc.dominated_by(pvc) {
                let mut x = Violation::new(
                    ViolationKind::PvcBound,
                    format!("{}@{} visible at S{s} exceeds PVC {pvc}", v.key, v.vc),
                );
                x.server = Some(s);
                x.key = Some(v.key.clone());
                out.push(x);
            }
        }
    }

    let mut visible: BTreeMap<&Key, BTreeSet<&VectorClock>> = BTreeMap::new();
    for d in dumps {
        for v in d.visible.values().flatten() {
            visible.entry(&v.key).or_default().insert(&v.vc);
        }
    }
    for (s, d) in dumps.iter().enumerate() {
        for (key, clocks) in &visible {
            for c in clocks {
                if !available_at(d, key, c) {
                    let mut x = Violation::new(
                        ViolationKind::NotGloballyAvailable,
                        format!("{key}@{c} is visible somewhere but S{s} cannot integrate it"),
                    );
                    x.server = Some(s);
                    x.key = Some((*key).clone());
                    out.push(x);
                }
            }
        }
    }

    for (s, d) in dumps.iter().enumerate() {
        let heads = d.heads();
        if !is_strict_causal_cut(&heads) {
            let bad = heads
                .iter()
                .find(|x| {
                    x.deps
                        .iter()
                        .any(|(k, dc)| !heads.iter().any(|y| &y.key == k && dc.dominated_by(&y.vc)))
                })
                .expect("a cut failure names a member");
            let mut x = Violation::new(
                ViolationKind::CCacheNotCut,
                format!("S{s} shows {}@{} without its dependencies {:?}", bad.key, bad.vc, bad.deps),
            );
            x.server = Some(s);
            x.key = Some(bad.key.clone());
            out.push(x);
        }
    }
    out
}

/// Whether the server in `d` could make `key@c` visible from what it holds.
fn available_at(d: &CacheDump, key: &str, c: &VectorClock) -> bool {
    let mut acc = VectorClock::zero(c.width());
    if let Some(h) = d.head(key) {
        acc.merge_assign(&h.vc);
    }
    for v in d.pending.get(key).into_iter().flatten() {
        if v.vc.dominated_by(c) {
            acc.merge_assign(&v.vc);
        }
    }
    c.dominated_by(&acc)
}

/// Every dependency a client ships with a read, and every version a server
/// makes visible, must already be at or below the PVC at that point of the
/// trace. Violations are reported as [`ViolationKind::PvcBound`].
pub fn check_requests(trace: &Trace) -> Vec<Violation> {
    let Some(n) = super::trace_width(trace) else {
        return Vec::new();
    };
    let mut pvc = PvcTracker::new(n);
    let mut out = Vec::new();
    for (i, e) in trace.events.iter().enumerate() {
        let (session, server, found, what) = match &e.event {
            Event::ClientReadReq { session, server, deps, .. }
            | Event::ReadTxnReq { session, server, deps, .. }
            | Event::TccReadReq { session, server, deps, .. } => (
                Some(*session),
                *server,
                deps.iter().find(|(_, d)| !d.dominated_by(&pvc.pvc)),
                "request carries",
            ),
            Event::Integrated { server, versions } => (
                None,
                *server,
                versions.iter().map(|(k, c)| (k, c)).find(|(_, d)| !d.dominated_by(&pvc.pvc)),
                "server made visible",
            ),
            other => {
                pvc.observe(other);
                continue;
            }
        };
        if let Some((k, d)) = found {
            let mut x = Violation::new(ViolationKind::PvcBound, format!("{what} {k}@{d} beyond PVC {}", pvc.pvc));
            x.session = session;
            x.server = Some(server);
            x.key = Some(k.clone());
            x.at = Some(i);
            x.witness = vec![i];
            out.push(x);
        }
    }
    out
}

/// A replica (server `Some(i)` or the store, `None`) whose resolved view of
/// `key` differs from the cluster-wide resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub key: Key,
    pub server: Option<usize>,
    pub expected: VersionedValue,
    pub found: Option<VersionedValue>,
}

/// After quiescence every replica should resolve each key to the same value
/// and clock. Keys held only by the store (never cached anywhere) are
/// skipped.
pub fn check_convergence(dumps: &[CacheDump], store: &BTreeMap<Key, Version>) -> Vec<Divergence> {
    let view = |d: &CacheDump, key: &str| -> Option<VersionedValue> {
        let vs: Vec<VersionedValue> = d
            .head(key)
            .into_iter()
            .chain(d.pending.get(key).into_iter().flatten())
            .map(Version::versioned_value)
            .collect();
        resolve_all(vs.iter())
    };
    let keys: BTreeSet<&Key> = dumps
        .iter()
        .flat_map(|d| d.visible.keys().chain(d.pending.keys()))
        .collect();
    let mut out = Vec::new();
    for key in keys {
        let views: Vec<Option<VersionedValue>> = dumps.iter().map(|d| view(d, key)).collect();
        let stored = store.get(key).map(Version::versioned_value);
        let expected = resolve_all(views.iter().flatten().chain(stored.iter())).expect("key came from a dump");
        for (s, v) in views.into_iter().enumerate() {
            if v.as_ref() != Some(&expected) {
                out.push(Divergence {
                    key: key.clone(),
                    server: Some(s),
                    expected: expected.clone(),
                    found: v,
                });
            }
        }
        if stored.as_ref() != Some(&expected) {
            out.push(Divergence {
                key: key.clone(),
                server: None,
                expected,
                found: stored,
            });
        }
    }
    out
}
