//! Witness minimization by delta debugging over trace events.

use super::Violation;
use crate::trace::Trace;

/// Maximum number of checker runs spent on one witness.
pub const MINIMIZE_BUDGET: usize = 2_000;

/// Whether the events at `indices` (original positions, ascending) still
/// exhibit `target` under `check`: same kind, anchored at the same original
/// event.
pub fn revalidate(trace: &Trace, target: &Violation, indices: &[usize], check: impl Fn(&Trace) -> Vec<Violation>) -> bool {
    let sub = trace.subsequence(indices);
    check(&sub)
        .iter()
        .any(|v| v.kind == target.kind && v.at.map(|a| indices[a]) == target.at)
}

/// Shrinks the set of events needed to reproduce `target`, returning their
/// original indices in ascending order. Violations not anchored at an event
/// keep their existing witness.
pub fn minimize_witness(trace: &Trace, target: &Violation, check: impl Fn(&Trace) -> Vec<Violation>) -> Vec<usize> {
    let Some(anchor) = target.at else {
        return target.witness.clone();
    };
    let budget = std::cell::Cell::new(MINIMIZE_BUDGET);
    let holds = |idx: &[usize]| {
        if budget.get() == 0 {
            return false;
        }
        budget.set(budget.get() - 1);
        revalidate(trace, target, idx, &check)
    };

    let prefix: Vec<usize> = (0..=anchor).collect();
    let mut cur = if holds(&prefix) {
        prefix
    } else {
        (0..trace.len()).collect()
    };

    // ddmin over everything but the anchor.
    let mut n = 2usize;
    loop {
        let rest: Vec<usize> = cur.iter().copied().filter(|&i| i != anchor).collect();
        if rest.is_empty() || budget.get() == 0 {
            break;
        }
        n = n.min(rest.len());
        let chunk = rest.len().div_ceil(n);
        let mut reduced = false;
        for part in rest.chunks(chunk) {
            let cand: Vec<usize> = cur.iter().copied().filter(|i| part.binary_search(i).is_err()).collect();
            if holds(&cand) {
                cur = cand;
                n = (n - 1).max(2);
                reduced = true;
                break;
            }
        }
        if !reduced {
            if n >= rest.len() {
                break;
            }
            n = (n * 2).min(rest.len());
        }
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{check_sessions, ViolationKind};
    use crate::clock::VectorClock;
    use crate::trace::Event;

    #[test]
    fn shrinks_to_the_essential_events() {
        let mut t = Trace::new();
        for i in 0..20u64 {
            t.push(
                i,
                Event::ClientWriteReply {
                    session: 100 + i,
                    server: 0,
                    key: format!("noise{i}"),
                    vc: VectorClock::from([i + 1, 0]),
                },
            );
        }
        t.push(
            20,
            Event::ClientWriteReply {
                session: 1,
                server: 0,
                key: "k".into(),
                vc: VectorClock::from([0, 1]),
            },
        );
        t.push(
            21,
            Event::ClientReadReply {
                session: 1,
                server: 1,
                key: "k".into(),
                value: None,
                vc: None,
                served: None,
                fetched: false,
            },
        );
        let v = check_sessions(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::ReadYourWrites);
        let w = minimize_witness(&t, &v[0], check_sessions);
        assert_eq!(w, vec![20, 21]);
        assert!(revalidate(&t, &v[0], &w, check_sessions));
        assert!(!revalidate(&t, &v[0], &[21], check_sessions));
    }
}
