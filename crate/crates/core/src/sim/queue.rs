use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use super::{FaultKind, FaultSpec};

struct Entry<T> {
    time: u64,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Pending actions ordered by `(time, insertion order)`, with per-channel
/// FIFO delivery for messages between servers.
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<Entry<T>>>,
    seq: u64,
    last_on_link: BTreeMap<(usize, usize), u64>,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            seq: 0,
            last_on_link: BTreeMap::new(),
        }
    }
}

impl<T> EventQueue<T> {
    pub fn push(&mut self, time: u64, item: T) {
        self.seq += 1;
        self.heap.push(Reverse(Entry {
            time,
            seq: self.seq,
            item,
        }));
    }

    /// Schedules a message sent at `now` on `link` with sampled `delay`.
    /// Deliveries that would land inside a stall on the link move to its
    /// end, and no delivery overtakes an earlier one on the same link.
    pub fn push_on_link(&mut self, link: (usize, usize), now: u64, delay: u64, faults: &[FaultSpec], item: T) -> u64 {
        let time = link_delivery_time(self.last_on_link.get(&link).copied(), link, now, delay, faults);
        self.last_on_link.insert(link, time);
        self.push(time, item);
        time
    }

    pub fn pop(&mut self) -> Option<(u64, T)> {
        self.heap.pop().map(|Reverse(e)| (e.time, e.item))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

pub fn link_delivery_time(last: Option<u64>, link: (usize, usize), now: u64, delay: u64, faults: &[FaultSpec]) -> u64 {
    let mut t = now + delay;
    for f in faults {
        let FaultKind::LinkStall = f.kind;
        if f.link == link && t >= f.start && t < f.start + f.duration {
            t = f.start + f.duration;
        }
    }
    last.map_or(t, |l| t.max(l))
}
