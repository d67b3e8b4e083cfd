//! Eventually consistent comparison point: a last-writer map per server,
//! replicated to every peer asynchronously with no dependency tracking.

use std::collections::BTreeMap;

use crate::cache::CacheDump;
use crate::clock::VectorClock;
use crate::version::{Deps, Key, Value, Version};

#[derive(Debug, Clone)]
pub struct BaselineServer {
    id: usize,
    n: usize,
    gvc: VectorClock,
    data: BTreeMap<Key, Version>,
}

impl BaselineServer {
    pub fn new(id: usize, n: usize) -> Self {
        BaselineServer {
            id,
            n,
            gvc: VectorClock::zero(n),
            data: BTreeMap::new(),
        }
    }

    /// Applies a write locally and returns it for every other server.
    pub fn write(&mut self, key: &str, value: Value) -> (Version, Vec<usize>) {
        self.gvc.increment_assign(self.id).expect("id is in range");
        let v = Version::new(key, value, self.gvc.clone(), Deps::new());
        self.apply(v.clone());
        let peers = (0..self.n).filter(|&j| j != self.id).collect();
        (v, peers)
    }

    pub fn apply(&mut self, v: Version) {
        self.gvc.merge_assign(&v.vc);
        let merged = match self.data.get(&v.key) {
            Some(cur) => cur.resolve(&v).expect("same key"),
            None => v,
        };
        self.data.insert(merged.key.clone(), merged);
    }

    pub fn read(&self, key: &str) -> Option<&Version> {
        self.data.get(key)
    }

    pub fn dump(&self) -> CacheDump {
        CacheDump {
            visible: self.data.iter().map(|(k, v)| (k.clone(), vec![v.clone()])).collect(),
            pending: BTreeMap::new(),
        }
    }
}
