//! Transactional extension: multi-version reads that stay inside one causal
//! cut for a whole workflow, atomic batch writes and parallel-branch
//! validation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::{is_strict_causal_cut, TccCCache};
use crate::clock::VectorClock;
use crate::error::ServerError;
use crate::server::{Effects, ReadReply, ServerState, TccServer};
use crate::store::Store;
use crate::version::{Deps, Key, Value, Version};

/// Versions read so far by one workflow attempt, with the dependencies they
/// were written with (needed to tell whether a later read still fits).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReadSet(BTreeMap<Key, Version>);

impl ReadSet {
    pub fn new() -> Self {
        ReadSet::default()
    }

    pub fn get(&self, key: &str) -> Option<&Version> {
        self.0.get(key)
    }

    pub fn clock(&self, key: &str) -> Option<&VectorClock> {
        self.0.get(key).map(|v| &v.vc)
    }

    pub fn insert(&mut self, v: Version) {
        self.0.insert(v.key.clone(), v);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Version> {
        self.0.values()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether adding `candidate` keeps this set consistent. A key already
    /// read only accepts the exact same clock.
    pub fn admits(&self, candidate: &Version) -> bool {
        if let Some(prev) = self.0.get(&candidate.key) {
            return prev.vc == candidate.vc;
        }
        let mut members: Vec<Version> = self.0.values().cloned().collect();
        members.push(candidate.clone());
        fits_together(members)
    }

    /// `candidate` with its dependencies widened by everything reachable
    /// through versions buffered in `cache`, stopping at keys this set has
    /// read (their own entries carry their requirements). For each key the
    /// oldest buffered version covering the requirement is followed; merged
    /// ring entries over-approximate the real dependencies.
    pub fn expand(&self, candidate: &Version, cache: &TccCCache) -> Version {
        let mut deps = candidate.deps.clone();
        let mut followed: BTreeMap<Key, VectorClock> = BTreeMap::new();
        loop {
            let next: Vec<(Key, VectorClock)> = deps
                .iter()
                .filter(|(k, d)| {
                    **k != candidate.key
                        && !self.0.contains_key(*k)
                        && !followed.get(*k).is_some_and(|f| d.dominated_by(f))
                })
                .map(|(k, d)| (k.clone(), d.clone()))
                .collect();
            if next.is_empty() {
                break;
            }
            for (k, d) in next {
                match cache.ring(&k).find(|v| d.dominated_by(&v.vc)) {
                    Some(v) => {
                        deps.merge(&v.deps);
                        followed.insert(k, v.vc.clone());
                    }
                    None => {
                        followed.insert(k, d);
                    }
                }
            }
        }
        Version { deps, ..candidate.clone() }
    }

    /// [`ReadSet::admits`] applied to the expanded candidate.
    pub fn admits_in(&self, candidate: &Version, cache: &TccCCache) -> bool {
        self.admits(&self.expand(candidate, cache))
    }
}

impl FromIterator<Version> for ReadSet {
    fn from_iter<I: IntoIterator<Item = Version>>(iter: I) -> Self {
        let mut rs = ReadSet::new();
        for v in iter {
            rs.insert(v);
        }
        rs
    }
}

/// Strict-cut test over `members`, where dependencies on keys outside the set
/// are represented by dependency-free placeholders at the required clock:
/// only the keys actually read are constrained.
fn fits_together(mut members: Vec<Version>) -> bool {
    let mut outside = Deps::new();
    for m in &members {
        for (k, d) in m.deps.iter() {
            if !members.iter().any(|o| &o.key == k) {
                outside.add(k.clone(), d);
            }
        }
    }
    members.extend(
        outside
            .iter()
            .map(|(k, d)| Version::new(k.clone(), Value::default(), d.clone(), Deps::new())),
    );
    is_strict_causal_cut(&members)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TccReadReply {
    /// A visible version that fits the read set.
    Found(Version),
    /// Not visible; see [`ReadReply::Fetched`].
    Fetched(Version),
    NotFound,
    /// No buffered version fits the read set.
    Abort,
}

impl TccServer {
    /// Integrates `deps`, then returns the oldest buffered version of `key`
    /// that fits `readset`.
    pub fn handle_client_read_tcc(
        &mut self,
        key: &str,
        deps: &Deps,
        readset: &ReadSet,
        store: &Store,
    ) -> Result<(TccReadReply, Effects), ServerError> {
        let mut fx = Effects::default();
        self.integrate_into(deps, &mut fx)?;
        if self.visible().head(key).is_none() {
            let reply = match self.fetch(key, store, &mut fx) {
                ReadReply::Fetched(vv) => {
                    let v = Version {
                        key: key.to_owned(),
                        value: vv.value,
                        vc: vv.vc,
                        origin: vv.origin,
                        deps: Deps::new(),
                    };
                    if readset.admits_in(&v, self.visible()) {
                        TccReadReply::Fetched(v)
                    } else {
                        TccReadReply::Abort
                    }
                }
                _ => TccReadReply::NotFound,
            };
            return Ok((reply, fx));
        }
        let cache = self.visible();
        let reply = cache
            .ring(key)
            .map(|v| readset.expand(v, cache))
            .find(|v| readset.admits(v))
            .map_or(TccReadReply::Abort, TccReadReply::Found);
        Ok((reply, fx))
    }
}

impl<C: crate::cache::VisibleHalf> ServerState<C> {
    /// Writes every member under consecutive clocks, each depending on the
    /// one before it, in one atomic step. Integrating any member therefore
    /// drags in all earlier members.
    pub fn handle_batch_write(
        &mut self,
        batch: &[(Key, Value)],
        deps: &Deps,
        local: &Deps,
    ) -> Result<(Vec<VectorClock>, Effects), ServerError> {
        if batch.is_empty() {
            return Err(ServerError::EmptyBatch);
        }
        let mut fx = Effects::default();
        let mut carried = deps.merged(local);
        let mut clocks = Vec::with_capacity(batch.len());
        for (key, value) in batch {
            let vc = self.originate(key, value.clone(), carried.clone(), &mut fx);
            carried.add(key.clone(), &vc);
            clocks.push(vc);
        }
        Ok((clocks, fx))
    }
}

/// Join-point check for parallel branches: the union of their read sets must
/// be consistent, and no key may have been read at two different clocks.
pub fn validate_parallel(readsets: &[ReadSet]) -> bool {
    let mut union: BTreeMap<&Key, &Version> = BTreeMap::new();
    for rs in readsets {
        for v in rs.iter() {
            match union.get(&v.key) {
                Some(prev) if prev.vc != v.vc => return false,
                _ => {
                    union.insert(&v.key, v);
                }
            }
        }
    }
    fits_together(union.into_values().cloned().collect())
}

/// Every buffered version of `key` that fits `readset`, oldest first.
pub fn compatible_versions<'a>(cache: &'a TccCCache, key: &str, readset: &ReadSet) -> Vec<&'a Version> {
    cache.ring(key).filter(|v| readset.admits_in(v, cache)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::server::{PeerMessage, ServerConfig};

    fn vc(e: &[u64]) -> VectorClock {
        VectorClock::from(e.to_vec())
    }

    fn ver(key: &str, e: &[u64], deps: &[(&str, &[u64])]) -> Version {
        Version::new(key, "v", vc(e), deps.iter().map(|(k, d)| (*k, vc(d))).collect())
    }

    #[test]
    fn admits_examples() {
        let empty = ReadSet::new();
        assert!(empty.admits(&ver("x", &[1, 0], &[])));

        // Pinned an old y; the only x needs a newer y.
        let rs: ReadSet = [ver("y", &[1, 0], &[])].into_iter().collect();
        assert!(!rs.admits(&ver("x", &[3, 0], &[("y", &[2, 0])])));
        assert!(rs.admits(&ver("x", &[3, 0], &[("y", &[1, 0])])));

        // Reverse direction: the earlier read depends on a newer version of
        // the candidate's key.
        let rs: ReadSet = [ver("x", &[3, 0], &[("y", &[2, 0])])].into_iter().collect();
        assert!(!rs.admits(&ver("y", &[1, 0], &[])));
        assert!(rs.admits(&ver("y", &[2, 0], &[])));

        // Same key: exact clock only.
        let rs: ReadSet = [ver("x", &[1, 0], &[])].into_iter().collect();
        assert!(rs.admits(&ver("x", &[1, 0], &[])));
        assert!(!rs.admits(&ver("x", &[2, 0], &[])));
    }

    #[test]
    fn indirect_requirement_is_followed() {
        // x depends on z, which depends on a y newer than the pinned one.
        let rs: ReadSet = [ver("y", &[1, 0], &[])].into_iter().collect();
        let x = ver("x", &[4, 0], &[("z", &[3, 0])]);
        let mut cache = TccCCache::new(2);
        cache.append_merged("z", vec![ver("z", &[3, 0], &[("y", &[2, 0])])]);
        assert!(rs.admits(&x));
        assert!(!rs.admits_in(&x, &cache));
        let wide = ReadSet::new().expand(&x, &cache);
        assert_eq!(wide.deps.get("y"), Some(&vc(&[2, 0])));
        let branch: ReadSet = [wide].into_iter().collect();
        assert!(!validate_parallel(&[rs.clone(), branch]));
        let mut loose = TccCCache::new(2);
        loose.append_merged("z", vec![ver("z", &[3, 0], &[("y", &[1, 0])])]);
        assert!(rs.admits_in(&x, &loose));
    }

    #[test]
    fn oldest_compatible_version_wins() {
        let cfg = ServerConfig { ring_capacity: 4, ..ServerConfig::default() };
        let mut s = TccServer::new_tcc(0, 1, cfg);
        let store = Store::new();
        let (c1, fx) = s.handle_client_write("x", "old", &Deps::new(), &Deps::new());
        for o in fx.outgoing {
            let PeerMessage::Propagate(p) = o.msg else { panic!() };
            s.handle_server_write(p).unwrap();
        }
        let (c2, fx) = s.handle_client_write("x", "new", &Deps::new(), &Deps::new());
        for o in fx.outgoing {
            let PeerMessage::Propagate(p) = o.msg else { panic!() };
            s.handle_server_write(p).unwrap();
        }
        assert_eq!(s.visible().ring("x").count(), 2);
        let (r, _) = s.handle_client_read_tcc("x", &Deps::new(), &ReadSet::new(), &store).unwrap();
        let TccReadReply::Found(v) = r else { panic!("{r:?}") };
        assert_eq!(v.vc, c1);
        let pinned: ReadSet = [Version::new("x", "new", c2.clone(), Deps::new())].into_iter().collect();
        let (r, _) = s.handle_client_read_tcc("x", &Deps::new(), &pinned, &store).unwrap();
        assert!(matches!(r, TccReadReply::Found(v) if v.vc == c2));
    }

    #[test]
    fn incompatible_ring_aborts() {
        let mut s = TccServer::new_tcc(0, 1, ServerConfig::default());
        let store = Store::new();
        let (cy_old, fx) = s.handle_client_write("y", "old", &Deps::new(), &Deps::new());
        deliver(&mut s, fx);
        let (cy_new, fx) = s.handle_client_write("y", "new", &Deps::new(), &Deps::new());
        deliver(&mut s, fx);
        let (_, fx) = s.handle_client_write("x", "1", &Deps::new().with("y", &cy_new), &Deps::new());
        deliver(&mut s, fx);
        let rs: ReadSet = [Version::new("y", "old", cy_old, Deps::new())].into_iter().collect();
        let (r, _) = s.handle_client_read_tcc("x", &Deps::new(), &rs, &store).unwrap();
        assert_eq!(r, TccReadReply::Abort);
        // Oracle: nothing in the ring forms a cut with the read set.
        for cand in s.visible().ring("x") {
            let mut all: Vec<Version> = rs.iter().cloned().collect();
            all.push(cand.clone());
            assert!(!is_strict_causal_cut(&all));
        }
    }

    fn deliver(s: &mut TccServer, fx: Effects) {
        for o in fx.outgoing {
            let PeerMessage::Propagate(p) = o.msg else { panic!() };
            s.handle_server_write(p).unwrap();
        }
    }

    #[test]
    fn batch_clocks_are_chained() {
        let mut s = TccServer::new_tcc(0, 2, ServerConfig::default());
        let batch = vec![("a".to_owned(), Value::from("1")), ("b".to_owned(), Value::from("2"))];
        let (clocks, fx) = s.handle_batch_write(&batch, &Deps::new(), &Deps::new()).unwrap();
        assert_eq!(clocks, [vc(&[1, 0]), vc(&[2, 0])]);
        let versions: Vec<Version> = fx
            .outgoing
            .iter()
            .map(|o| match &o.msg {
                PeerMessage::Propagate(p) => p.version.clone(),
                _ => panic!(),
            })
            .collect();
        assert!(versions[0].deps.is_empty());
        assert_eq!(versions[1].deps.get("a"), Some(&vc(&[1, 0])));
        assert_eq!(s.handle_batch_write(&[], &Deps::new(), &Deps::new()).unwrap_err(), ServerError::EmptyBatch);
    }

    #[test]
    fn parallel_validation() {
        let a: ReadSet = [ver("x", &[1, 0], &[])].into_iter().collect();
        let b: ReadSet = [ver("z", &[0, 1], &[])].into_iter().collect();
        assert!(validate_parallel(&[a.clone(), b]));

        let b: ReadSet = [ver("y", &[3, 0], &[("x", &[2, 0])])].into_iter().collect();
        assert!(!validate_parallel(&[a.clone(), b]));

        assert!(validate_parallel(&[a.clone()]));
        let other: ReadSet = [ver("x", &[2, 0], &[])].into_iter().collect();
        assert!(!validate_parallel(&[a, other]));
    }
}
