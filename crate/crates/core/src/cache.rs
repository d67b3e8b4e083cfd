//! The dual cache: a visible C-cache that is always a strict causal cut, an
//! I-cache of versions not yet known to be safe, and dependency integration,
//! which moves a dependency closure from the latter into the former without
//! talking to any other server.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::clock::VectorClock;
use crate::error::UnsatisfiedDependency;
use crate::version::{resolve, Deps, Key, Version, VersionedValue};

/// Per key, the clocks reached by following dependencies (inputs included).
pub type Closure = BTreeMap<Key, BTreeSet<VectorClock>>;

/// Which I-cache versions of a key a dependency `(key, vc)` pulls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClosureRule {
    /// Versions whose clock is dominated by the dependency clock.
    #[default]
    Dominated,
    /// Every version whose clock is not strictly newer than the dependency
    /// clock, concurrent ones included. This is how the single-round
    /// propagation design treated same-key versions as implicit dependencies;
    /// it only exists to reproduce that design's flaw.
    NotNewer,
}

impl ClosureRule {
    fn pulls(self, candidate: &VectorClock, dep: &VectorClock) -> bool {
        match self {
            ClosureRule::Dominated => candidate.dominated_by(dep),
            ClosureRule::NotNewer => !dep.happened_before(candidate),
        }
    }
}

/// Multi-version store of versions that may not have reached every server.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ICache {
    entries: BTreeMap<Key, Vec<Version>>,
}

impl ICache {
    pub fn new() -> Self {
        ICache::default()
    }

    /// Inserts `v` unless a version of the same key with the same clock is
    /// already present. Returns whether it was inserted.
    pub fn insert(&mut self, v: Version) -> bool {
        let slot = self.entries.entry(v.key.clone()).or_default();
        if slot.iter().any(|e| e.vc == v.vc) {
            return false;
        }
        slot.push(v);
        true
    }

    pub fn versions(&self, key: &str) -> &[Version] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, key: &str, vc: &VectorClock) -> bool {
        self.versions(key).iter().any(|v| &v.vc == vc)
    }

    pub fn remove_exact(&mut self, key: &str, vc: &VectorClock) -> Option<Version> {
        let slot = self.entries.get_mut(key)?;
        let pos = slot.iter().position(|v| &v.vc == vc)?;
        let v = slot.remove(pos);
        if slot.is_empty() {
            self.entries.remove(key);
        }
        Some(v)
    }

    fn take_matching(&mut self, key: &str, clocks: &BTreeSet<VectorClock>) -> Vec<Version> {
        let Some(slot) = self.entries.get_mut(key) else {
            return Vec::new();
        };
        let (taken, kept): (Vec<_>, Vec<_>) =
            std::mem::take(slot).into_iter().partition(|v| clocks.contains(&v.vc));
        if kept.is_empty() {
            self.entries.remove(key);
        } else {
            *slot = kept;
        }
        taken
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Version> {
        self.entries.values().flatten()
    }

    pub fn by_key(&self) -> &BTreeMap<Key, Vec<Version>> {
        &self.entries
    }
}

/// Read-only view of what the visible half of a cache holds for a key.
pub trait VisibleCache {
    /// The newest visible clock for `key`.
    fn visible_clock(&self, key: &str) -> Option<&VectorClock>;

    /// Every visible version, paired with the dependencies recorded for it.
    fn visible_versions(&self) -> Vec<Version>;

    /// The versions forming the current cut (one per key).
    fn cut_versions(&self) -> Vec<Version>;
}

/// Reverse dependency edges: `dependency key -> keys whose integrated
/// versions listed it`. May over-approximate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReverseDepIndex {
    edges: BTreeMap<Key, BTreeSet<Key>>,
}

impl ReverseDepIndex {
    pub fn record(&mut self, dependent: &str, deps: &Deps) {
        for k in deps.keys() {
            if k != dependent {
                self.edges.entry(k.clone()).or_default().insert(dependent.to_owned());
            }
        }
    }

    pub fn dependents(&self, key: &str) -> impl Iterator<Item = &Key> {
        self.edges.get(key).into_iter().flatten()
    }

    /// `key` and every key transitively depending on it.
    pub fn reachable_from(&self, key: &str) -> BTreeSet<Key> {
        let mut seen = BTreeSet::from([key.to_owned()]);
        let mut stack = vec![key.to_owned()];
        while let Some(k) = stack.pop() {
            for d in self.dependents(&k) {
                if seen.insert(d.clone()) {
                    stack.push(d.clone());
                }
            }
        }
        seen
    }
}

/// Single-version visible cache.
///
/// Dependencies are dropped on entry; `provenance` keeps the union of the
/// dependencies of every version folded into a key so the cut property can
/// be checked, and feeds the reverse index used by eviction. Reads never
/// consult it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CCache {
    entries: BTreeMap<Key, VersionedValue>,
    provenance: BTreeMap<Key, Deps>,
    rdi: ReverseDepIndex,
}

impl CCache {
    pub fn new() -> Self {
        CCache::default()
    }

    pub fn get(&self, key: &str) -> Option<&VersionedValue> {
        self.entries.get(key)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &VersionedValue)> {
        self.entries.iter()
    }

    pub fn recorded_deps(&self, key: &str) -> Option<&Deps> {
        self.provenance.get(key)
    }

    pub fn reverse_index(&self) -> &ReverseDepIndex {
        &self.rdi
    }

    /// Folds `v` into the entry for its key with [`resolve`].
    pub fn fold(&mut self, v: &Version) {
        let incoming = v.versioned_value();
        let merged = match self.entries.get(&v.key) {
            Some(cur) => resolve(cur, &incoming),
            None => incoming,
        };
        self.entries.insert(v.key.clone(), merged);
        self.provenance.entry(v.key.clone()).or_default().merge(&v.deps);
        self.rdi.record(&v.key, &v.deps);
    }

    /// Removes `key` and every key that transitively depends on it, so the
    /// remainder is still a cut. Returns the removed keys.
    pub fn evict(&mut self, key: &str) -> BTreeSet<Key> {
        if !self.entries.contains_key(key) {
            return BTreeSet::new();
        }
        let doomed = self.rdi.reachable_from(key);
        let mut removed = BTreeSet::new();
        for k in doomed {
            if self.entries.remove(&k).is_some() {
                removed.insert(k.clone());
            }
            self.provenance.remove(&k);
        }
        removed
    }
}

impl VisibleCache for CCache {
    fn visible_clock(&self, key: &str) -> Option<&VectorClock> {
        self.entries.get(key).map(|v| &v.vc)
    }

    fn visible_versions(&self) -> Vec<Version> {
        self.cut_versions()
    }

    fn cut_versions(&self) -> Vec<Version> {
        self.entries
            .iter()
            .map(|(k, v)| Version {
                key: k.clone(),
                value: v.value.clone(),
                vc: v.vc.clone(),
                origin: v.origin.clone(),
                deps: self.provenance.get(k).cloned().unwrap_or_default(),
            })
            .collect()
    }
}

pub const DEFAULT_RING_CAPACITY: usize = 1;

/// Multi-version visible cache: per key a bounded ring of merged versions,
/// oldest first, each keeping its dependencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TccCCache {
    capacity: usize,
    rings: BTreeMap<Key, VecDeque<Version>>,
}

impl Default for TccCCache {
    fn default() -> Self {
        TccCCache::new(DEFAULT_RING_CAPACITY)
    }
}

impl TccCCache {
    pub fn new(capacity: usize) -> Self {
        TccCCache {
            capacity: capacity.max(1),
            rings: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn ring(&self, key: &str) -> impl Iterator<Item = &Version> {
        self.rings.get(key).into_iter().flatten()
    }

    pub fn head(&self, key: &str) -> Option<&Version> {
        self.rings.get(key).and_then(VecDeque::back)
    }

    pub fn rings(&self) -> &BTreeMap<Key, VecDeque<Version>> {
        &self.rings
    }

    /// Merges `incoming` with the current head and appends the result,
    /// evicting the oldest entry when the ring is full.
    pub fn append_merged(&mut self, key: &str, incoming: Vec<Version>) {
        if incoming.is_empty() {
            return;
        }
        let ring = self.rings.entry(key.to_owned()).or_default();
        let mut it = ring.back().cloned().into_iter().chain(incoming);
        let first = it.next().expect("non-empty");
        let merged = it.fold(first, |acc, v| {
            let mut out = acc.resolve(&v).expect("same key");
            out.deps = acc.deps.merged(&v.deps);
            out
        });
        if ring.back() == Some(&merged) {
            return;
        }
        ring.push_back(merged);
        while ring.len() > self.capacity {
            ring.pop_front();
        }
    }
}

impl VisibleCache for TccCCache {
    fn visible_clock(&self, key: &str) -> Option<&VectorClock> {
        self.head(key).map(|v| &v.vc)
    }

    fn visible_versions(&self) -> Vec<Version> {
        self.rings.values().flatten().cloned().collect()
    }

    fn cut_versions(&self) -> Vec<Version> {
        self.rings.values().filter_map(|r| r.back().cloned()).collect()
    }
}

/// Follows dependencies from `deps` through the I-cache and returns, per key,
/// every clock reached (inputs included). Fails if some dependency is
/// covered neither by the visible cache nor by the I-cache versions it pulls.
pub fn collect_transitive(
    icache: &ICache,
    visible: &impl VisibleCache,
    deps: &Deps,
    rule: ClosureRule,
) -> Result<Closure, UnsatisfiedDependency> {
    let mut out = Closure::new();
    let mut pulled: BTreeSet<(&str, &VectorClock)> = BTreeSet::new();
    let mut reached: BTreeMap<Key, Option<VectorClock>> = BTreeMap::new();
    let mut work: Vec<(Key, VectorClock)> = deps.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    while let Some((key, required)) = work.pop() {
        if !out.entry(key.clone()).or_default().insert(required.clone()) {
            continue;
        }
        let covered = reached
            .entry(key.clone())
            .or_insert_with(|| visible.visible_clock(&key).cloned());
        for v in icache.versions(&key) {
            if !rule.pulls(&v.vc, &required) {
                continue;
            }
            out.get_mut(&key).expect("inserted above").insert(v.vc.clone());
            if pulled.insert((v.key.as_str(), &v.vc)) {
                match covered.as_mut() {
                    Some(c) => c.merge_assign(&v.vc),
                    None => *covered = Some(v.vc.clone()),
                }
                work.extend(v.deps.iter().map(|(k, d)| (k.clone(), d.clone())));
            }
        }
    }
    // Coverage is judged against everything the closure makes visible.
    for (key, required) in &out {
        let covered = reached.get(key).cloned().flatten();
        for r in required {
            if !covered.as_ref().is_some_and(|c| r.dominated_by(c)) {
                return Err(UnsatisfiedDependency {
                    key: key.clone(),
                    required: r.clone(),
                    covered,
                });
            }
        }
    }
    Ok(out)
}

/// Dependency integration into a single-version C-cache. All-or-nothing:
/// on error nothing is modified. Returns the versions moved out of the
/// I-cache.
pub fn integrate(
    icache: &mut ICache,
    ccache: &mut CCache,
    gvc: &mut VectorClock,
    deps: &Deps,
    rule: ClosureRule,
) -> Result<Vec<Version>, UnsatisfiedDependency> {
    let closure = collect_transitive(icache, ccache, deps, rule)?;
    let mut moved = Vec::new();
    for (key, clocks) in &closure {
        let taken = icache.take_matching(key, clocks);
        for c in clocks {
            gvc.merge_assign(c);
        }
        for v in &taken {
            ccache.fold(v);
        }
        moved.extend(taken);
    }
    Ok(moved)
}

/// Dependency integration into a multi-version ring cache: each key that
/// gains versions gets one new merged entry appended.
pub fn integrate_tcc(
    icache: &mut ICache,
    ccache: &mut TccCCache,
    gvc: &mut VectorClock,
    deps: &Deps,
    rule: ClosureRule,
) -> Result<Vec<Version>, UnsatisfiedDependency> {
    let closure = collect_transitive(icache, ccache, deps, rule)?;
    let mut moved = Vec::new();
    for (key, clocks) in &closure {
        let taken = icache.take_matching(key, clocks);
        for c in clocks {
            gvc.merge_assign(c);
        }
        ccache.append_merged(key, taken.clone());
        moved.extend(taken);
    }
    Ok(moved)
}

/// The visible half of a dual cache, as driven by a server.
pub trait VisibleHalf: VisibleCache + Clone + std::fmt::Debug {
    /// Moves the closure of `deps` out of `icache` into `self`.
    fn integrate_from(
        &mut self,
        icache: &mut ICache,
        gvc: &mut VectorClock,
        deps: &Deps,
        rule: ClosureRule,
    ) -> Result<Vec<Version>, UnsatisfiedDependency>;

    /// Makes `v` visible.
    fn fold_in(&mut self, v: &Version);
}

impl VisibleHalf for CCache {
    fn integrate_from(
        &mut self,
        icache: &mut ICache,
        gvc: &mut VectorClock,
        deps: &Deps,
        rule: ClosureRule,
    ) -> Result<Vec<Version>, UnsatisfiedDependency> {
        integrate(icache, self, gvc, deps, rule)
    }

    fn fold_in(&mut self, v: &Version) {
        self.fold(v);
    }
}

impl VisibleHalf for TccCCache {
    fn integrate_from(
        &mut self,
        icache: &mut ICache,
        gvc: &mut VectorClock,
        deps: &Deps,
        rule: ClosureRule,
    ) -> Result<Vec<Version>, UnsatisfiedDependency> {
        integrate_tcc(icache, self, gvc, deps, rule)
    }

    fn fold_in(&mut self, v: &Version) {
        let key = v.key.clone();
        self.append_merged(&key, vec![v.clone()]);
    }
}

/// A set of versions is a strict causal cut when every dependency of every
/// member is matched or superseded by a member of the same key.
pub fn is_strict_causal_cut(versions: &[Version]) -> bool {
    versions.iter().all(|x| {
        x.deps.iter().all(|(k, d)| {
            versions
                .iter()
                .any(|y| &y.key == k && d.dominated_by(&y.vc))
        })
    })
}

/// Canonical dump of both halves of a cache, used in snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheDump {
    /// Visible versions with their recorded dependencies, oldest first.
    pub visible: BTreeMap<Key, Vec<Version>>,
    pub pending: BTreeMap<Key, Vec<Version>>,
}

impl CacheDump {
    pub fn capture(visible: &impl VisibleCache, icache: &ICache) -> Self {
        let mut vis: BTreeMap<Key, Vec<Version>> = BTreeMap::new();
        for v in visible.visible_versions() {
            vis.entry(v.key.clone()).or_default().push(v);
        }
        CacheDump {
            visible: vis,
            pending: icache.by_key().clone(),
        }
    }

    pub fn head(&self, key: &str) -> Option<&Version> {
        self.visible.get(key).and_then(|r| r.last())
    }

    pub fn heads(&self) -> Vec<Version> {
        self.visible.values().filter_map(|r| r.last().cloned()).collect()
    }
}
