//! Keys, values, dependency maps and the convergent conflict-resolution policy.

use std::collections::btree_map::{self, BTreeMap};
use std::fmt;

use serde::de::{self, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::clock::VectorClock;
use crate::error::ResolveError;

pub type Key = String;

/// An opaque byte-string value.
///
/// Encoded in JSON as a string when the bytes are valid UTF-8 and as an array
/// of byte values otherwise, so the encoding is both readable and lossless.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(Vec<u8>);

impl Value {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Value(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => write!(f, "{s:?}"),
            Err(_) => write!(f, "{:?}", self.0),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value(s.as_bytes().to_vec())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value(s.into_bytes())
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value(v)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(&self.0) {
            Ok(s) => serializer.serialize_str(s),
            Err(_) => self.0.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ValueVisitor;

        impl<'de> Visitor<'de> for ValueVisitor {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a string or an array of bytes")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
                Ok(Value::from(v))
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
                let mut bytes = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(b) = seq.next_element::<u8>()? {
                    bytes.push(b);
                }
                Ok(Value(bytes))
            }
        }

        deserializer.deserialize_any(ValueVisitor)
    }
}

/// Nearest dependencies: at most one clock per key. Adding a clock for a key
/// that is already present keeps the element-wise maximum.
#[derive(Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Deps(BTreeMap<Key, VectorClock>);

impl Deps {
    pub fn new() -> Self {
        Deps::default()
    }

    pub fn add(&mut self, key: impl Into<Key>, vc: &VectorClock) {
        match self.0.entry(key.into()) {
            btree_map::Entry::Occupied(mut e) => e.get_mut().merge_assign(vc),
            btree_map::Entry::Vacant(e) => {
                e.insert(vc.clone());
            }
        }
    }

    /// Functional form of [`Deps::add`].
    pub fn with(mut self, key: impl Into<Key>, vc: &VectorClock) -> Self {
        self.add(key, vc);
        self
    }

    /// Key-wise join with `other`.
    pub fn merge(&mut self, other: &Deps) {
        for (k, vc) in &other.0 {
            self.add(k.clone(), vc);
        }
    }

    pub fn merged(&self, other: &Deps) -> Deps {
        let mut out = self.clone();
        out.merge(other);
        out
    }

    pub fn get(&self, key: &str) -> Option<&VectorClock> {
        self.0.get(key)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &VectorClock)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Key> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self` covers `other` when every clock in `other` is dominated by the
    /// clock `self` holds for that key.
    pub fn covers(&self, other: &Deps) -> bool {
        other
            .iter()
            .all(|(k, vc)| self.get(k).is_some_and(|mine| vc.dominated_by(mine)))
    }
}

impl fmt::Debug for Deps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.0.iter()).finish()
    }
}

impl<K: Into<Key>> FromIterator<(K, VectorClock)> for Deps {
    fn from_iter<I: IntoIterator<Item = (K, VectorClock)>>(iter: I) -> Self {
        let mut d = Deps::new();
        for (k, vc) in iter {
            d.add(k, &vc);
        }
        d
    }
}

impl<'a> IntoIterator for &'a Deps {
    type Item = (&'a Key, &'a VectorClock);
    type IntoIter = btree_map::Iter<'a, Key, VectorClock>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// A value together with the clock it is visible under.
///
/// `origin` is the clock the winning value was written with. It differs from
/// `vc` only after a concurrent merge; it is what makes [`resolve`] associative
/// (see there). `None` means "same as `vc`".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedValue {
    pub value: Value,
    pub vc: VectorClock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<VectorClock>,
}

impl VersionedValue {
    pub fn new(value: impl Into<Value>, vc: VectorClock) -> Self {
        VersionedValue {
            value: value.into(),
            vc,
            origin: None,
        }
    }

    pub fn origin(&self) -> &VectorClock {
        self.origin.as_ref().unwrap_or(&self.vc)
    }
}

/// The unit that is written, stored, propagated and integrated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Version {
    pub key: Key,
    pub value: Value,
    pub vc: VectorClock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<VectorClock>,
    #[serde(default)]
    pub deps: Deps,
}

impl Version {
    pub fn new(key: impl Into<Key>, value: impl Into<Value>, vc: VectorClock, deps: Deps) -> Self {
        Version {
            key: key.into(),
            value: value.into(),
            vc,
            origin: None,
            deps,
        }
    }

    pub fn origin(&self) -> &VectorClock {
        self.origin.as_ref().unwrap_or(&self.vc)
    }

    pub fn versioned_value(&self) -> VersionedValue {
        VersionedValue {
            value: self.value.clone(),
            vc: self.vc.clone(),
            origin: self.origin.clone(),
        }
    }

    /// Resolve two versions of the same key. The dependency map of the
    /// winning side is kept.
    pub fn resolve(&self, other: &Version) -> Result<Version, ResolveError> {
        if self.key != other.key {
            return Err(ResolveError::KeyMismatch {
                left: self.key.clone(),
                right: other.key.clone(),
            });
        }
        let vc = self.vc.merge(&other.vc).expect("clock width");
        let winner = if beats(other.origin(), &other.value, self.origin(), &self.value) {
            other
        } else {
            self
        };
        Ok(Version {
            key: self.key.clone(),
            value: winner.value.clone(),
            origin: origin_for(winner.origin(), &vc),
            vc,
            deps: winner.deps.clone(),
        })
    }

    /// True when every dependency strictly happens before this version.
    pub fn deps_precede(&self) -> bool {
        self.deps.iter().all(|(_, d)| d.happened_before(&self.vc))
    }
}

fn beats(origin: &VectorClock, value: &Value, other_origin: &VectorClock, other_value: &Value) -> bool {
    (origin, value) > (other_origin, other_value)
}

fn origin_for(winner_origin: &VectorClock, merged: &VectorClock) -> Option<VectorClock> {
    (winner_origin != merged).then(|| winner_origin.clone())
}

/// Deterministic, convergent conflict resolution.
///
/// The resolved clock is the join of both clocks. The resolved value is the
/// one whose origin clock is lexicographically largest, with bytewise value
/// comparison as a last resort. Because a clock that dominates another is
/// also lexicographically larger, a strictly newer write always wins; for
/// concurrent writes the lexicographic order picks one deterministically.
///
/// Comparing origins rather than the merged clocks keeps the operation
/// commutative, associative and idempotent: the result is the join of all
/// clocks paired with the value of the lexicographically largest write,
/// whatever order the writes are folded in.
///
/// # Panics
///
/// Panics if the clocks have different widths.
pub fn resolve(a: &VersionedValue, b: &VersionedValue) -> VersionedValue {
    let vc = a.vc.merge(&b.vc).expect("clock width");
    let winner = if beats(b.origin(), &b.value, a.origin(), &a.value) {
        b
    } else {
        a
    };
    VersionedValue {
        value: winner.value.clone(),
        origin: origin_for(winner.origin(), &vc),
        vc,
    }
}

/// Fold [`resolve`] over a non-empty sequence.
pub fn resolve_all<'a>(mut it: impl Iterator<Item = &'a VersionedValue>) -> Option<VersionedValue> {
    let first = it.next()?.clone();
    Some(it.fold(first, |acc, v| resolve(&acc, v)))
}
