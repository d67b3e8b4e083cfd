//! Fixed-width vector clocks.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ClockError;

/// Position of two clocks in the happens-before partial order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Causality {
    Less,
    Equal,
    Greater,
    Concurrent,
}

/// A vector clock with one entry per cache server.
///
/// The derived `Ord` is the lexicographic order of the entry sequence. It is a
/// total order used for deterministic tie-breaking and for ordered containers;
/// it is *not* the happens-before relation. Use [`VectorClock::compare`],
/// [`VectorClock::dominated_by`] or [`VectorClock::happened_before`] for that.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorClock(Vec<u64>);

impl VectorClock {
    /// The all-zero clock for a cluster of `width` servers.
    pub fn zero(width: usize) -> Self {
        VectorClock(vec![0; width])
    }

    pub fn from_entries(entries: impl Into<Vec<u64>>) -> Self {
        VectorClock(entries.into())
    }

    pub fn entries(&self) -> &[u64] {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, index: usize) -> Option<u64> {
        self.0.get(index).copied()
    }

    fn check_width(&self, other: &VectorClock) -> Result<(), ClockError> {
        if self.0.len() == other.0.len() {
            Ok(())
        } else {
            Err(ClockError::WidthMismatch {
                left: self.0.len(),
                right: other.0.len(),
            })
        }
    }

    /// Element-wise maximum of two clocks.
    pub fn merge(&self, other: &VectorClock) -> Result<VectorClock, ClockError> {
        let mut out = self.clone();
        out.try_merge_assign(other)?;
        Ok(out)
    }

    pub fn try_merge_assign(&mut self, other: &VectorClock) -> Result<(), ClockError> {
        self.check_width(other)?;
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            *mine = (*mine).max(*theirs);
        }
        Ok(())
    }

    /// In-place element-wise maximum.
    ///
    /// # Panics
    ///
    /// Panics if the widths differ. Every clock inside one cluster has the
    /// same width, so a mismatch here is a programming error.
    pub fn merge_assign(&mut self, other: &VectorClock) {
        if let Err(e) = self.try_merge_assign(other) {
            panic!("{e}");
        }
    }

    /// Returns a copy with entry `index` bumped by one.
    pub fn increment(&self, index: usize) -> Result<VectorClock, ClockError> {
        let mut out = self.clone();
        out.increment_assign(index)?;
        Ok(out)
    }

    pub fn increment_assign(&mut self, index: usize) -> Result<(), ClockError> {
        let width = self.0.len();
        let slot = self
            .0
            .get_mut(index)
            .ok_or(ClockError::IndexOutOfRange { index, width })?;
        *slot += 1;
        Ok(())
    }

    pub fn compare(&self, other: &VectorClock) -> Result<Causality, ClockError> {
        self.check_width(other)?;
        let mut some_less = false;
        let mut some_greater = false;
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.cmp(b) {
                Ordering::Less => some_less = true,
                Ordering::Greater => some_greater = true,
                Ordering::Equal => {}
            }
        }
        Ok(match (some_less, some_greater) {
            (false, false) => Causality::Equal,
            (true, false) => Causality::Less,
            (false, true) => Causality::Greater,
            (true, true) => Causality::Concurrent,
        })
    }

    /// `self <= other` component-wise. Clocks of different widths are never
    /// dominated by each other.
    pub fn dominated_by(&self, other: &VectorClock) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Strict happens-before: dominated and not equal.
    pub fn happened_before(&self, other: &VectorClock) -> bool {
        self.dominated_by(other) && self != other
    }
}

impl fmt::Debug for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str("]")
    }
}

impl From<Vec<u64>> for VectorClock {
    fn from(v: Vec<u64>) -> Self {
        VectorClock(v)
    }
}

impl<const N: usize> From<[u64; N]> for VectorClock {
    fn from(v: [u64; N]) -> Self {
        VectorClock(v.to_vec())
    }
}
