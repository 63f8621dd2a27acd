use std::fmt;
use std::ops::{Bound, RangeBounds};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::opes::EncryptedId;

/// An interval over ciphertexts with optionally unbounded ends.
///
/// `Bound::Unbounded` on the low side is `-inf`, on the high side `+inf`.
/// An exclusive bound at `l` is how a boundary like "just after `l`" is
/// written; ciphertexts are integers so no epsilon is needed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IdRange {
    pub lo: Bound<EncryptedId>,
    pub hi: Bound<EncryptedId>,
}

impl IdRange {
    /// Checked constructor, rejects ranges with no integer inside.
    pub fn new(lo: Bound<EncryptedId>, hi: Bound<EncryptedId>) -> Result<Self> {
        let r = IdRange { lo, hi };
        if r.is_empty() {
            return Err(Error::EmptyRange);
        }
        Ok(r)
    }

    pub const fn full() -> Self {
        IdRange {
            lo: Bound::Unbounded,
            hi: Bound::Unbounded,
        }
    }

    pub const fn point(x: EncryptedId) -> Self {
        IdRange {
            lo: Bound::Included(x),
            hi: Bound::Included(x),
        }
    }

    /// `(-inf, x]`
    pub const fn at_most(x: EncryptedId) -> Self {
        IdRange {
            lo: Bound::Unbounded,
            hi: Bound::Included(x),
        }
    }

    /// `(x, +inf)`
    pub const fn above(x: EncryptedId) -> Self {
        IdRange {
            lo: Bound::Excluded(x),
            hi: Bound::Unbounded,
        }
    }

    /// `[lo, hi]`
    pub const fn closed(lo: EncryptedId, hi: EncryptedId) -> Self {
        IdRange {
            lo: Bound::Included(lo),
            hi: Bound::Included(hi),
        }
    }

    /// Smallest and largest integer inside, or `None` when empty.
    pub fn int_bounds(&self) -> Option<(u64, u64)> {
        let lo = match self.lo {
            Bound::Unbounded => 0,
            Bound::Included(v) => v.0,
            Bound::Excluded(v) => v.0.checked_add(1)?,
        };
        let hi = match self.hi {
            Bound::Unbounded => u64::MAX,
            Bound::Included(v) => v.0,
            Bound::Excluded(v) => v.0.checked_sub(1)?,
        };
        (lo <= hi).then_some((lo, hi))
    }

    pub fn is_empty(&self) -> bool {
        self.int_bounds().is_none()
    }

    pub fn contains_id(&self, x: EncryptedId) -> bool {
        self.int_bounds().is_some_and(|(lo, hi)| lo <= x.0 && x.0 <= hi)
    }

    /// True when `x` lies strictly beyond the high end.
    pub(crate) fn ends_before(&self, x: EncryptedId) -> bool {
        match self.hi {
            Bound::Unbounded => false,
            Bound::Included(v) => v < x,
            Bound::Excluded(v) => v <= x,
        }
    }

    pub fn intersect(&self, other: &IdRange) -> Option<IdRange> {
        let lo = if lower_key(&self.lo) >= lower_key(&other.lo) {
            self.lo
        } else {
            other.lo
        };
        let hi = if upper_key(&self.hi) <= upper_key(&other.hi) {
            self.hi
        } else {
            other.hi
        };
        let r = IdRange { lo, hi };
        (!r.is_empty()).then_some(r)
    }

    pub fn overlaps(&self, other: &IdRange) -> bool {
        self.intersect(other).is_some()
    }

    /// Every integer of `self` is in `other`. The empty range is a subset of
    /// everything.
    pub fn is_subset_of(&self, other: &IdRange) -> bool {
        match (self.int_bounds(), other.int_bounds()) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some((a, b)), Some((c, d))) => c <= a && b <= d,
        }
    }

    /// Smallest range covering both.
    pub fn hull(&self, other: &IdRange) -> IdRange {
        let lo = if lower_key(&self.lo) <= lower_key(&other.lo) {
            self.lo
        } else {
            other.lo
        };
        let hi = if upper_key(&self.hi) >= upper_key(&other.hi) {
            self.hi
        } else {
            other.hi
        };
        IdRange { lo, hi }
    }
}

// Lower bounds ordered by the first integer they admit (-inf first).
fn lower_key(b: &Bound<EncryptedId>) -> (u8, u64) {
    match *b {
        Bound::Unbounded => (0, 0),
        Bound::Included(v) => (1, v.0),
        Bound::Excluded(v) => match v.0.checked_add(1) {
            Some(n) => (1, n),
            None => (2, 0),
        },
    }
}

// Upper bounds ordered by the last integer they admit (+inf last).
fn upper_key(b: &Bound<EncryptedId>) -> (u8, u64) {
    match *b {
        Bound::Unbounded => (2, 0),
        Bound::Included(v) => (1, v.0),
        Bound::Excluded(v) => match v.0.checked_sub(1) {
            Some(n) => (1, n),
            None => (0, 0),
        },
    }
}

impl RangeBounds<EncryptedId> for IdRange {
    fn start_bound(&self) -> Bound<&EncryptedId> {
        self.lo.as_ref()
    }

    fn end_bound(&self) -> Bound<&EncryptedId> {
        self.hi.as_ref()
    }
}

impl fmt::Display for IdRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lo {
            Bound::Unbounded => write!(f, "(-inf")?,
            Bound::Included(v) => write!(f, "[{v}")?,
            Bound::Excluded(v) => write!(f, "({v}")?,
        }
        match self.hi {
            Bound::Unbounded => write!(f, ", +inf)"),
            Bound::Included(v) => write!(f, ", {v}]"),
            Bound::Excluded(v) => write!(f, ", {v})"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireRange {
    lo: String,
    lo_inc: bool,
    hi: String,
    hi_inc: bool,
}

fn encode_bound(b: Bound<EncryptedId>, inf: &str) -> (String, bool) {
    match b {
        Bound::Unbounded => (inf.to_string(), false),
        Bound::Included(v) => (v.to_string(), true),
        Bound::Excluded(v) => (v.to_string(), false),
    }
}

fn decode_bound(s: &str, inclusive: bool, inf: &str) -> std::result::Result<Bound<EncryptedId>, String> {
    if s == inf {
        return Ok(Bound::Unbounded);
    }
    let v: EncryptedId = s.parse().map_err(|_| format!("bad range endpoint `{s}`"))?;
    Ok(if inclusive {
        Bound::Included(v)
    } else {
        Bound::Excluded(v)
    })
}

impl Serialize for IdRange {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (lo, lo_inc) = encode_bound(self.lo, "-inf");
        let (hi, hi_inc) = encode_bound(self.hi, "+inf");
        WireRange { lo, lo_inc, hi, hi_inc }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IdRange {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let w = WireRange::deserialize(deserializer)?;
        let lo = decode_bound(&w.lo, w.lo_inc, "-inf").map_err(serde::de::Error::custom)?;
        let hi = decode_bound(&w.hi, w.hi_inc, "+inf").map_err(serde::de::Error::custom)?;
        Ok(IdRange { lo, hi })
    }
}

/// A k-respecting sub-interval of a bucket, with the number of identifier
/// values (tombstones included) it holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CandidateRange {
    pub range: IdRange,
    pub count: usize,
}
