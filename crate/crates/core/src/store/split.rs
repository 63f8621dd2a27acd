//! Timestamp-ordered candidate-range construction inside one bucket.
//!
//! Identifiers are fed in `(timestamp, identifier)` order. A bucket starts as a
//! single range; whenever a range holds `2k` identifiers it is split at its
//! `k`-th smallest identifier `v` into `[lo, v]` and `(v, hi]`. Feeding the
//! first (same-timestamp) batch in ascending order yields consecutive runs of
//! `k`, the last run extending to the bucket's high end and absorbing the
//! remainder, so the initial grouping needs no separate code path.
//!
//! Each cell remembers the range it was split from, so two adjacent cells
//! that are both still unsplit halves of one parent can be told apart from
//! mere neighbours.

use std::ops::Bound;

use crate::opes::EncryptedId;

use super::range::{CandidateRange, IdRange};

#[derive(Clone, Debug)]
struct Cell {
    range: IdRange,
    members: Vec<EncryptedId>,
    parent: Option<IdRange>,
}

/// A cell as seen from outside: its range, count and split parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Leaf {
    pub(crate) cand: CandidateRange,
    pub(crate) parent: Option<IdRange>,
}

impl Leaf {
    /// `self` and `next` are the two halves of the same split.
    pub(crate) fn is_sibling_of(&self, next: &Leaf) -> bool {
        self.parent.is_some()
            && self.parent == next.parent
            && self.parent == Some(self.cand.range.hull(&next.cand.range))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SplitState {
    k: usize,
    cells: Vec<Cell>,
}

impl SplitState {
    pub(crate) fn new(bounds: IdRange, k: usize) -> Self {
        assert!(k >= 1, "k must be positive");
        SplitState {
            k,
            cells: vec![Cell {
                range: bounds,
                members: Vec::new(),
                parent: None,
            }],
        }
    }

    /// Feed one identifier. Must lie inside the bucket and not be present.
    pub(crate) fn insert(&mut self, id: EncryptedId) {
        let i = self.cells.partition_point(|c| c.range.ends_before(id));
        debug_assert!(i < self.cells.len() && self.cells[i].range.contains_id(id));
        let cell = &mut self.cells[i];
        let pos = cell.members.partition_point(|&m| m < id);
        debug_assert!(cell.members.get(pos) != Some(&id));
        cell.members.insert(pos, id);
        if cell.members.len() == 2 * self.k {
            let upper = cell.members.split_off(self.k);
            let v = cell.members[self.k - 1];
            let whole = cell.range;
            let right = Cell {
                range: IdRange {
                    lo: Bound::Excluded(v),
                    hi: whole.hi,
                },
                members: upper,
                parent: Some(whole),
            };
            cell.range.hi = Bound::Included(v);
            cell.parent = Some(whole);
            self.cells.insert(i + 1, right);
        }
    }

    #[cfg(test)]
    pub(crate) fn ranges(&self) -> Vec<CandidateRange> {
        self.leaves().into_iter().map(|l| l.cand).collect()
    }

    pub(crate) fn leaves(&self) -> Vec<Leaf> {
        self.cells
            .iter()
            .map(|c| Leaf {
                cand: CandidateRange {
                    range: c.range,
                    count: c.members.len(),
                },
                parent: c.parent,
            })
            .collect()
    }
}
