//! A data service's timestamped, tombstone-preserving dataset.
//!
//! Every identifier ever inserted stays in the store: deletion only flips a
//! tombstone flag, so selectivities and candidate ranges are computed over a
//! set that can only grow. Buckets are fixed once, when the service joins the
//! system, and candidate ranges live inside them.

mod eventlog;
mod range;
mod split;

use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::Arc;

pub use eventlog::{read_events, write_events, Event};
pub use range::{CandidateRange, IdRange};

use crate::error::{Error, Result};
use crate::opes::{EncryptedId, OrderPreservingScheme};
use split::{Leaf, SplitState};

pub type Attrs = BTreeMap<String, String>;

/// Fixed-count bucket size used when nothing else is configured.
pub const DEFAULT_BUCKET_SIZE: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreEntry {
    pub id: EncryptedId,
    /// Service-side only; never leaves the service.
    pub plain_id: u64,
    pub attrs: Attrs,
    pub ts: u64,
    pub tombstone: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bucket {
    pub bounds: IdRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BucketPolicy {
    /// `n` stored identifiers per bucket, boundary at the `n`-th identifier
    /// of each group.
    FixedCount(usize),
    /// `m` buckets of equal plaintext width, bounds mapped through the key.
    EqualWidth(u64),
    WholeDomain,
}

impl Default for BucketPolicy {
    fn default() -> Self {
        BucketPolicy::FixedCount(DEFAULT_BUCKET_SIZE)
    }
}

#[derive(Clone, Debug)]
struct OfflineRanges {
    states: Vec<SplitState>,
    // identifiers stamped with the still-open timestamp, ascending
    pending: Vec<Vec<EncryptedId>>,
}

#[derive(Clone, Debug)]
pub struct TimestampedStore {
    key: Arc<dyn OrderPreservingScheme>,
    entries: BTreeMap<EncryptedId, StoreEntry>,
    order: Vec<EncryptedId>,
    buckets: Vec<Bucket>,
    next_ts: u64,
    version: u64,
    offline: BTreeMap<usize, OfflineRanges>,
}

impl TimestampedStore {
    pub fn new(key: impl OrderPreservingScheme + 'static) -> Self {
        Self::with_scheme(Arc::new(key))
    }

    pub fn with_scheme(key: Arc<dyn OrderPreservingScheme>) -> Self {
        TimestampedStore {
            key,
            entries: BTreeMap::new(),
            order: Vec::new(),
            buckets: vec![Bucket {
                bounds: IdRange::full(),
            }],
            next_ts: 0,
            version: 0,
            offline: BTreeMap::new(),
        }
    }

    /// Replay an event log. Buckets are drawn with `policy` right after the
    /// first timestamp batch, i.e. when the service joins.
    pub fn from_events(key: Arc<dyn OrderPreservingScheme>, events: &[Event], policy: BucketPolicy) -> Result<Self> {
        let mut store = Self::with_scheme(key);
        let first_ts = events.first().map_or(0, Event::ts);
        let split = events.iter().position(|e| e.ts() != first_ts).unwrap_or(events.len());
        store.apply_all(&events[..split])?;
        store.partition_buckets(policy)?;
        store.apply_all(&events[split..])?;
        Ok(store)
    }

    pub fn key(&self) -> &Arc<dyn OrderPreservingScheme> {
        &self.key
    }

    /// Identifier values held, tombstones included.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn live_len(&self) -> usize {
        self.entries.values().filter(|e| !e.tombstone).count()
    }

    /// Timestamp the next insertion will carry.
    pub fn next_ts(&self) -> u64 {
        self.next_ts
    }

    /// Number of mutations applied so far; identifies a snapshot.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn entries(&self) -> impl Iterator<Item = &StoreEntry> {
        self.entries.values()
    }

    pub fn entry(&self, id: EncryptedId) -> Option<&StoreEntry> {
        self.entries.get(&id)
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    /// Close the current batch; later insertions get a fresh timestamp.
    pub fn tick(&mut self) -> u64 {
        let ts = self.next_ts + 1;
        self.advance_to(ts).expect("moving forward");
        ts
    }

    /// Move the clock forward to `ts`.
    pub fn advance_to(&mut self, ts: u64) -> Result<()> {
        if ts < self.next_ts {
            return Err(Error::Invalid(format!(
                "timestamp {ts} is behind the store clock {}",
                self.next_ts
            )));
        }
        if ts > self.next_ts {
            for off in self.offline.values_mut() {
                for (state, pending) in off.states.iter_mut().zip(off.pending.iter_mut()) {
                    for id in pending.drain(..) {
                        state.insert(id);
                    }
                }
            }
            self.next_ts = ts;
        }
        Ok(())
    }

    pub fn insert(&mut self, plain_id: u64, attrs: Attrs) -> Result<u64> {
        let id = self.admit(plain_id)?;
        let pos = self.order.partition_point(|&v| v < id);
        self.order.insert(pos, id);
        self.record(id, plain_id, attrs);
        Ok(self.next_ts)
    }

    pub fn insert_at(&mut self, plain_id: u64, ts: u64, attrs: Attrs) -> Result<u64> {
        self.advance_to(ts)?;
        self.insert(plain_id, attrs)
    }

    /// Tombstone the entry; returns the deletion timestamp.
    pub fn delete(&mut self, plain_id: u64) -> Result<u64> {
        let id = self.key.encrypt(plain_id)?;
        match self.entries.get_mut(&id) {
            Some(e) if !e.tombstone => {
                e.tombstone = true;
                self.version += 1;
                Ok(self.next_ts)
            }
            _ => Err(Error::NotFound(plain_id)),
        }
    }

    pub fn delete_at(&mut self, plain_id: u64, ts: u64) -> Result<u64> {
        self.advance_to(ts)?;
        self.delete(plain_id)
    }

    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::Insert { plain_id, ts, attrs } => self.insert_at(*plain_id, *ts, attrs.clone()).map(drop),
            Event::Delete { plain_id, ts } => self.delete_at(*plain_id, *ts).map(drop),
        }
    }

    /// Apply many events, rebuilding the sorted index once at the end.
    pub fn apply_all(&mut self, events: &[Event]) -> Result<()> {
        let mut res = Ok(());
        for event in events {
            res = match event {
                Event::Insert { plain_id, ts, attrs } => self.advance_to(*ts).and_then(|_| {
                    let id = self.admit(*plain_id)?;
                    self.record(id, *plain_id, attrs.clone());
                    Ok(())
                }),
                Event::Delete { plain_id, ts } => self.delete_at(*plain_id, *ts).map(drop),
            };
            if res.is_err() {
                break;
            }
        }
        self.order = self.entries.keys().copied().collect();
        res
    }

    /// Snapshot as an event log that replays to the same entries.
    pub fn to_events(&self) -> Vec<Event> {
        let mut ins: Vec<&StoreEntry> = self.entries.values().collect();
        ins.sort_by_key(|e| (e.ts, e.id));
        let mut out: Vec<Event> = ins
            .iter()
            .map(|e| Event::Insert {
                plain_id: e.plain_id,
                ts: e.ts,
                attrs: e.attrs.clone(),
            })
            .collect();
        // deletion times are not retained; replay them at the final clock
        out.extend(self.entries.values().filter(|e| e.tombstone).map(|e| Event::Delete {
            plain_id: e.plain_id,
            ts: self.next_ts.max(e.ts),
        }));
        out
    }

    fn admit(&self, plain_id: u64) -> Result<EncryptedId> {
        let id = self.key.encrypt(plain_id)?;
        // tombstones are permanent: re-inserting a deleted identifier is refused
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateId(plain_id));
        }
        Ok(id)
    }

    fn record(&mut self, id: EncryptedId, plain_id: u64, attrs: Attrs) {
        let ts = self.next_ts;
        self.entries.insert(
            id,
            StoreEntry {
                id,
                plain_id,
                attrs,
                ts,
                tombstone: false,
            },
        );
        self.version += 1;
        if !self.offline.is_empty() {
            let b = self.bucket_index(id);
            for off in self.offline.values_mut() {
                let pending = &mut off.pending[b];
                let pos = pending.partition_point(|&v| v < id);
                pending.insert(pos, id);
            }
        }
    }

    fn rank_span(&self, range: &IdRange) -> (usize, usize) {
        match range.int_bounds() {
            Some((a, b)) => (
                self.order.partition_point(|v| v.0 < a),
                self.order.partition_point(|v| v.0 <= b),
            ),
            None => (0, 0),
        }
    }

    /// Distinct identifier values (live and tombstoned) inside `range`.
    pub fn selectivity(&self, range: &IdRange) -> usize {
        let (lo, hi) = self.rank_span(range);
        hi - lo
    }

    /// The `ceil(n/2)`-th smallest identifier inside `range`.
    pub fn median(&self, range: &IdRange) -> Result<EncryptedId> {
        let (lo, hi) = self.rank_span(range);
        let n = hi - lo;
        if n == 0 {
            return Err(Error::EmptyRange);
        }
        Ok(self.order[lo + n.div_ceil(2) - 1])
    }

    /// Live tuples inside `range`, ascending by ciphertext.
    pub fn query(&self, range: &IdRange) -> Vec<(EncryptedId, Attrs)> {
        if range.is_empty() {
            return Vec::new();
        }
        self.entries
            .range(*range)
            .filter(|(_, e)| !e.tombstone)
            .map(|(id, e)| (*id, e.attrs.clone()))
            .collect()
    }

    /// Live tuples whose attribute `attr` equals `value`.
    pub fn query_attr(&self, attr: &str, value: &str) -> Vec<(EncryptedId, Attrs)> {
        self.entries
            .values()
            .filter(|e| !e.tombstone && e.attrs.get(attr).is_some_and(|v| v == value))
            .map(|e| (e.id, e.attrs.clone()))
            .collect()
    }

    /// Draw buckets with `policy` over the current contents and install them.
    pub fn partition_buckets(&mut self, policy: BucketPolicy) -> Result<Vec<Bucket>> {
        let mut cuts: Vec<IdRange> = Vec::new();
        match policy {
            BucketPolicy::WholeDomain => {}
            BucketPolicy::FixedCount(0) => return Err(Error::InvalidPolicy("bucket size must be positive".into())),
            BucketPolicy::FixedCount(size) => {
                let mut lo = Bound::Unbounded;
                let mut end = size;
                while end < self.order.len() {
                    let v = self.order[end - 1];
                    cuts.push(IdRange {
                        lo,
                        hi: Bound::Included(v),
                    });
                    lo = Bound::Excluded(v);
                    end += size;
                }
                cuts.push(IdRange {
                    lo,
                    hi: Bound::Unbounded,
                });
            }
            BucketPolicy::EqualWidth(m) => {
                let d = self.key.domain_size();
                if m == 0 || m > d {
                    return Err(Error::InvalidPolicy(format!(
                        "{m} equal-width buckets over a domain of {d}"
                    )));
                }
                let mut lo = Bound::Unbounded;
                for j in 1..m {
                    let p = ((d as u128 * j as u128) / m as u128) as u64;
                    let c = self.key.encrypt(p)?;
                    cuts.push(IdRange {
                        lo,
                        hi: Bound::Excluded(c),
                    });
                    lo = Bound::Included(c);
                }
                cuts.push(IdRange {
                    lo,
                    hi: Bound::Unbounded,
                });
            }
        }
        if cuts.is_empty() {
            cuts.push(IdRange::full());
        }
        self.buckets = cuts.into_iter().map(|bounds| Bucket { bounds }).collect();
        let ks: Vec<usize> = self.offline.keys().copied().collect();
        for k in ks {
            self.enable_offline(k);
        }
        Ok(self.buckets.clone())
    }

    fn bucket_index(&self, id: EncryptedId) -> usize {
        self.buckets.partition_point(|b| b.bounds.ends_before(id))
    }

    /// All candidate ranges of one bucket for protection factor `k`, before
    /// sparse buckets are folded into their neighbours.
    pub fn bucket_ranges(&self, bucket: usize, k: usize) -> Vec<CandidateRange> {
        self.bucket_leaves(bucket, k).into_iter().map(|l| l.cand).collect()
    }

    fn bucket_leaves(&self, bucket: usize, k: usize) -> Vec<Leaf> {
        if let Some(off) = self.offline.get(&k) {
            let pending = &off.pending[bucket];
            if pending.is_empty() {
                return off.states[bucket].leaves();
            }
            let mut state = off.states[bucket].clone();
            for &id in pending {
                state.insert(id);
            }
            return state.leaves();
        }
        self.replay_bucket(bucket, k, u64::MAX).leaves()
    }

    // Split history of a bucket over entries stamped before `until`.
    fn replay_bucket(&self, bucket: usize, k: usize, until: u64) -> SplitState {
        let bounds = self.buckets[bucket].bounds;
        let mut elems: Vec<(u64, EncryptedId)> = self
            .entries
            .range(bounds)
            .filter(|(_, e)| e.ts < until)
            .map(|(id, e)| (e.ts, *id))
            .collect();
        // ids arrive ascending; a stable sort on ts gives (ts, id) order
        elems.sort_by_key(|&(ts, _)| ts);
        let mut state = SplitState::new(bounds, k);
        for (_, id) in elems {
            state.insert(id);
        }
        state
    }

    // A bucket holding fewer than `k` identifiers.
    fn is_sparse(&self, bucket: usize, k: usize) -> bool {
        self.entries.range(self.buckets[bucket].bounds).take(k).count() < k
    }

    /// Ranges overlapping `cover` after folding sparse buckets.
    ///
    /// A run of buckets holding fewer than `k` identifiers each is folded into
    /// the first range of the next bucket, or into the last range of the
    /// previous one when no bucket follows. The fold depends only on the
    /// store, never on `cover`, and only dissolves as buckets fill up, so
    /// the range holding an identifier keeps shrinking as the store grows.
    fn leaves(&self, cover: &IdRange, k: usize) -> Vec<Leaf> {
        let n = self.buckets.len();
        let Some(first) = self.buckets.iter().position(|b| b.bounds.overlaps(cover)) else {
            return Vec::new();
        };
        let last = self
            .buckets
            .iter()
            .rposition(|b| b.bounds.overlaps(cover))
            .expect("some bucket overlaps");
        let (mut lo, mut hi) = (first, last);
        while lo > 0 && (self.is_sparse(lo - 1, k) || self.is_sparse(lo, k)) {
            lo -= 1;
        }
        while hi + 1 < n && (self.is_sparse(hi + 1, k) || self.is_sparse(hi, k)) {
            hi += 1;
        }
        let mut out: Vec<Leaf> = Vec::new();
        let mut run: Option<CandidateRange> = None;
        for b in lo..=hi {
            let mut cells = self.bucket_leaves(b, k);
            if self.is_sparse(b, k) {
                let whole = cells
                    .iter()
                    .fold(run, |acc, c| Some(acc.map_or(c.cand, |a| merge(&a, &c.cand))));
                run = whole;
                continue;
            }
            if let Some(r) = run.take() {
                cells[0] = Leaf {
                    cand: merge(&r, &cells[0].cand),
                    parent: None,
                };
            }
            out.extend(cells);
        }
        if let Some(r) = run {
            match out.last_mut() {
                Some(l) => {
                    *l = Leaf {
                        cand: merge(&l.cand, &r),
                        parent: None,
                    }
                }
                None => out.push(Leaf { cand: r, parent: None }),
            }
        }
        out.retain(|l| l.cand.range.overlaps(cover));
        out
    }

    /// The candidate range holding `x` before any cover-dependent merge.
    pub fn range_containing(&self, x: EncryptedId, k: usize) -> Option<CandidateRange> {
        self.leaves(&IdRange::closed(x, x), k).first().map(|l| l.cand)
    }

    /// Candidate ranges covering `cover` for protection factor `k`.
    ///
    /// Ranges intersecting `cover` are returned in order. An edge range
    /// sticking out of `cover` is merged with its inward neighbour when the
    /// two are the halves of one split, which restores their parent range.
    /// Every returned range therefore is, or once was, a split-tree range, and
    /// ranges selected for the same identifier at different times are nested.
    pub fn candidate_ranges(&self, cover: &IdRange, k: usize) -> Result<Vec<CandidateRange>> {
        if cover.is_empty() {
            return Err(Error::EmptyRange);
        }
        if k == 0 {
            return Err(Error::Invalid("k must be positive".into()));
        }
        let mut hits = self.leaves(cover, k);
        if hits.len() >= 2 && !hits[0].cand.range.is_subset_of(cover) && hits[0].is_sibling_of(&hits[1]) {
            let first = hits.remove(0);
            hits[0].cand = merge(&first.cand, &hits[0].cand);
        }
        let n = hits.len();
        if n >= 2 && !hits[n - 1].cand.range.is_subset_of(cover) && hits[n - 2].is_sibling_of(&hits[n - 1]) {
            let last = hits.pop().expect("n >= 2");
            hits[n - 2].cand = merge(&hits[n - 2].cand, &last.cand);
        }
        Ok(hits.into_iter().map(|l| l.cand).collect())
    }

    /// Maintain candidate ranges for `k` incrementally from now on.
    pub fn enable_offline(&mut self, k: usize) {
        assert!(k >= 1, "k must be positive");
        let mut states = Vec::with_capacity(self.buckets.len());
        let mut pending = vec![Vec::new(); self.buckets.len()];
        for b in 0..self.buckets.len() {
            states.push(self.replay_bucket(b, k, self.next_ts));
        }
        for e in self.entries.values().filter(|e| e.ts == self.next_ts) {
            pending[self.bucket_index(e.id)].push(e.id);
        }
        self.offline.insert(k, OfflineRanges { states, pending });
    }

    pub fn disable_offline(&mut self, k: usize) {
        self.offline.remove(&k);
    }

    pub fn offline_enabled(&self, k: usize) -> bool {
        self.offline.contains_key(&k)
    }

    /// Re-encrypt every identifier and bucket bound under a new key.
    pub fn rekey(&mut self, key: Arc<dyn OrderPreservingScheme>) -> Result<()> {
        let remap = |b: Bound<EncryptedId>, old: &dyn OrderPreservingScheme| -> Result<Bound<EncryptedId>> {
            Ok(match b {
                Bound::Unbounded => Bound::Unbounded,
                Bound::Included(c) => Bound::Included(key.encrypt(old.decrypt(c)?)?),
                Bound::Excluded(c) => Bound::Excluded(key.encrypt(old.decrypt(c)?)?),
            })
        };
        let mut buckets = Vec::with_capacity(self.buckets.len());
        for b in &self.buckets {
            buckets.push(Bucket {
                bounds: IdRange {
                    lo: remap(b.bounds.lo, self.key.as_ref())?,
                    hi: remap(b.bounds.hi, self.key.as_ref())?,
                },
            });
        }
        let mut entries = BTreeMap::new();
        for e in self.entries.values() {
            let id = key.encrypt(e.plain_id)?;
            entries.insert(id, StoreEntry { id, ..e.clone() });
        }
        self.entries = entries;
        self.order = self.entries.keys().copied().collect();
        self.buckets = buckets;
        self.key = key;
        let ks: Vec<usize> = self.offline.keys().copied().collect();
        for k in ks {
            self.enable_offline(k);
        }
        Ok(())
    }
}

fn merge(a: &CandidateRange, b: &CandidateRange) -> CandidateRange {
    CandidateRange {
        range: a.range.hull(&b.range),
        count: a.count + b.count,
    }
}

#[cfg(test)]
mod tests;
