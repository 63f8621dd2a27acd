use std::ops::Bound;

use proptest::prelude::*;

use super::*;
use crate::fixtures::{f13_key, f13_store, timeline_cipher as c, timeline_store};
use crate::opes::keygen;

fn store_1024(seed: u64) -> TimestampedStore {
    TimestampedStore::new(keygen(seed, 1024).unwrap())
}

fn f13(p: u64) -> EncryptedId {
    f13_key().encrypt(p).unwrap()
}

#[test]
fn batch_timestamps() {
    let mut s = store_1024(1);
    for p in [1, 2, 3, 4] {
        assert_eq!(s.insert(p, Attrs::new()).unwrap(), 0);
    }
    assert!(s.entries().all(|e| e.ts == 0));

    let mut s = store_1024(1);
    let mut stamps = Vec::new();
    for batch in [[10, 11], [12, 13], [14, 15]] {
        for p in batch {
            s.insert(p, Attrs::new()).unwrap();
        }
        s.tick();
    }
    for p in 10..16 {
        let id = s.key().encrypt(p).unwrap();
        stamps.push(s.entry(id).unwrap().ts);
    }
    assert_eq!(stamps, [0, 0, 1, 1, 2, 2]);
}

#[test]
fn duplicates_and_out_of_domain() {
    let mut s = store_1024(1);
    s.insert(7, Attrs::new()).unwrap();
    assert!(matches!(s.insert(7, Attrs::new()), Err(Error::DuplicateId(7))));
    assert!(matches!(s.insert(1024, Attrs::new()), Err(Error::OutOfDomain { .. })));
    s.delete(7).unwrap();
    // tombstones are permanent
    assert!(matches!(s.insert(7, Attrs::new()), Err(Error::DuplicateId(7))));
}

#[test]
fn delete_keeps_selectivity_hides_tuple() {
    let mut s = f13_store();
    let r = IdRange::closed(f13(0), f13(20));
    assert_eq!(s.selectivity(&r), 4);
    assert_eq!(s.query(&r).len(), 4);
    s.delete(15).unwrap();
    assert_eq!(s.selectivity(&r), 4);
    let q = s.query(&r);
    assert_eq!(q.len(), 3);
    assert!(q.iter().all(|(id, _)| *id != f13(15)));
    assert!(matches!(s.delete(15), Err(Error::NotFound(15))));
}

#[test]
fn f13_selectivities() {
    let s = f13_store();
    assert_eq!(s.selectivity(&IdRange::closed(f13(0), f13(1000))), 13);
    assert_eq!(s.selectivity(&IdRange::closed(f13(0), f13(10))), 2);
    assert_eq!(s.selectivity(&IdRange::closed(f13(5), f13(20))), 3);
    assert_eq!(store_1024(0).selectivity(&IdRange::full()), 0);
}

#[test]
fn f13_medians() {
    let s = f13_store();
    assert_eq!(s.median(&IdRange::full()).unwrap(), f13(199));
    let left = IdRange::at_most(f13(199));
    assert_eq!(s.selectivity(&left), 7);
    assert_eq!(s.median(&left).unwrap(), f13(20));
    assert_eq!(s.median(&IdRange::point(f13(512))).unwrap(), f13(512));
    assert!(matches!(s.median(&IdRange::point(f13(513))), Err(Error::EmptyRange)));
}

#[test]
fn query_examples() {
    let mut s = f13_store();
    assert_eq!(s.query(&IdRange::point(f13(100))).len(), 1);
    assert_eq!(s.query(&IdRange::at_most(f13(20))).len(), 4);
    s.delete(150).unwrap();
    let both = IdRange::closed(f13(100), f13(150));
    assert_eq!(s.query(&both).len(), 1);
    assert_eq!(s.query_attr("label", "p100").len(), 1);
    assert_eq!(s.query_attr("label", "p150").len(), 0);
}

#[test]
fn fixed_count_buckets() {
    let mut s = store_1024(4);
    for p in 0..100 {
        s.insert(p * 7, Attrs::new()).unwrap();
    }
    let one = s.partition_buckets(BucketPolicy::FixedCount(100)).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].bounds, IdRange::full());

    let two = s.partition_buckets(BucketPolicy::FixedCount(50)).unwrap();
    let mut ids: Vec<EncryptedId> = s.entries().map(|e| e.id).collect();
    ids.sort();
    assert_eq!(two.len(), 2);
    assert_eq!(two[0].bounds.hi, Bound::Included(ids[49]));
    assert_eq!(two[1].bounds.lo, Bound::Excluded(ids[49]));
    assert!(matches!(
        s.partition_buckets(BucketPolicy::FixedCount(0)),
        Err(Error::InvalidPolicy(_))
    ));
}

#[test]
fn equal_width_buckets() {
    let mut s = store_1024(9);
    let b = s.partition_buckets(BucketPolicy::EqualWidth(4)).unwrap();
    let key = s.key().clone();
    let cuts: Vec<EncryptedId> = [256, 512, 768].iter().map(|&p| key.encrypt(p).unwrap()).collect();
    assert_eq!(b.len(), 4);
    for j in 0..3 {
        assert_eq!(b[j].bounds.hi, Bound::Excluded(cuts[j]));
        assert_eq!(b[j + 1].bounds.lo, Bound::Included(cuts[j]));
    }
    assert!(s.partition_buckets(BucketPolicy::EqualWidth(0)).is_err());
}

// The bucket of interest in the timeline fixture is the second one.
const B: usize = 1;

#[test]
fn timeline_initial_ranges() {
    let s = timeline_store(0);
    let r = s.bucket_ranges(B, 2);
    let lo = s.buckets()[B].bounds.lo;
    let hi = s.buckets()[B].bounds.hi;
    assert_eq!(r.len(), 2);
    assert_eq!(
        r[0].range,
        IdRange {
            lo,
            hi: Bound::Included(c('l'))
        }
    );
    assert_eq!(
        r[1].range,
        IdRange {
            lo: Bound::Excluded(c('l')),
            hi
        }
    );
}

#[test]
fn timeline_first_split() {
    let s = timeline_store(1);
    let r = s.bucket_ranges(B, 2);
    let lo = s.buckets()[B].bounds.lo;
    assert_eq!(r.len(), 3);
    assert_eq!(
        r[0].range,
        IdRange {
            lo,
            hi: Bound::Included(c('d'))
        }
    );
    assert_eq!(
        r[1].range,
        IdRange {
            lo: Bound::Excluded(c('d')),
            hi: Bound::Included(c('l'))
        }
    );
}

#[test]
fn timeline_full_replay() {
    let s = timeline_store(4);
    let raw = s.bucket_ranges(B, 2);
    assert_eq!(raw.len(), 9);
    let cover = IdRange::closed(c('f'), c('v'));
    assert_eq!(raw.iter().filter(|r| r.range.overlaps(&cover)).count(), 7);
    let cands = s.candidate_ranges(&cover, 2).unwrap();
    assert_eq!(cands.len(), 5);
    let q = cands.iter().find(|r| r.range.contains_id(c('q'))).unwrap();
    assert_eq!(
        q.range,
        IdRange {
            lo: Bound::Excluded(c('p')),
            hi: Bound::Included(c('s'))
        }
    );
    assert!(cands.iter().all(|r| r.count >= 2));
}

#[test]
fn exactly_k_identifiers_single_range() {
    let mut s = store_1024(2);
    for p in [5, 50, 500] {
        s.insert(p, Attrs::new()).unwrap();
    }
    let r = s.candidate_ranges(&IdRange::full(), 3).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].range, s.buckets()[0].bounds);
    assert_eq!(r[0].count, 3);
    assert!(matches!(
        s.candidate_ranges(&IdRange::above(EncryptedId(u64::MAX)), 3),
        Err(Error::EmptyRange)
    ));
}

#[test]
fn sparse_buckets_fold_into_neighbours() {
    // four equal-width buckets over [0, 1024): 1, 5, 0 and 1 identifiers
    let mut s = store_1024(3);
    for p in [10, 300, 320, 340, 360, 380, 1000] {
        s.insert(p, Attrs::new()).unwrap();
    }
    s.partition_buckets(BucketPolicy::EqualWidth(4)).unwrap();
    let key = s.key().clone();
    let e = |p| key.encrypt(p).unwrap();
    let first = s.range_containing(e(10), 2).unwrap();
    assert_eq!(first.range, IdRange::at_most(e(320)));
    assert_eq!(first.count, 3);
    // the trailing run (an empty and a single-id bucket) joins the last range
    let last = s.range_containing(e(1000), 2).unwrap();
    assert_eq!(last.range, IdRange::above(e(320)));
    assert_eq!(last.count, 4);
    let all = s.candidate_ranges(&IdRange::full(), 2).unwrap();
    assert_eq!(all.iter().map(|c| c.count).collect::<Vec<_>>(), vec![3, 4]);
    // with every bucket sparse, the whole store is one range
    let k = 6;
    assert_eq!(
        s.candidate_ranges(&IdRange::closed(e(500), e(600)), k).unwrap(),
        vec![CandidateRange {
            range: IdRange::full(),
            count: 7
        }]
    );
}

#[test]
fn offline_empty_store_has_one_open_range() {
    let mut s = store_1024(2);
    s.enable_offline(3);
    let r = s.bucket_ranges(0, 3);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].count, 0);
}

#[test]
fn rekey_preserves_structure() {
    let mut s = timeline_store(4);
    let before: Vec<usize> = s.bucket_ranges(B, 2).iter().map(|r| r.count).collect();
    s.rekey(Arc::new(keygen(777, 1024).unwrap())).unwrap();
    let after: Vec<usize> = s.bucket_ranges(B, 2).iter().map(|r| r.count).collect();
    assert_eq!(before, after);
    assert_eq!(s.len(), 52);
}

#[test]
fn event_log_round_trip() {
    let s = timeline_store(4);
    let events = s.to_events();
    let mut buf = Vec::new();
    write_events(&mut buf, &events).unwrap();
    let back = read_events(buf.as_slice()).unwrap();
    let r = TimestampedStore::from_events(s.key().clone(), &back, BucketPolicy::EqualWidth(4)).unwrap();
    assert_eq!(r.bucket_ranges(B, 2), s.bucket_ranges(B, 2));
}

// --- properties over random insertion schedules ---

#[derive(Clone, Debug)]
struct Schedule {
    batches: Vec<Vec<u64>>,
    bucket: usize,
    k: usize,
}

fn schedule() -> impl Strategy<Value = Schedule> {
    (
        proptest::collection::btree_set(0u64..2000, 20..200),
        2usize..6,
        1usize..5,
        5usize..40,
        any::<u64>(),
    )
        .prop_map(|(ids, nb, k, bucket, shuffle)| {
            let mut ids: Vec<u64> = ids.into_iter().collect();
            // deterministic shuffle
            let n = ids.len();
            let mut state = shuffle | 1;
            for i in (1..n).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                ids.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let per = n.div_ceil(nb);
            let batches = ids.chunks(per).map(|c| c.to_vec()).collect();
            Schedule { batches, bucket, k }
        })
}

fn events_of(s: &Schedule, upto: usize) -> Vec<Event> {
    s.batches[..upto]
        .iter()
        .enumerate()
        .flat_map(|(ts, b)| {
            b.iter().map(move |&p| Event::Insert {
                plain_id: p,
                ts: ts as u64,
                attrs: Attrs::new(),
            })
        })
        .collect()
}

fn build(s: &Schedule, upto: usize) -> TimestampedStore {
    let key: Arc<dyn OrderPreservingScheme> = Arc::new(keygen(31, 2000).unwrap());
    TimestampedStore::from_events(key, &events_of(s, upto), BucketPolicy::FixedCount(s.bucket)).unwrap()
}

fn brute_count(store: &TimestampedStore, r: &IdRange) -> usize {
    store.entries().filter(|e| r.contains_id(e.id)).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_is_deterministic(s in schedule()) {
        let a = build(&s, s.batches.len());
        let b = build(&s, s.batches.len());
        for i in 0..a.buckets().len() {
            prop_assert_eq!(a.bucket_ranges(i, s.k), b.bucket_ranges(i, s.k));
        }
    }

    #[test]
    fn ranges_partition_buckets_and_counts_are_exact(s in schedule()) {
        let st = build(&s, s.batches.len());
        for (i, b) in st.buckets().iter().enumerate() {
            let ranges = st.bucket_ranges(i, s.k);
            prop_assert_eq!(ranges.first().unwrap().range.lo, b.bounds.lo);
            prop_assert_eq!(ranges.last().unwrap().range.hi, b.bounds.hi);
            for w in ranges.windows(2) {
                let Bound::Included(v) = w[0].range.hi else { panic!("inner bound") };
                prop_assert_eq!(w[1].range.lo, Bound::Excluded(v));
            }
            let held = brute_count(&st, &b.bounds);
            for r in &ranges {
                prop_assert_eq!(r.count, brute_count(&st, &r.range));
                if held >= s.k {
                    prop_assert!(r.count >= s.k && r.count < 3 * s.k);
                }
            }
        }
    }

    #[test]
    fn candidates_hold_at_least_k(s in schedule(), a in 0u64..2000, w in 0u64..2000) {
        let st = build(&s, s.batches.len());
        let key = st.key().clone();
        let cover = IdRange::closed(key.encrypt(a).unwrap(), key.encrypt((a + w).min(1999)).unwrap());
        prop_assume!(st.selectivity(&cover) >= s.k);
        let cands = st.candidate_ranges(&cover, s.k).unwrap();
        prop_assert!(!cands.is_empty());
        for c in &cands {
            prop_assert!(c.range.overlaps(&cover));
            prop_assert_eq!(c.count, brute_count(&st, &c.range));
            prop_assert!(c.count >= s.k);
        }
        for w in cands.windows(2) {
            prop_assert!(!w[0].range.overlaps(&w[1].range));
        }
        // every held identifier inside cover lands in exactly one candidate
        for e in st.entries().filter(|e| cover.contains_id(e.id)) {
            prop_assert_eq!(cands.iter().filter(|c| c.range.contains_id(e.id)).count(), 1);
        }
    }

    #[test]
    fn nesting_under_growth(s in schedule()) {
        let mut prev = build(&s, 1);
        for upto in 2..=s.batches.len() {
            let next = build(&s, upto);
            for e in prev.entries() {
                let before = prev.range_containing(e.id, s.k).unwrap();
                let after = next.range_containing(e.id, s.k).unwrap();
                prop_assert!(after.range.is_subset_of(&before.range));
                prop_assert_eq!(after.count, brute_count(&next, &after.range));
                if next.len() >= s.k {
                    prop_assert!(after.count >= s.k);
                }
            }
            prev = next;
        }
    }

    #[test]
    fn offline_matches_replay(s in schedule()) {
        let key: Arc<dyn OrderPreservingScheme> = Arc::new(keygen(31, 2000).unwrap());
        let first = events_of(&s, 1);
        let mut inc = TimestampedStore::from_events(key, &first, BucketPolicy::FixedCount(s.bucket)).unwrap();
        inc.enable_offline(s.k);
        let rest = events_of(&s, s.batches.len());
        for (n, e) in rest[first.len()..].iter().enumerate() {
            inc.apply(e).unwrap();
            if n % 7 == 0 {
                let scratch = build_prefix(&s, &rest[..first.len() + n + 1]);
                for i in 0..inc.buckets().len() {
                    prop_assert_eq!(inc.bucket_ranges(i, s.k), scratch.bucket_ranges(i, s.k));
                }
            }
        }
        let scratch = build(&s, s.batches.len());
        for i in 0..inc.buckets().len() {
            prop_assert_eq!(inc.bucket_ranges(i, s.k), scratch.bucket_ranges(i, s.k));
        }
    }

    #[test]
    fn selectivity_and_median_match_brute_force(s in schedule(), a in 0u64..2000, b in 0u64..2000, c in 0u64..2000, d in 0u64..2000) {
        let st = build(&s, s.batches.len());
        let key = st.key().clone();
        let (a, b) = (a.min(b), a.max(b));
        let (c, d) = (a.min(c).min(d), b.max(c).max(d));
        let inner = IdRange::closed(key.encrypt(a).unwrap(), key.encrypt(b).unwrap());
        let outer = IdRange::closed(key.encrypt(c).unwrap(), key.encrypt(d).unwrap());
        let n = st.selectivity(&inner);
        prop_assert_eq!(n, brute_count(&st, &inner));
        prop_assert!(n <= st.selectivity(&outer));
        if n > 0 {
            let m = st.median(&inner).unwrap();
            prop_assert!(inner.contains_id(m));
            let at_or_below = st.entries().filter(|e| inner.contains_id(e.id) && e.id <= m).count();
            prop_assert_eq!(at_or_below, n.div_ceil(2));
        }
    }

    #[test]
    fn deletes_keep_selectivity(s in schedule(), pick in any::<proptest::sample::Index>()) {
        let mut st = build(&s, s.batches.len());
        let all: Vec<u64> = st.entries().map(|e| e.plain_id).collect();
        let victim = all[pick.index(all.len())];
        let full = IdRange::full();
        let (sel, live) = (st.selectivity(&full), st.query(&full).len());
        st.delete(victim).unwrap();
        prop_assert_eq!(st.selectivity(&full), sel);
        prop_assert_eq!(st.query(&full).len(), live - 1);
    }
}

fn build_prefix(s: &Schedule, events: &[Event]) -> TimestampedStore {
    let key: Arc<dyn OrderPreservingScheme> = Arc::new(keygen(31, 2000).unwrap());
    TimestampedStore::from_events(key, events, BucketPolicy::FixedCount(s.bucket)).unwrap()
}
