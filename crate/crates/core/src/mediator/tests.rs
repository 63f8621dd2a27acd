use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::audit::{Dir, TranscriptHeader};
use crate::error::Error;
use crate::fixtures::{f13_key, f13_store, timeline_cipher, timeline_store};
use crate::opes::{keygen, EncryptedId, OrderPreservingScheme};
use crate::service::{InProcTransport, MessageKind, Service, ServiceConfig};
use crate::store::{Attrs, IdRange, TimestampedStore};

fn session() -> Session {
    Session::new(TranscriptHeader {
        execution_id: "t".into(),
        plan_fingerprint: String::new(),
        plan: String::new(),
        alpha: 1,
        mode: "protected".into(),
        store_versions: BTreeMap::new(),
    })
}

fn transport(store: TimestampedStore) -> InProcTransport {
    InProcTransport::new(Arc::new(Service::new(ServiceConfig::new("S", 1), store).unwrap()))
}

fn c(p: u64) -> EncryptedId {
    f13_key().encrypt(p).unwrap()
}

fn probes(s: Session) -> Vec<(usize, Option<EncryptedId>)> {
    s.into_transcript()
        .events
        .into_iter()
        .filter(|e| e.dir == Dir::Resp && e.msg.kind == MessageKind::SelectivityResp)
        .map(|e| (e.msg.count.unwrap(), e.msg.mid))
        .collect()
}

fn store_with(ids: &[u64], domain: u64) -> TimestampedStore {
    let mut s = TimestampedStore::new(keygen(99, domain).unwrap());
    for &p in ids {
        s.insert(p, Attrs::from([("v".to_string(), p.to_string())])).unwrap();
    }
    s
}

#[test]
fn dataset_trace_on_f13() {
    let t = transport(f13_store());
    let s = session();
    let g = dataset_generalize(&s.endpoint(&t, "S", "n", "e"), c(15), 3, None).unwrap();
    assert_eq!(g.range, IdRange::at_most(c(20)));
    assert_eq!((g.count, g.rounds), (4, 3));
    assert_eq!(probes(s), vec![(13, Some(c(199))), (7, Some(c(20))), (4, Some(c(8)))]);
}

#[test]
fn dataset_stops_immediately_at_twice_threshold() {
    let t = transport(store_with(&[1, 5, 9, 13, 17, 21], 64));
    let s = session();
    let g = dataset_generalize(&s.endpoint(&t, "S", "n", "e"), EncryptedId(0), 3, None).unwrap();
    assert_eq!((g.range, g.count, g.rounds), (IdRange::full(), 6, 1));
}

#[test]
fn insufficient_data() {
    let t = transport(store_with(&[1, 2], 64));
    let s = session();
    let ep = s.endpoint(&t, "S", "n", "e");
    assert!(matches!(
        dataset_generalize(&ep, EncryptedId(0), 3, None),
        Err(Error::InsufficientData {
            available: 2,
            required: 3
        })
    ));
    assert!(matches!(
        domain_generalize(&ep, EncryptedId(0), 3),
        Err(Error::InsufficientData { .. })
    ));
    assert!(hybrid_generalize(&ep, EncryptedId(0), 1, 3, None).is_err());
}

#[test]
fn hybrid_on_timeline() {
    let t = transport(timeline_store(4));
    let s = session();
    let h = hybrid_generalize(&s.endpoint(&t, "S", "n", "e"), timeline_cipher('q'), 2, 5, None).unwrap();
    let cover = IdRange {
        lo: Bound::Excluded(timeline_cipher('e')),
        hi: Bound::Included(timeline_cipher('v')),
    };
    assert_eq!(h.cover.range, cover);
    assert_eq!(h.cover.rounds, 3);
    assert_eq!(h.candidates.len(), 5);
    assert_eq!(
        h.range,
        IdRange {
            lo: Bound::Excluded(timeline_cipher('p')),
            hi: Bound::Included(timeline_cipher('s')),
        }
    );
}

#[test]
fn hybrid_exactly_k_is_single_candidate() {
    let t = transport(store_with(&[3, 30, 40], 64));
    let s = session();
    let h = hybrid_generalize(&s.endpoint(&t, "S", "n", "e"), EncryptedId(0), 3, 1, None).unwrap();
    assert_eq!(h.candidates, vec![IdRange::full()]);
    assert_eq!(h.range, IdRange::full());
}

#[test]
fn domain_baseline_on_f13() {
    let t = transport(f13_store());
    let s = session();
    let g = domain_generalize(&s.endpoint(&t, "S", "n", "e"), c(15), 2).unwrap();
    assert_eq!(g.range, IdRange::at_most(c(16)));
    assert_eq!(g.count, 3);
    let p = probes(s);
    assert_eq!(p[0], (13, Some(c(512))));
    assert_eq!(p[1].0, 11);
    // the last probe is the half that fell below k and was abandoned
    assert_eq!(p.last().unwrap().0, 1);
}

#[test]
fn domain_baseline_exactly_k() {
    let t = transport(store_with(&[3, 30], 64));
    let s = session();
    let g = domain_generalize(&s.endpoint(&t, "S", "n", "e"), EncryptedId(0), 2).unwrap();
    assert_eq!((g.range, g.rounds), (IdRange::full(), 1));
}

#[test]
fn domain_baseline_backtracks_from_sparse_half() {
    // the left half of [0, 64) holds k - 1 = 2 subjects, the right half 5
    let t = transport(store_with(&[4, 9, 40, 45, 50, 55, 60], 64));
    let s = session();
    let key = keygen(99, 64).unwrap();
    let g = domain_generalize(&s.endpoint(&t, "S", "n", "e"), key.encrypt(9).unwrap(), 3).unwrap();
    assert_eq!(g.range, IdRange::full());
    assert_eq!(probes(s).iter().map(|p| p.0).collect::<Vec<_>>(), vec![7, 2]);
}

#[test]
fn cached_candidate_is_reused() {
    let t = transport(timeline_store(4));
    let s = session();
    let ep = s.endpoint(&t, "S", "n", "e");
    let mut cache = GenCache::default();
    let first = invoke_protected(&ep, timeline_cipher('p'), 2, 5, Some(&mut cache)).unwrap();
    assert!(!first.reused && first.rounds > 0);
    let second = invoke_protected(&ep, timeline_cipher('q'), 2, 5, Some(&mut cache)).unwrap();
    assert!(second.reused);
    assert_eq!(second.rounds, 0);
    assert_eq!(s.metrics().reused_ranges, 1);
    assert_eq!(s.metrics().selectivity_queries, first.rounds as u64);
}

#[test]
fn absent_target_yields_no_tuples() {
    let t = transport(timeline_store(4));
    let s = session();
    let x = timeline_key_cipher(275);
    let inv = invoke_protected(&s.endpoint(&t, "S", "n", "e"), x, 2, 2, None).unwrap();
    assert!(inv.tuples.is_empty());
    assert!(inv.returned.len() >= 2);
}

fn timeline_key_cipher(p: u64) -> EncryptedId {
    crate::fixtures::timeline_key().encrypt(p).unwrap()
}

#[test]
fn alpha_for_examples() {
    assert_eq!(alpha_for(0.01, 2).unwrap(), 5);
    assert_eq!(alpha_for(0.0004, 5).unwrap(), 10);
    assert_eq!(alpha_for(1.0, 7).unwrap(), 1);
    assert_eq!(alpha_for(0.0016, 5).unwrap(), 5);
    assert!(alpha_for(0.0, 2).is_err());
    assert!(alpha_for(-1.0, 2).is_err());
    assert!(alpha_for(0.5, 0).is_err());
}

#[test]
fn single_root_plan() {
    let svc = Arc::new(Service::new(ServiceConfig::new("F13", 1), f13_store()).unwrap());
    let services = Services::from([("F13".to_string(), ServiceHandle::in_proc(svc))]);
    let plan = CompositionPlan::parse("node r service=F13 k=1 input=const:label=p15\n").unwrap();
    let ex = execute_plan(&plan, &services, &BTreeMap::new(), &ExecOptions::default()).unwrap();
    assert_eq!(ex.table.columns, vec!["r.label"]);
    assert_eq!(
        ex.table.rows,
        vec![BTreeMap::from([("r.label".to_string(), "p15".to_string())])]
    );

    let open = CompositionPlan::parse("node r service=F13 k=1 input=const:label\n").unwrap();
    assert!(matches!(
        execute_plan(&open, &services, &BTreeMap::new(), &ExecOptions::default()),
        Err(Error::MissingBinding(_))
    ));
    let inputs = BTreeMap::from([("r".to_string(), "p20".to_string())]);
    let ex = execute_plan(&open, &services, &inputs, &ExecOptions::default()).unwrap();
    assert_eq!(ex.table.rows[0]["r.label"], "p20");
}

#[test]
fn errors_name_the_edge() {
    let small = Arc::new(Service::new(ServiceConfig::new("B", 1), store_with(&[1, 2], 64)).unwrap());
    let root = Arc::new(Service::new(ServiceConfig::new("A", 1), store_with(&[1, 2, 3], 64)).unwrap());
    let services = Services::from([
        ("A".to_string(), ServiceHandle::in_proc(root)),
        ("B".to_string(), ServiceHandle::in_proc(small)),
    ]);
    let plan =
        CompositionPlan::parse("node a service=A k=5 input=const:v=1\nnode b service=B k=1 input=parent\nedge a b\n")
            .unwrap();
    let err = execute_plan(&plan, &services, &BTreeMap::new(), &ExecOptions::default()).unwrap_err();
    assert!(matches!(&err, Error::Edge { edge, .. } if edge == "a->b"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_final_count_in_band(ids in proptest::collection::btree_set(0u64..100_000, 1000), pick in any::<proptest::sample::Index>()) {
        let ids: Vec<u64> = ids.into_iter().collect();
        let store = store_with(&ids, 100_000);
        let key = store.key().clone();
        let x = key.encrypt(ids[pick.index(ids.len())]).unwrap();
        let t = transport(store.clone());
        let s = session();
        let g = dataset_generalize(&s.endpoint(&t, "S", "n", "e"), x, 10, None).unwrap();
        let brute = store.entries().filter(|e| g.range.contains_id(e.id)).count();
        prop_assert_eq!(brute, g.count);
        prop_assert!((10..=20).contains(&g.count));
        prop_assert!(g.range.contains_id(x));
    }

    #[test]
    fn protected_invocation_equals_lookup(ids in proptest::collection::btree_set(0u64..50_000, 200..600), probe in 0u64..50_000, k in 1usize..6, alpha in 1usize..4) {
        let ids: Vec<u64> = ids.into_iter().collect();
        let store = store_with(&ids, 50_000);
        let key = store.key().clone();
        let x = key.encrypt(probe).unwrap();
        let t = transport(store.clone());
        let s = session();
        let inv = invoke_protected(&s.endpoint(&t, "S", "n", "e"), x, k, alpha, None).unwrap();
        let expected: Vec<Attrs> = store.entry(x).map(|e| e.attrs.clone()).into_iter().collect();
        let got: Vec<Attrs> = inv.tuples.iter().map(|t| t.attrs.clone()).collect();
        prop_assert_eq!(got, expected);
        prop_assert!(store.entries().filter(|e| inv.range.contains_id(e.id)).count() >= k);
    }
}
