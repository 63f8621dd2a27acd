//! Shared test support: random service compositions and a plaintext
//! reference executor used as the oracle for protected runs.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kprotect::audit::Stores;
use kprotect::mediator::{CompositionPlan, InputBinding, ResultTable, ServiceHandle, Services};
use kprotect::opes::{keygen, EncryptedId, OrderPreservingScheme};
use kprotect::service::{ConsentTable, Service, ServiceConfig};
use kprotect::store::{Attrs, BucketPolicy, Event, TimestampedStore};

pub const DOMAIN: u64 = 1 << 16;
pub const GROUPS: usize = 4;

pub struct Fixture {
    pub plan: CompositionPlan,
    pub services: Services,
    pub stores: Stores,
    pub inputs: BTreeMap<String, String>,
    pub consent: ConsentTable,
    pub key: Arc<dyn OrderPreservingScheme>,
}

impl Fixture {
    /// Fresh in-process services over the same snapshots, so state changed by
    /// one run (offline ranges) never leaks into another.
    pub fn fresh_services(&self) -> Services {
        services_for(&self.plan, &self.stores, &self.consent)
    }
}

fn services_for(plan: &CompositionPlan, stores: &Stores, consent: &ConsentTable) -> Services {
    plan.nodes()
        .iter()
        .map(|n| {
            let config = ServiceConfig {
                record_transcript: false,
                ..ServiceConfig::new(&n.service, n.k)
            };
            let svc = Arc::new(Service::new(config, stores[&n.service].clone()).unwrap());
            svc.set_consent(consent.clone());
            (n.service.clone(), ServiceHandle::in_proc(svc))
        })
        .collect()
}

fn policy(rng: &mut ChaCha8Rng) -> BucketPolicy {
    match rng.gen_range(0..5) {
        0 => BucketPolicy::FixedCount(50),
        1 => BucketPolicy::FixedCount(100),
        2 => BucketPolicy::FixedCount(400),
        3 => BucketPolicy::EqualWidth(16),
        _ => BucketPolicy::WholeDomain,
    }
}

/// Events for `ids`: 80% at ts 0, the rest over three later batches, and a
/// few deletions in the last batch.
fn schedule(rng: &mut ChaCha8Rng, ids: &[u64], attrs: impl Fn(&mut ChaCha8Rng, u64) -> Attrs) -> Vec<Event> {
    let mut events: Vec<Event> = ids
        .iter()
        .map(|&p| {
            let ts = if rng.gen_bool(0.8) { 0 } else { rng.gen_range(1..4) };
            Event::Insert {
                plain_id: p,
                ts,
                attrs: attrs(rng, p),
            }
        })
        .collect();
    let deletes: Vec<u64> = ids.iter().copied().filter(|_| rng.gen_bool(0.03)).collect();
    events.extend(deletes.into_iter().map(|plain_id| Event::Delete { plain_id, ts: 4 }));
    events.sort_by_key(|e| (e.ts(), matches!(e, Event::Delete { .. }), e.plain_id()));
    events
}

/// A random composition of 2 to 4 services over one subject population.
/// Node `n0` is the root, filtered on attribute `g`; every later node has one
/// or two earlier parents. Node protection factors come from `ks`.
pub fn random_fixture(seed: u64, max_size: usize, ks: &[usize], alpha: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key: Arc<dyn OrderPreservingScheme> = Arc::new(keygen(seed, DOMAIN).unwrap());
    let population: Vec<u64> = sample(&mut rng, DOMAIN as usize, max_size)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    let nodes = rng.gen_range(2..=4);
    let mut text = String::new();
    let mut stores = Stores::new();
    for i in 0..nodes {
        let size = rng.gen_range(200.min(max_size)..=max_size);
        let mut ids: Vec<u64> = sample(&mut rng, population.len(), size)
            .into_iter()
            .map(|j| population[j])
            .collect();
        ids.sort_unstable();
        let events = schedule(&mut rng, &ids, |r, p| {
            let mut a = Attrs::from([("ssn".to_string(), p.to_string())]);
            if i == 0 {
                a.insert("g".into(), format!("g{}", r.gen_range(0..GROUPS)));
            }
            a.insert(format!("a{i}"), r.gen_range(0..1000).to_string());
            a
        });
        let svc = format!("S{i}");
        let store = TimestampedStore::from_events(key.clone(), &events, policy(&mut rng)).unwrap();
        stores.insert(svc.clone(), store);
        let k = ks[rng.gen_range(0..ks.len())];
        let input = if i == 0 {
            "const:g".to_string()
        } else {
            "parent".to_string()
        };
        text.push_str(&format!("node n{i} service={svc} k={k} input={input}\n"));
        if i > 0 {
            let mut parents = BTreeSet::from([rng.gen_range(0..i)]);
            if i > 1 && rng.gen_bool(0.3) {
                parents.insert(rng.gen_range(0..i));
            }
            for p in parents {
                text.push_str(&format!("edge n{p} n{i}\n"));
            }
        }
    }
    text.push_str(&format!("alpha={alpha}\n"));
    let plan = CompositionPlan::parse(&text).unwrap();
    let consent: ConsentTable = population.iter().copied().filter(|_| rng.gen_bool(0.19)).collect();
    let services = services_for(&plan, &stores, &consent);
    let inputs = BTreeMap::from([("n0".to_string(), format!("g{}", rng.gen_range(0..GROUPS)))]);
    Fixture {
        plan,
        services,
        stores,
        inputs,
        consent,
        key,
    }
}

/// Plaintext evaluation of `plan` straight from the stores: roots filter on
/// their bound attribute, children look up the intersection of their
/// parents' outputs, and the result joins every node on the subject with
/// `node.attr` columns and the `ssn` attribute removed.
pub fn reference(plan: &CompositionPlan, stores: &Stores, inputs: &BTreeMap<String, String>) -> ResultTable {
    let mut outputs: BTreeMap<String, BTreeMap<EncryptedId, Attrs>> = BTreeMap::new();
    for id in plan.topo_order() {
        let node = plan.node(id).unwrap();
        let store = &stores[&node.service];
        let live = store.entries().filter(|e| !e.tombstone);
        let out: BTreeMap<EncryptedId, Attrs> = match &node.input {
            InputBinding::Const { attr, value } => {
                let want = inputs.get(id).or(value.as_ref()).unwrap();
                live.filter(|e| e.attrs.get(attr) == Some(want))
                    .map(|e| (e.id, e.attrs.clone()))
                    .collect()
            }
            InputBinding::Parent => {
                let parents = plan.parents(id);
                live.filter(|e| parents.iter().all(|p| outputs[*p].contains_key(&e.id)))
                    .map(|e| (e.id, e.attrs.clone()))
                    .collect()
            }
        };
        outputs.insert(id.to_string(), out);
    }
    let first = outputs.values().next().unwrap();
    let ids: Vec<EncryptedId> = first
        .keys()
        .copied()
        .filter(|x| outputs.values().all(|o| o.contains_key(x)))
        .collect();
    let mut columns = BTreeSet::new();
    let mut rows = Vec::new();
    for x in ids {
        let mut row = BTreeMap::new();
        for (node, out) in &outputs {
            for (a, v) in out[&x].iter().filter(|(a, _)| a.as_str() != "ssn") {
                columns.insert(format!("{node}.{a}"));
                row.insert(format!("{node}.{a}"), v.clone());
            }
        }
        rows.push(row);
    }
    rows.sort();
    ResultTable {
        columns: columns.into_iter().collect(),
        rows,
    }
}
