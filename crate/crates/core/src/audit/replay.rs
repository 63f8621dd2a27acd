//! Replay attack simulation.
//!
//! An adversary re-runs the same protected query against different versions
//! of an evolving store and intersects the ranges it sees for the target.
//! Identification happens when two observed ranges overlap in the target
//! alone.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mediator::{hybrid_generalize, Session};
use crate::opes::EncryptedId;
use crate::service::{InProcTransport, Service, ServiceConfig};
use crate::store::{Event, IdRange, TimestampedStore};

use super::{breach_probability, TranscriptHeader};

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub trials: usize,
    /// Trials whose two ranges intersect in exactly one subject.
    pub breaches: usize,
    /// Trials whose intersection holds between 2 and `k - 1` subjects.
    pub partial_leaks: usize,
    /// Selected range for the target at each store version.
    pub ranges: Vec<IdRange>,
    pub rate: f64,
    /// The model's `1/(alpha k)^2`.
    pub bound: f64,
}

/// Selected hybrid range for `x` on a snapshot.
fn selected(store: &TimestampedStore, x: EncryptedId, k: usize, alpha: usize) -> Result<IdRange> {
    let svc = Arc::new(Service::new(ServiceConfig::new("replay", k), store.clone())?);
    let transport = InProcTransport::new(svc);
    let session = Session::new(TranscriptHeader {
        execution_id: "replay".into(),
        plan_fingerprint: String::new(),
        plan: String::new(),
        alpha,
        mode: "protected".into(),
        store_versions: BTreeMap::new(),
    })
    .without_recording();
    let ep = session.endpoint(&transport, "replay", "target", "adversary->target");
    Ok(hybrid_generalize(&ep, x, k, alpha, None)?.range)
}

/// Run `trials` replays. Version 0 is `base`; version `i` adds
/// `schedule[..i]`. Each trial draws two versions uniformly (distinct when
/// more than one exists) and intersects the ranges selected for `x` there,
/// counting subjects of the later version.
pub fn replay_experiment(
    base: &TimestampedStore,
    schedule: &[Vec<Event>],
    x: EncryptedId,
    k: usize,
    alpha: usize,
    trials: usize,
    seed: u64,
) -> Result<ReplayReport> {
    let mut versions = vec![base.clone()];
    for batch in schedule {
        let mut next = versions.last().expect("non-empty").clone();
        next.apply_all(batch)?;
        versions.push(next);
    }
    let ranges = versions
        .iter()
        .map(|s| selected(s, x, k, alpha))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = versions.len();
    let (mut breaches, mut partial_leaks) = (0, 0);
    for _ in 0..trials {
        let i = rng.gen_range(0..n);
        let j = if n > 1 { (i + rng.gen_range(1..n)) % n } else { i };
        let later = &versions[i.max(j)];
        let seen = match ranges[i].intersect(&ranges[j]) {
            Some(r) => later.entries().filter(|e| r.contains_id(e.id)).count(),
            None => 0,
        };
        match seen {
            1 => breaches += 1,
            c if c >= 2 && c < k => partial_leaks += 1,
            _ => {}
        }
    }
    Ok(ReplayReport {
        trials,
        breaches,
        partial_leaks,
        ranges,
        rate: breaches as f64 / trials.max(1) as f64,
        bound: breach_probability(alpha, k),
    })
}
