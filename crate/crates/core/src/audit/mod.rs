//! Offline checks over transcripts and store snapshots.
//!
//! Every check recounts against the service's own store by brute force over
//! its entries, never trusting the counts that travelled on the wire.

mod replay;
mod transcript;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use replay::{replay_experiment, ReplayReport};
pub use transcript::{Dir, InvocationTranscript, TranscriptEvent, TranscriptHeader};

use crate::error::{Error, Result};
use crate::mediator::CompositionPlan;
use crate::opes::EncryptedId;
use crate::service::MessageKind;
use crate::store::{IdRange, TimestampedStore};

/// Store snapshots by service name.
pub type Stores = BTreeMap<String, TimestampedStore>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// A service was invoked with a range holding fewer than `k` subjects.
    Invocation,
    /// A selectivity probe went below `alpha * k`, so its answer narrows the
    /// input down further than the protocol allows.
    SubThresholdProbe,
    /// A service proposed a candidate range holding fewer than `k` subjects.
    Candidate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub edge: String,
    pub request_id: u64,
    pub range: IdRange,
    pub recount: usize,
    pub required: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRounds {
    pub invocations: usize,
    pub max_rounds: usize,
    pub mean_rounds: f64,
    pub bound: usize,
}

impl EdgeRounds {
    pub fn within_bound(&self) -> bool {
        self.max_rounds <= self.bound
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
    pub rounds_per_edge: BTreeMap<String, EdgeRounds>,
    pub breach_probabilities: BTreeMap<String, f64>,
    pub pass: bool,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "result: {}", if self.pass { "PASS" } else { "FAIL" })?;
        writeln!(f, "violations: {}", self.violations.len())?;
        for v in &self.violations {
            writeln!(
                f,
                "  {:?} edge={} request={} range={} recount={} required={}",
                v.kind, v.edge, v.request_id, v.range, v.recount, v.required
            )?;
        }
        for (edge, r) in &self.rounds_per_edge {
            writeln!(
                f,
                "rounds {edge}: invocations={} max={} mean={:.2} bound={}",
                r.invocations, r.max_rounds, r.mean_rounds, r.bound
            )?;
        }
        for (edge, p) in &self.breach_probabilities {
            writeln!(f, "breach {edge}: {p:e}")?;
        }
        Ok(())
    }
}

pub fn breach_probability(alpha: usize, k: usize) -> f64 {
    let ak = (alpha * k) as f64;
    1.0 / (ak * ak)
}

/// Allowed selectivity rounds for one protected invocation on a store of `m`
/// subjects: `ceil(log2(m / (alpha k)))`, floored at zero, plus two.
pub fn round_bound(m: usize, alpha: usize, k: usize) -> usize {
    let ak = (alpha * k).max(1);
    let mut e = 0;
    while ak.saturating_mul(1 << e) < m {
        e += 1;
    }
    e + 2
}

fn check_versions(t: &InvocationTranscript, stores: &Stores) -> Result<()> {
    for (svc, &expected) in &t.header.store_versions {
        if let Some(s) = stores.get(svc) {
            if s.version() != expected {
                return Err(Error::StaleSnapshot {
                    service: svc.clone(),
                    expected,
                    actual: s.version(),
                });
            }
        }
    }
    Ok(())
}

/// Recount every invocation, probe and candidate range in the transcript and
/// collect round statistics per edge.
pub fn verify_k_protection(t: &InvocationTranscript, stores: &Stores, plan: &CompositionPlan) -> Result<AuditReport> {
    check_versions(t, stores)?;
    let alpha = t.header.alpha.max(1);
    let consented: BTreeSet<EncryptedId> = t
        .events
        .iter()
        .filter(|e| e.msg.kind == MessageKind::ConsentResp && e.msg.consented == Some(true))
        .filter_map(|e| e.msg.target)
        .collect();
    let mut violations = Vec::new();
    let mut rounds: BTreeMap<String, (Vec<usize>, usize, usize)> = BTreeMap::new();
    let mut pending: BTreeMap<String, usize> = BTreeMap::new();
    let mut breach = BTreeMap::new();

    for (req, resp) in t.exchanges() {
        let msg = &req.msg;
        let node = plan
            .node(&req.node)
            .ok_or_else(|| Error::Plan(format!("transcript names unknown node `{}`", req.node)))?;
        if plan.is_root(&node.id) || msg.kind == MessageKind::ConsentReq {
            continue;
        }
        let k = plan.effective_k(&node.id)?;
        let store = stores
            .get(&node.service)
            .ok_or_else(|| Error::Invalid(format!("no snapshot for service `{}`", node.service)))?;
        breach.insert(req.edge.clone(), breach_probability(alpha, k));
        let mut flag = |kind, range: IdRange, recount, required| {
            violations.push(Violation {
                kind,
                edge: req.edge.clone(),
                request_id: msg.id,
                range,
                recount,
                required,
            })
        };
        match (msg.kind, msg.range) {
            (MessageKind::SelectivityReq, Some(r)) => {
                *pending.entry(req.edge.clone()).or_insert(0) += 1;
                let n = recount(store, &r);
                if n < alpha * k {
                    flag(ViolationKind::SubThresholdProbe, r, n, alpha * k);
                }
            }
            (MessageKind::CandidatesReq, Some(_)) => {
                let proposed = resp.and_then(|r| r.msg.ranges.clone()).unwrap_or_default();
                for r in proposed {
                    let n = recount(store, &r);
                    if n < k {
                        flag(ViolationKind::Candidate, r, n, k);
                    }
                }
            }
            (MessageKind::InvokeReq, Some(r)) => {
                let n = recount(store, &r);
                let exempt = r
                    .int_bounds()
                    .is_some_and(|(a, b)| a == b && consented.contains(&EncryptedId(a)));
                if n < k && !exempt {
                    flag(ViolationKind::Invocation, r, n, k);
                }
                let spent = pending.remove(&req.edge).unwrap_or(0);
                let entry = rounds
                    .entry(req.edge.clone())
                    .or_insert_with(|| (Vec::new(), store.len(), k));
                entry.0.push(spent);
            }
            _ => {}
        }
    }

    let rounds_per_edge: BTreeMap<String, EdgeRounds> = rounds
        .into_iter()
        .map(|(edge, (r, m, k))| {
            let invocations = r.len();
            let stats = EdgeRounds {
                invocations,
                max_rounds: r.iter().copied().max().unwrap_or(0),
                mean_rounds: r.iter().sum::<usize>() as f64 / invocations.max(1) as f64,
                bound: round_bound(m, alpha, k),
            };
            (edge, stats)
        })
        .collect();
    let pass = violations.is_empty() && rounds_per_edge.values().all(EdgeRounds::within_bound);
    Ok(AuditReport {
        violations,
        rounds_per_edge,
        breach_probabilities: breach,
        pass,
    })
}

/// Every edge's per-invocation probe count stays within [`round_bound`] for
/// the given `alpha`.
pub fn check_round_bound(
    t: &InvocationTranscript,
    stores: &Stores,
    alpha: usize,
    plan: &CompositionPlan,
) -> Result<bool> {
    let mut t = t.clone();
    t.header.alpha = alpha;
    Ok(verify_k_protection(&t, stores, plan)?
        .rounds_per_edge
        .values()
        .all(EdgeRounds::within_bound))
}

// Identifier values in `range`, tombstones included, by a full scan.
fn recount(store: &TimestampedStore, range: &IdRange) -> usize {
    store.entries().filter(|e| range.contains_id(e.id)).count()
}

/// Range the transcript invoked `node` with for `x`, if any.
pub fn selected_range(t: &InvocationTranscript, node: &str, x: EncryptedId) -> Option<IdRange> {
    t.events
        .iter()
        .filter(|e| e.dir == Dir::Req && e.node == node && e.msg.kind == MessageKind::InvokeReq)
        .filter_map(|e| e.msg.range)
        .find(|r| r.contains_id(x))
}

/// Whether the ranges selected for `x` at `node` stay nested across
/// executions over a growing store: each range is a subset or a superset of
/// the one before, and the two share at least `k` subjects of the later
/// store. Two observed ranges then never pin `x` down below `k`. `None` when
/// `x` is missing from a snapshot or was never invoked.
pub fn verify_nesting(
    executions: &[(InvocationTranscript, TimestampedStore)],
    node: &str,
    x: EncryptedId,
    k: usize,
) -> Option<bool> {
    let mut prev: Option<IdRange> = None;
    for (t, store) in executions {
        store.entry(x)?;
        let r = selected_range(t, node, x)?;
        if let Some(p) = prev {
            let Some(both) = r.intersect(&p) else {
                return Some(false);
            };
            let nested = r.is_subset_of(&p) || p.is_subset_of(&r);
            if !nested || recount(store, &both) < k {
                return Some(false);
            }
        }
        prev = Some(r);
    }
    Some(true)
}
