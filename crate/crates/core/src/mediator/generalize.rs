//! Client side of the three range-generalization protocols.
//!
//! All three turn a target ciphertext `x` into a range the child service is
//! invoked with. The domain-based variant is kept only as a comparison
//! baseline: it probes ranges without regard to how many subjects they hold.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::opes::EncryptedId;
use crate::service::{MessageKind, ProtocolMessage, Tuple};
use crate::store::IdRange;

use super::session::Endpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Generalized {
    pub range: IdRange,
    pub count: usize,
    /// Selectivity requests actually sent.
    pub rounds: usize,
}

/// Memo of one execution's exchanges with one service at one `k`.
#[derive(Clone, Debug, Default)]
pub struct GenCache {
    selectivities: HashMap<IdRange, (usize, Option<EncryptedId>)>,
    candidates: Vec<IdRange>,
}

impl GenCache {
    pub fn candidate_for(&self, x: EncryptedId) -> Option<IdRange> {
        self.candidates.iter().copied().find(|r| r.contains_id(x))
    }

    pub fn candidates(&self) -> &[IdRange] {
        &self.candidates
    }

    pub fn selectivities(&self) -> usize {
        self.selectivities.len()
    }
}

fn expect_kind(resp: &ProtocolMessage, kind: MessageKind) -> Result<()> {
    if resp.kind != kind {
        return Err(Error::ProtocolViolation(format!(
            "expected {kind:?}, got {:?}",
            resp.kind
        )));
    }
    Ok(())
}

fn probe(ep: &Endpoint<'_>, range: IdRange, rounds: &mut usize) -> Result<(usize, Option<EncryptedId>)> {
    let resp = ep.call(|id| ProtocolMessage::selectivity(id, range))?;
    expect_kind(&resp, MessageKind::SelectivityResp)?;
    *rounds += 1;
    let count = resp
        .count
        .ok_or_else(|| Error::ProtocolViolation("selectivity without count".into()))?;
    if count > 0 && !resp.mid.is_some_and(|m| range.contains_id(m)) {
        return Err(Error::ProtocolViolation(format!("split point outside {range}")));
    }
    Ok((count, resp.mid))
}

fn half(range: &IdRange, mid: EncryptedId, x: EncryptedId) -> IdRange {
    let side = if x <= mid {
        IdRange::at_most(mid)
    } else {
        IdRange::above(mid)
    };
    range.intersect(&side).expect("mid lies inside the range")
}

/// Baseline: halve the plaintext interval around `x` while the current range
/// holds more than `k` subjects; a half with fewer than `k` sends the search
/// back to its parent range.
pub fn domain_generalize(ep: &Endpoint<'_>, x: EncryptedId, k: usize) -> Result<Generalized> {
    let mut rounds = 0;
    let mut ask = |r: IdRange| -> Result<(usize, Option<EncryptedId>)> {
        let resp = ep.call(|id| ProtocolMessage::domain_selectivity(id, r))?;
        expect_kind(&resp, MessageKind::SelectivityResp)?;
        rounds += 1;
        Ok((resp.count.unwrap_or(0), resp.mid))
    };
    let mut cur = IdRange::full();
    let (mut count, mut mid) = ask(cur)?;
    if count < k {
        return Err(Error::InsufficientData {
            available: count,
            required: k,
        });
    }
    while count > k {
        let Some(m) = mid else { break };
        let next = half(&cur, m, x);
        if cur.is_subset_of(&next) {
            break;
        }
        let (c, nm) = ask(next)?;
        if c < k {
            break;
        }
        (cur, count, mid) = (next, c, nm);
    }
    Ok(Generalized {
        range: cur,
        count,
        rounds,
    })
}

/// Median bisection: narrow around `x` while the range holds more than
/// `2 * threshold` subjects. The result holds between `threshold` and
/// `2 * threshold`.
pub fn dataset_generalize(
    ep: &Endpoint<'_>,
    x: EncryptedId,
    threshold: usize,
    mut cache: Option<&mut GenCache>,
) -> Result<Generalized> {
    let mut rounds = 0;
    let mut lookup = |r: IdRange, cache: &mut Option<&mut GenCache>| -> Result<(usize, Option<EncryptedId>)> {
        if let Some(hit) = cache.as_ref().and_then(|c| c.selectivities.get(&r)) {
            return Ok(*hit);
        }
        let got = probe(ep, r, &mut rounds)?;
        if let Some(c) = cache.as_mut() {
            c.selectivities.insert(r, got);
        }
        Ok(got)
    };
    let mut cur = IdRange::full();
    let (mut count, mut mid) = lookup(cur, &mut cache)?;
    if count < threshold {
        return Err(Error::InsufficientData {
            available: count,
            required: threshold,
        });
    }
    while count > 2 * threshold {
        let m = mid.ok_or_else(|| Error::ProtocolViolation("non-empty range without split point".into()))?;
        cur = half(&cur, m, x);
        (count, mid) = lookup(cur, &mut cache)?;
    }
    Ok(Generalized {
        range: cur,
        count,
        rounds,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HybridOutcome {
    /// The candidate range containing `x`.
    pub range: IdRange,
    /// The `alpha * k` cover the candidates were drawn from.
    pub cover: Generalized,
    pub candidates: Vec<IdRange>,
}

/// Bisect to an `alpha * k` cover, then let the service cut it into its
/// deterministic candidate ranges and keep the one holding `x`.
pub fn hybrid_generalize(
    ep: &Endpoint<'_>,
    x: EncryptedId,
    k: usize,
    alpha: usize,
    mut cache: Option<&mut GenCache>,
) -> Result<HybridOutcome> {
    if alpha == 0 || k == 0 {
        return Err(Error::Invalid("alpha and k must be positive".into()));
    }
    let cover = dataset_generalize(ep, x, alpha * k, cache.as_deref_mut())?;
    let resp = ep.call(|id| ProtocolMessage::candidates(id, cover.range, k))?;
    expect_kind(&resp, MessageKind::CandidatesResp)?;
    let candidates = resp.ranges.unwrap_or_default();
    let range = candidates
        .iter()
        .copied()
        .find(|r| r.contains_id(x))
        .ok_or_else(|| Error::ProtocolViolation(format!("no candidate range contains {x}")))?;
    if let Some(c) = cache {
        c.candidates.extend(candidates.iter().copied());
    }
    Ok(HybridOutcome {
        range,
        cover,
        candidates,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Invocation {
    pub range: IdRange,
    /// Everything the service returned for the range.
    pub returned: Vec<Tuple>,
    /// The tuples about `x`, false positives removed.
    pub tuples: Vec<Tuple>,
    pub rounds: usize,
    pub reused: bool,
}

/// Invoke the service about `x` without revealing it: reuse a cached
/// candidate range when one covers `x`, otherwise run the hybrid protocol.
pub fn invoke_protected(
    ep: &Endpoint<'_>,
    x: EncryptedId,
    k: usize,
    alpha: usize,
    cache: Option<&mut GenCache>,
) -> Result<Invocation> {
    let cached = cache.as_ref().and_then(|c| c.candidate_for(x));
    let (range, rounds, reused) = match cached {
        Some(r) => {
            ep.session().note_reuse();
            (r, 0, true)
        }
        None => {
            let h = hybrid_generalize(ep, x, k, alpha, cache)?;
            (h.range, h.cover.rounds, false)
        }
    };
    let returned = invoke_range(ep, range)?;
    let tuples = returned.iter().filter(|t| t.id == x).cloned().collect();
    Ok(Invocation {
        range,
        returned,
        tuples,
        rounds,
        reused,
    })
}

pub fn invoke_range(ep: &Endpoint<'_>, range: IdRange) -> Result<Vec<Tuple>> {
    let resp = ep.call(|id| ProtocolMessage::invoke(id, range))?;
    expect_kind(&resp, MessageKind::InvokeResp)?;
    let tuples = resp.tuples.unwrap_or_default();
    if let Some(t) = tuples.iter().find(|t| !range.contains_id(t.id)) {
        return Err(Error::ProtocolViolation(format!(
            "tuple {} outside invoked range {range}",
            t.id
        )));
    }
    Ok(tuples)
}

/// Smallest `alpha >= 1` whose breach bound `1/(alpha k)^2` is at most `p`.
pub fn alpha_for(p: f64, k: usize) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Invalid(format!("probability {p} not in (0, 1]")));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be positive".into()));
    }
    let exact = (1.0 / p).sqrt() / k as f64;
    // absorb rounding in 1/p so that exact ratios do not round up
    Ok(((exact - 1e-9).ceil() as usize).max(1))
}
