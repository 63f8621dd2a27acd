//! Small reference datasets used by tests, examples and the CLI demo.
//!
//! `f13` is a 13-subject service over a 1024-value identifier domain.
//! `bucket_timeline` is a single-bucket evolution in five timestamp batches
//! whose split history is easy to follow by hand: subjects are named by
//! letters, and the bucket of interest holds plaintexts 266..=506 (`a` to
//! `y`) between two outer buckets of filler subjects.

use std::sync::Arc;

use crate::opes::{keygen, EncryptedId, OpesKey, OrderPreservingScheme};
use crate::store::{Attrs, BucketPolicy, Event, TimestampedStore};

pub const F13_DOMAIN: u64 = 1024;
pub const F13_IDS: [u64; 13] = [3, 8, 15, 20, 100, 150, 199, 250, 300, 400, 512, 700, 900];

pub fn f13_key() -> OpesKey {
    keygen(0x5eed_f013, F13_DOMAIN).expect("valid domain")
}

fn label(p: u64) -> Attrs {
    Attrs::from([("label".to_string(), format!("p{p}"))])
}

/// The 13-subject store, all at timestamp 0, one bucket per 50 identifiers.
pub fn f13_store() -> TimestampedStore {
    let events: Vec<Event> = F13_IDS
        .iter()
        .map(|&p| Event::Insert {
            plain_id: p,
            ts: 0,
            attrs: label(p),
        })
        .collect();
    TimestampedStore::from_events(Arc::new(f13_key()), &events, BucketPolicy::default()).expect("fixture is consistent")
}

pub const TIMELINE_DOMAIN: u64 = 1024;

/// Plaintext of the subject named by a lowercase letter.
pub fn letter(c: char) -> u64 {
    assert!(c.is_ascii_lowercase(), "subjects are named a..z");
    256 + 10 * (c as u64 - 'a' as u64 + 1)
}

pub fn timeline_key() -> OpesKey {
    keygen(0x00db_9e17, TIMELINE_DOMAIN).expect("valid domain")
}

/// Filler subjects below and above the bucket of interest.
pub fn timeline_filler() -> (Vec<u64>, Vec<u64>) {
    let low = (0..8).map(|i| 10 + 30 * i).collect();
    let high = (0..24).map(|i| 520 + 20 * i).collect();
    (low, high)
}

/// Letters inserted at each timestamp batch `t0..=t4`.
pub const TIMELINE_BATCHES: [&str; 5] = ["blqy", "de", "sw", "acgjmnoptu", "fv"];

pub fn timeline_events() -> Vec<Event> {
    let (low, high) = timeline_filler();
    let mut events = Vec::new();
    let ins = |p: u64, ts: u64| Event::Insert {
        plain_id: p,
        ts,
        attrs: label(p),
    };
    events.extend(low.iter().chain(&high).map(|&p| ins(p, 0)));
    for (ts, letters) in TIMELINE_BATCHES.iter().enumerate() {
        events.extend(letters.chars().map(|c| ins(letter(c), ts as u64)));
    }
    events.sort_by_key(Event::ts);
    events
}

/// Store state after batches `t0..=t_last`, partitioned into four
/// equal-width buckets.
pub fn timeline_store(last: usize) -> TimestampedStore {
    let events: Vec<Event> = timeline_events()
        .into_iter()
        .filter(|e| e.ts() <= last as u64)
        .collect();
    TimestampedStore::from_events(Arc::new(timeline_key()), &events, BucketPolicy::EqualWidth(4))
        .expect("fixture is consistent")
}

/// Ciphertext of a lettered subject under the timeline key.
pub fn timeline_cipher(c: char) -> EncryptedId {
    timeline_key().encrypt(letter(c)).expect("in domain")
}
