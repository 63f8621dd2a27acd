//! A data service: a timestamped store behind the request/response protocol.
//!
//! The service answers selectivity probes, candidate-range requests, range or
//! filter invocations and consent lookups. It never mutates its store while
//! handling a message; data changes go through [`Service::write_store`].

mod message;
mod sanitize;
mod transport;

use std::collections::{BTreeSet, HashMap};
use std::ops::Bound;
use std::sync::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

pub use message::{codes, Filter, MessageKind, ProtocolMessage, SplitMode, Tuple};
pub use sanitize::{DecadeRedactor, IdentitySanitizer, Sanitizer};
pub use transport::{InProcTransport, TcpServer, TcpTransport, Transport};

use crate::error::{Error, Result};
use crate::opes::{EncryptedId, OrderPreservingScheme};
use crate::store::{Attrs, IdRange, TimestampedStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceConfig {
    pub name: String,
    /// Protection factor: the service tolerates being pinned to no fewer than
    /// `k` of its subjects.
    pub k: usize,
    pub signature: Vec<(String, Direction)>,
    pub identifier_attr: String,
    /// Refuse a request once the same one has been served this many times.
    pub max_identical_queries: Option<usize>,
    pub record_transcript: bool,
}

impl ServiceConfig {
    pub fn new(name: impl Into<String>, k: usize) -> Self {
        ServiceConfig {
            name: name.into(),
            k,
            signature: Vec::new(),
            identifier_attr: "ssn".to_string(),
            max_identical_queries: None,
            record_transcript: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Invalid(format!("service {}: k must be positive", self.name)));
        }
        let ids = self
            .signature
            .iter()
            .filter(|(a, _)| *a == self.identifier_attr)
            .count();
        if !self.signature.is_empty() && ids != 1 {
            return Err(Error::Invalid(format!(
                "service {}: signature must hold the identifier `{}` exactly once",
                self.name, self.identifier_attr
            )));
        }
        Ok(())
    }
}

/// Plaintext identifiers whose subjects agreed to be disclosed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConsentTable {
    pub consented: BTreeSet<u64>,
}

impl ConsentTable {
    pub fn contains(&self, plain_id: u64) -> bool {
        self.consented.contains(&plain_id)
    }
}

impl FromIterator<u64> for ConsentTable {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        ConsentTable {
            consented: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug)]
pub struct Service {
    config: ServiceConfig,
    store: RwLock<TimestampedStore>,
    consent: RwLock<ConsentTable>,
    sanitizer: Box<dyn Sanitizer>,
    transcript: Mutex<Vec<ProtocolMessage>>,
    served: Mutex<HashMap<String, usize>>,
}

impl Service {
    pub fn new(config: ServiceConfig, store: TimestampedStore) -> Result<Self> {
        config.validate()?;
        Ok(Service {
            config,
            store: RwLock::new(store),
            consent: RwLock::new(ConsentTable::default()),
            sanitizer: Box::new(IdentitySanitizer),
            transcript: Mutex::new(Vec::new()),
            served: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_sanitizer(mut self, sanitizer: impl Sanitizer + 'static) -> Self {
        self.sanitizer = Box::new(sanitizer);
        self
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> RwLockReadGuard<'_, TimestampedStore> {
        self.store.read().expect("store lock poisoned")
    }

    pub fn write_store(&self) -> RwLockWriteGuard<'_, TimestampedStore> {
        self.store.write().expect("store lock poisoned")
    }

    pub fn version(&self) -> u64 {
        self.store().version()
    }

    pub fn set_consent(&self, table: ConsentTable) {
        *self.consent.write().expect("consent lock poisoned") = table;
    }

    /// Whether the subject behind `target` consented to disclosure.
    pub fn consented(&self, target: EncryptedId) -> bool {
        let plain = self.store().key().decrypt(target);
        plain.is_ok_and(|p| self.consent.read().expect("consent lock poisoned").contains(p))
    }

    /// Request/response pairs handled so far, in arrival order.
    pub fn transcript(&self) -> Vec<ProtocolMessage> {
        self.transcript.lock().expect("transcript lock poisoned").clone()
    }

    pub fn clear_transcript(&self) {
        self.transcript.lock().expect("transcript lock poisoned").clear();
    }

    pub fn handle_line(&self, line: &str) -> String {
        match ProtocolMessage::from_line(line) {
            Ok(msg) => self.handle(&msg).to_line(),
            Err(_) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id")?.as_u64())
                    .unwrap_or(0);
                ProtocolMessage::error(id, codes::MALFORMED).to_line()
            }
        }
    }

    pub fn handle(&self, msg: &ProtocolMessage) -> ProtocolMessage {
        let resp = match self.check_rate(msg) {
            Some(limited) => limited,
            None => self.respond(msg),
        };
        if self.config.record_transcript {
            let mut t = self.transcript.lock().expect("transcript lock poisoned");
            t.push(msg.clone());
            t.push(resp.clone());
        }
        resp
    }

    fn check_rate(&self, msg: &ProtocolMessage) -> Option<ProtocolMessage> {
        let limit = self.config.max_identical_queries?;
        let key = ProtocolMessage { id: 0, ..msg.clone() }.to_line();
        let mut served = self.served.lock().expect("rate lock poisoned");
        let n = served.entry(key).or_insert(0);
        if *n >= limit {
            return Some(ProtocolMessage::error(msg.id, codes::RATE_LIMITED));
        }
        *n += 1;
        None
    }

    fn respond(&self, msg: &ProtocolMessage) -> ProtocolMessage {
        let id = msg.id;
        let err = |code| ProtocolMessage::error(id, code);
        let store = self.store();
        let range = match (msg.kind, msg.range) {
            (MessageKind::SelectivityReq | MessageKind::CandidatesReq, None) => return err(codes::MALFORMED),
            (_, Some(r)) if r.is_empty() => return err(codes::EMPTY_RANGE),
            (_, r) => r,
        };
        match msg.kind {
            MessageKind::SelectivityReq => {
                let range = range.expect("checked above");
                let count = store.selectivity(&range);
                let mid = match (count, msg.split.unwrap_or(SplitMode::Median)) {
                    (0, _) => None,
                    (_, SplitMode::Median) => store.median(&range).ok(),
                    (_, SplitMode::Domain) => domain_midpoint(store.key().as_ref(), &range),
                };
                ProtocolMessage {
                    count: Some(count),
                    mid,
                    ..ProtocolMessage::new(id, MessageKind::SelectivityResp)
                }
            }
            MessageKind::CandidatesReq => {
                let Some(k) = msg.k.filter(|&k| k >= 1) else {
                    return err(codes::MALFORMED);
                };
                match store.candidate_ranges(&range.expect("checked above"), k) {
                    Ok(c) => ProtocolMessage {
                        ranges: Some(c.into_iter().map(|c| c.range).collect()),
                        ..ProtocolMessage::new(id, MessageKind::CandidatesResp)
                    },
                    Err(_) => err(codes::EMPTY_RANGE),
                }
            }
            MessageKind::InvokeReq => {
                let rows = match (range, &msg.filter) {
                    (Some(r), None) => store.query(&r),
                    (None, Some(f)) => store.query_attr(&f.attr, &f.value),
                    _ => return err(codes::MALFORMED),
                };
                let tuples = rows
                    .into_iter()
                    .map(|(id, attrs)| Tuple {
                        id,
                        attrs: self.release(attrs),
                    })
                    .collect();
                ProtocolMessage {
                    tuples: Some(tuples),
                    ..ProtocolMessage::new(id, MessageKind::InvokeResp)
                }
            }
            MessageKind::ConsentReq => {
                let Some(target) = msg.target else {
                    return err(codes::MALFORMED);
                };
                drop(store);
                ProtocolMessage {
                    target: Some(target),
                    consented: Some(self.consented(target)),
                    ..ProtocolMessage::new(id, MessageKind::ConsentResp)
                }
            }
            MessageKind::Unsupported => err(codes::UNSUPPORTED),
            // responses sent to a service are not requests it can serve
            _ => err(codes::MALFORMED),
        }
    }

    fn release(&self, mut attrs: Attrs) -> Attrs {
        attrs.remove(&self.config.identifier_attr);
        let mut out = self.sanitizer.sanitize(attrs);
        debug_assert!(!out.contains_key(&self.config.identifier_attr));
        out.remove(&self.config.identifier_attr);
        out
    }
}

/// Ciphertext of the midpoint of the plaintext interval covered by `range`.
fn domain_midpoint(key: &dyn OrderPreservingScheme, range: &IdRange) -> Option<EncryptedId> {
    let a = match range.lo {
        Bound::Unbounded => 0,
        Bound::Included(c) => key.plaintext_ceil(c)?,
        Bound::Excluded(c) => key.plaintext_ceil(EncryptedId(c.0.checked_add(1)?))?,
    };
    let b = match range.hi {
        Bound::Unbounded => key.domain_size() - 1,
        Bound::Included(c) => key.plaintext_floor(c)?,
        Bound::Excluded(c) => key.plaintext_floor(EncryptedId(c.0.checked_sub(1)?))?,
    };
    if a > b {
        return None;
    }
    key.encrypt(a + (b - a).div_ceil(2)).ok()
}
