//! Per-execution bookkeeping: request ids, the transcript and counters.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::audit::{Dir, InvocationTranscript, TranscriptEvent, TranscriptHeader};
use crate::error::{Error, Result};
use crate::service::{MessageKind, ProtocolMessage, Transport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    pub selectivity_queries: u64,
    pub candidate_requests: u64,
    pub invocations: u64,
    /// Protected invocations served from a cached candidate range.
    pub reused_ranges: u64,
    pub consent_lookups: u64,
    /// Exact (single-identifier) invocations made for consenting subjects.
    pub precise_invocations: u64,
}

#[derive(Debug, Default)]
struct Counters {
    selectivity: AtomicU64,
    candidates: AtomicU64,
    invocations: AtomicU64,
    reused: AtomicU64,
    consent: AtomicU64,
    precise: AtomicU64,
}

#[derive(Debug)]
pub struct Session {
    header: TranscriptHeader,
    events: Mutex<Vec<TranscriptEvent>>,
    record: bool,
    next_id: AtomicU64,
    counters: Counters,
}

impl Session {
    pub fn new(header: TranscriptHeader) -> Self {
        Session {
            header,
            events: Mutex::new(Vec::new()),
            record: true,
            next_id: AtomicU64::new(1),
            counters: Counters::default(),
        }
    }

    /// Skip keeping messages; counters still run.
    pub fn without_recording(mut self) -> Self {
        self.record = false;
        self
    }

    pub fn endpoint<'a>(&'a self, transport: &'a dyn Transport, service: &str, node: &str, edge: &str) -> Endpoint<'a> {
        Endpoint {
            session: self,
            transport,
            service: service.to_string(),
            node: node.to_string(),
            edge: edge.to_string(),
        }
    }

    pub fn metrics(&self) -> Metrics {
        let c = &self.counters;
        Metrics {
            selectivity_queries: c.selectivity.load(Ordering::Relaxed),
            candidate_requests: c.candidates.load(Ordering::Relaxed),
            invocations: c.invocations.load(Ordering::Relaxed),
            reused_ranges: c.reused.load(Ordering::Relaxed),
            consent_lookups: c.consent.load(Ordering::Relaxed),
            precise_invocations: c.precise.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn note_reuse(&self) {
        self.counters.reused.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn note_precise(&self) {
        self.counters.precise.fetch_add(1, Ordering::Relaxed);
    }

    pub fn into_transcript(self) -> InvocationTranscript {
        InvocationTranscript {
            header: self.header,
            events: self.events.into_inner().expect("transcript lock poisoned"),
        }
    }

    fn push(&self, ev: TranscriptEvent) {
        if self.record {
            self.events.lock().expect("transcript lock poisoned").push(ev);
        }
    }
}

/// The mediator's view of one service on one plan edge.
pub struct Endpoint<'a> {
    session: &'a Session,
    transport: &'a dyn Transport,
    service: String,
    node: String,
    edge: String,
}

impl Endpoint<'_> {
    pub fn edge(&self) -> &str {
        &self.edge
    }

    pub fn session(&self) -> &Session {
        self.session
    }

    /// Send one request built around a fresh id and return the matching
    /// response. `ERROR` replies become [`Error::Remote`].
    pub fn call(&self, build: impl FnOnce(u64) -> ProtocolMessage) -> Result<ProtocolMessage> {
        let id = self.session.next_id.fetch_add(1, Ordering::Relaxed);
        let req = build(id);
        let c = &self.session.counters;
        match req.kind {
            MessageKind::SelectivityReq => &c.selectivity,
            MessageKind::CandidatesReq => &c.candidates,
            MessageKind::InvokeReq => &c.invocations,
            _ => &c.consent,
        }
        .fetch_add(1, Ordering::Relaxed);
        self.log(Dir::Req, &req);
        let resp = self.transport.call(&req)?;
        self.log(Dir::Resp, &resp);
        if resp.id != id {
            return Err(Error::ProtocolViolation(format!(
                "response id {} does not echo request {id}",
                resp.id
            )));
        }
        if resp.kind == MessageKind::Error {
            return Err(Error::Remote(resp.code.unwrap_or_default()));
        }
        Ok(resp)
    }

    fn log(&self, dir: Dir, msg: &ProtocolMessage) {
        if self.session.record {
            self.session.push(TranscriptEvent {
                edge: self.edge.clone(),
                node: self.node.clone(),
                service: self.service.clone(),
                dir,
                msg: msg.clone(),
            });
        }
    }
}
