//! Execution transcripts: a header line followed by one line per message.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mediator::CompositionPlan;
use crate::service::ProtocolMessage;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub execution_id: String,
    pub plan_fingerprint: String,
    /// Canonical text of the executed plan.
    pub plan: String,
    pub alpha: usize,
    pub mode: String,
    /// Store version of every service touched, by service name.
    pub store_versions: BTreeMap<String, u64>,
}

impl TranscriptHeader {
    /// Header for one execution of `plan`. The execution id is derived from
    /// the inputs, so identical runs carry identical headers.
    pub fn for_plan(plan: &CompositionPlan, mode: &str, alpha: usize, store_versions: BTreeMap<String, u64>) -> Self {
        let plan_fingerprint = plan.fingerprint();
        let mut h = Sha256::new();
        h.update(format!("{plan_fingerprint}|{mode}|{alpha}|{store_versions:?}").as_bytes());
        let execution_id = h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect();
        TranscriptHeader {
            execution_id,
            plan_fingerprint,
            plan: plan.to_string(),
            alpha,
            mode: mode.to_string(),
            store_versions,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    Req,
    Resp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    /// `parent->child`, `a+b->child` for several parents, `user->root`.
    pub edge: String,
    /// Plan node whose input the exchange generalizes.
    pub node: String,
    /// Service that received the request.
    pub service: String,
    pub dir: Dir,
    pub msg: ProtocolMessage,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvocationTranscript {
    pub header: TranscriptHeader,
    pub events: Vec<TranscriptEvent>,
}

impl InvocationTranscript {
    pub fn new(header: TranscriptHeader) -> Self {
        InvocationTranscript {
            header,
            events: Vec::new(),
        }
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson(r: impl BufRead) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing transcript header"))?;
        let header = serde_json::from_str(&first?).map_err(|e| Error::parse(1, e.to_string()))?;
        let mut events = Vec::new();
        for (n, line) in lines {
            events.push(serde_json::from_str(&line?).map_err(|e| Error::parse(n + 1, e.to_string()))?);
        }
        Ok(InvocationTranscript { header, events })
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Requests with their responses, matched by request id.
    pub fn exchanges(&self) -> Vec<(&TranscriptEvent, Option<&TranscriptEvent>)> {
        let mut resp: BTreeMap<u64, &TranscriptEvent> = BTreeMap::new();
        for e in self.events.iter().filter(|e| e.dir == Dir::Resp) {
            resp.insert(e.msg.id, e);
        }
        self.events
            .iter()
            .filter(|e| e.dir == Dir::Req)
            .map(|e| (e, resp.get(&e.msg.id).copied()))
            .collect()
    }

    /// Every request has exactly one response with its id, and vice versa.
    pub fn is_paired(&self) -> bool {
        let mut open: BTreeMap<u64, usize> = BTreeMap::new();
        for e in &self.events {
            let slot = open.entry(e.msg.id).or_insert(0);
            match e.dir {
                Dir::Req if *slot == 0 => *slot = 1,
                Dir::Resp if *slot == 1 => *slot = 2,
                _ => return false,
            }
        }
        open.values().all(|&s| s == 2)
    }
}
