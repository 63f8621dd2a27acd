//! Replayable event log, one record per line:
//!
//! ```text
//! INS <plain_id> <ts> <attr=val;...>
//! DEL <plain_id> <ts>
//! ```

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

use super::Attrs;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Insert { plain_id: u64, ts: u64, attrs: Attrs },
    Delete { plain_id: u64, ts: u64 },
}

impl Event {
    pub fn ts(&self) -> u64 {
        match self {
            Event::Insert { ts, .. } | Event::Delete { ts, .. } => *ts,
        }
    }

    pub fn plain_id(&self) -> u64 {
        match self {
            Event::Insert { plain_id, .. } | Event::Delete { plain_id, .. } => *plain_id,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Insert { plain_id, ts, attrs } => {
                write!(f, "INS {plain_id} {ts}")?;
                let mut sep = " ";
                for (k, v) in attrs {
                    write!(f, "{sep}{k}={v}")?;
                    sep = ";";
                }
                Ok(())
            }
            Event::Delete { plain_id, ts } => write!(f, "DEL {plain_id} {ts}"),
        }
    }
}

impl FromStr for Event {
    type Err = String;

    fn from_str(line: &str) -> std::result::Result<Self, Self::Err> {
        let mut parts = line.trim().splitn(4, ' ');
        let tag = parts.next().unwrap_or_default();
        let plain_id = parts
            .next()
            .ok_or("missing identifier")?
            .parse()
            .map_err(|e| format!("bad identifier: {e}"))?;
        let ts = parts
            .next()
            .ok_or("missing timestamp")?
            .parse()
            .map_err(|e| format!("bad timestamp: {e}"))?;
        match tag {
            "INS" => {
                let mut attrs = Attrs::new();
                for pair in parts.next().unwrap_or_default().split(';').filter(|p| !p.is_empty()) {
                    let (k, v) = pair.split_once('=').ok_or_else(|| format!("bad attribute `{pair}`"))?;
                    attrs.insert(k.to_string(), v.to_string());
                }
                Ok(Event::Insert { plain_id, ts, attrs })
            }
            "DEL" => match parts.next() {
                None => Ok(Event::Delete { plain_id, ts }),
                Some(extra) => Err(format!("trailing data `{extra}`")),
            },
            other => Err(format!("unknown record `{other}`")),
        }
    }
}

pub fn read_events(reader: impl BufRead) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|m: String| Error::parse(n + 1, m))?);
    }
    Ok(out)
}

pub fn write_events<'a>(mut writer: impl Write, events: impl IntoIterator<Item = &'a Event>) -> Result<()> {
    for e in events {
        writeln!(writer, "{e}")?;
    }
    Ok(())
}
