//! Observed library-call events and their line-oriented JSON wire format.
//!
//! A monitored program reports one event per call: the function name, the
//! argument byte strings and the returned byte string. On the wire each
//! event is a single JSON object per line with hex-encoded byte fields:
//!
//! ```text
//! {"name":"hmac","args":["736563726574","0002"],"ret":"9b54"}
//! ```
//!
//! Optional `ts` and `tid` fields (timestamp, thread id) are accepted and
//! echoed back when re-serializing but play no role in matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single observed library call: `name(args…) = ret`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProgramEvent {
    pub name: String,
    pub args: Vec<Vec<u8>>,
    pub ret: Vec<u8>,
    pub ts: Option<u64>,
    pub tid: Option<u64>,
}

impl ProgramEvent {
    pub fn new(name: impl Into<String>, args: Vec<Vec<u8>>, ret: Vec<u8>) -> Self {
        ProgramEvent { name: name.into(), args, ret, ts: None, tid: None }
    }

    /// Renders the event as a single JSON line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        let wire = WireEvent {
            name: self.name.clone(),
            args: self.args.iter().map(hex::encode).collect(),
            ret: hex::encode(&self.ret),
            ts: self.ts,
            tid: self.tid,
        };
        serde_json::to_string(&wire).expect("event serialization cannot fail")
    }

    /// Parses one JSON line into an event.
    pub fn from_json_line(line: &str) -> Result<ProgramEvent, EventParseError> {
        let wire: WireEvent = serde_json::from_str(line)
            .map_err(|e| EventParseError::Json(e.to_string()))?;
        if wire.name.is_empty() {
            return Err(EventParseError::EmptyName);
        }
        let args = wire
            .args
            .iter()
            .map(|a| hex::decode(a).map_err(|_| EventParseError::BadHex(a.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let ret = hex::decode(&wire.ret).map_err(|_| EventParseError::BadHex(wire.ret.clone()))?;
        Ok(ProgramEvent { name: wire.name, args, ret, ts: wire.ts, tid: wire.tid })
    }

    /// Short human-readable rendering: `name(0x.., 0x..) = 0x..`.
    pub fn describe(&self) -> String {
        let args: Vec<String> = self.args.iter().map(|a| hex_or_empty(a)).collect();
        format!("{}({}) = {}", self.name, args.join(", "), hex_or_empty(&self.ret))
    }
}

fn hex_or_empty(b: &[u8]) -> String {
    if b.is_empty() {
        "''".to_string()
    } else {
        format!("'0x{}'", hex::encode(b))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireEvent {
    name: String,
    #[serde(default)]
    args: Vec<String>,
    #[serde(default)]
    ret: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tid: Option<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventParseError {
    #[error("malformed event line: {0}")]
    Json(String),
    #[error("event has an empty name")]
    EmptyName,
    #[error("field is not valid hex: {0:?}")]
    BadHex(String),
}

/// Parses a whole trace: one JSON event per line, blank lines skipped.
/// The line number (1-based) accompanies parse errors.
pub fn parse_trace(input: &str) -> Result<Vec<ProgramEvent>, (usize, EventParseError)> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        events.push(ProgramEvent::from_json_line(line).map_err(|e| (i + 1, e))?);
    }
    Ok(events)
}
