//! Trace records and their line format.
//!
//! ```text
//! <tick> <envelope JSON>
//! = <address> <final node summary JSON>
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::canonical::to_canonical_vec;
use crate::nodes::NodeSummary;
use crate::protocol::{decode_envelope, encode_envelope, Envelope, MsgType};
use crate::ErrorCode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    /// Tick at which the recipient took the envelope.
    pub tick: u64,
    pub envelope: Envelope,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub final_states: BTreeMap<String, NodeSummary>,
}

impl Trace {
    pub fn msg_types(&self) -> Vec<MsgType> {
        self.entries.iter().map(|e| e.envelope.msg_type()).collect()
    }

    /// Envelopes per `(sender, recipient)` link, in delivery order.
    pub fn link_projection(&self) -> BTreeMap<(String, String), Vec<Envelope>> {
        let mut out: BTreeMap<(String, String), Vec<Envelope>> = BTreeMap::new();
        for e in &self.entries {
            let env = &e.envelope;
            out.entry((env.sender.clone(), env.recipient.clone()))
                .or_default()
                .push(env.clone());
        }
        out
    }

    /// Envelopes addressed to `address`, in delivery order.
    pub fn inbox<'a>(&'a self, address: &'a str) -> impl Iterator<Item = &'a Envelope> + 'a {
        self.entries
            .iter()
            .map(|e| &e.envelope)
            .filter(move |e| e.recipient == address)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {code}: {detail}")]
pub struct TraceError {
    pub line: usize,
    pub code: ErrorCode,
    pub detail: String,
}

pub fn render_trace(trace: &Trace) -> String {
    let mut out = String::new();
    for e in &trace.entries {
        let line = encode_envelope(&e.envelope);
        out.push_str(&format!("{} ", e.tick));
        out.push_str(core::str::from_utf8(&line).expect("canonical JSON is UTF-8"));
    }
    for (addr, summary) in &trace.final_states {
        let json = to_canonical_vec(summary).expect("summaries always serialize");
        out.push_str(&format!("= {addr} "));
        out.push_str(core::str::from_utf8(&json).expect("canonical JSON is UTF-8"));
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let schema = |line: usize, detail: String| TraceError {
        line,
        code: ErrorCode::Schema,
        detail,
    };
    if !text.is_empty() && !text.ends_with('\n') {
        let n = text.lines().count();
        return Err(schema(n, "truncated final line".into()));
    }
    let mut trace = Trace::default();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if let Some(rest) = line.strip_prefix("= ") {
            let (addr, json) = rest
                .split_once(' ')
                .ok_or_else(|| schema(n, "final state line needs an address".into()))?;
            let summary: NodeSummary =
                serde_json::from_str(json).map_err(|e| schema(n, e.to_string()))?;
            if trace.final_states.insert(addr.into(), summary).is_some() {
                return Err(schema(n, format!("duplicate final state for {addr}")));
            }
            continue;
        }
        if !trace.final_states.is_empty() {
            return Err(schema(n, "envelope line after final states".into()));
        }
        let (tick, json) = line
            .split_once(' ')
            .ok_or_else(|| schema(n, "expected `<tick> <envelope>`".into()))?;
        let tick: u64 = tick
            .parse()
            .map_err(|_| schema(n, format!("bad tick {tick:?}")))?;
        if trace.entries.last().is_some_and(|e| e.tick > tick) {
            return Err(schema(n, "ticks must not decrease".into()));
        }
        let envelope = decode_envelope(json.as_bytes()).map_err(|e| TraceError {
            line: n,
            code: e.code,
            detail: e.detail,
        })?;
        trace.entries.push(TraceEntry { tick, envelope });
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceDiff {
    /// Position `index` holds different entries; `None` means that side
    /// ended early.
    Entry {
        index: usize,
        left: Option<TraceEntry>,
        right: Option<TraceEntry>,
    },
    FinalState {
        address: String,
        left: Option<NodeSummary>,
        right: Option<NodeSummary>,
    },
}

/// Positional comparison of entries, then final states by address.
pub fn diff_traces(left: &Trace, right: &Trace) -> Vec<TraceDiff> {
    let mut out = Vec::new();
    let n = left.entries.len().max(right.entries.len());
    for index in 0..n {
        let l = left.entries.get(index);
        let r = right.entries.get(index);
        if l != r {
            out.push(TraceDiff::Entry {
                index,
                left: l.cloned(),
                right: r.cloned(),
            });
        }
    }
    let mut addrs: Vec<&String> = left.final_states.keys().collect();
    addrs.extend(right.final_states.keys());
    addrs.sort();
    addrs.dedup();
    for addr in addrs {
        let l = left.final_states.get(addr);
        let r = right.final_states.get(addr);
        if l != r {
            out.push(TraceDiff::FinalState {
                address: addr.clone(),
                left: l.cloned(),
                right: r.cloned(),
            });
        }
    }
    out
}
