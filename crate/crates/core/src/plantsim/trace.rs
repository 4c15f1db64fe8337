//! Line-delimited run trace.

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    /// Scenario-level notes: start, fault application.
    Scenario,
    /// Where an order attachment went.
    Route,
    Submit,
    Assign,
    /// Device setup from the station shell and the procedure.
    Setup,
    Acquire,
    Evaluate,
    Store,
    Status,
    Report,
    Offer,
    Evidence,
    Deny,
    /// An order or exchange that cannot progress.
    Blocked,
    Fault,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub at: Timestamp,
    pub actor: String,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        at: Timestamp,
        actor: &str,
        kind: TraceKind,
        order: Option<&str>,
        detail: impl Into<String>,
    ) {
        self.events.push(TraceEvent {
            seq: self.events.len() as u64,
            at,
            actor: actor.to_owned(),
            kind,
            order: order.map(str::to_owned),
            detail: detail.into(),
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            out.extend(serde_json::to_vec(e).expect("trace events serialize"));
            out.push(b'\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { events })
    }
}
