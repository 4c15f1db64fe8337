//! Run summary and the end-to-end invariants checked over a finished run.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::trace::{Trace, TraceKind};
use crate::archive::{Archive, ChainStatus, ObjectIndex};
use crate::orders::transport::ChannelStats;
use crate::orders::{OrderState, ReportedValues, ORDERS_PAYLOAD_LIMIT};
use crate::sovereignty::AuditEvent;

pub const CHAIN_OK: &str = "OK";

/// Summary document. Keys are fixed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub orders_total: usize,
    pub reported: usize,
    /// Orders whose verdict was REJECT.
    pub rejected: usize,
    /// `OK`, or the first bad index and the company whose archive has it.
    pub chain_status: String,
    pub rami_gaps: Vec<String>,
    pub audit_denies: usize,
}

impl Report {
    /// Gaps, denials or a damaged chain.
    pub fn has_findings(&self) -> bool {
        !self.rami_gaps.is_empty() || self.audit_denies > 0 || self.chain_status != CHAIN_OK
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct CompanyOutcome {
    pub name: String,
    pub archive: Arc<Archive>,
    pub chain: ChainStatus,
    pub audit: Vec<AuditEvent>,
    pub audit_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderOutcome {
    pub order_id: String,
    pub company: String,
    /// `None` if the order was never submitted.
    pub state: Option<OrderState>,
    pub reported: Option<ReportedValues>,
    pub min_refs: u32,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub report: Report,
    pub companies: Vec<CompanyOutcome>,
    pub orders: Vec<OrderOutcome>,
    pub orders_wire: ChannelStats,
    pub archive_wire: ChannelStats,
    pub sovereign_wire: ChannelStats,
}

impl RunOutput {
    pub fn company(&self, name: &str) -> Option<&CompanyOutcome> {
        self.companies.iter().find(|c| c.name == name)
    }

    pub fn order(&self, id: &str) -> Option<&OrderOutcome> {
        self.orders.iter().find(|o| o.order_id == id)
    }

    /// Every broken run invariant, described. Empty for a sound run.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let events = self.trace.events();
        for (i, e) in events.iter().enumerate() {
            if e.seq != i as u64 {
                out.push(format!("trace seq {} at position {i}", e.seq));
            }
        }
        for w in events.windows(2) {
            if w[1].at < w[0].at {
                out.push(format!("clock went backwards at seq {}", w[1].seq));
            }
        }

        for o in &self.orders {
            if o.state != Some(OrderState::Reported) {
                continue;
            }
            let seqs = |kind: TraceKind| {
                events
                    .iter()
                    .filter(move |e| e.kind == kind && e.order.as_deref() == Some(&o.order_id))
                    .map(|e| e.seq)
            };
            let flow = [
                seqs(TraceKind::Submit).min(),
                seqs(TraceKind::Assign).min(),
                seqs(TraceKind::Acquire).min(),
                seqs(TraceKind::Store).max(),
                seqs(TraceKind::Report).min(),
            ];
            if flow.iter().any(Option::is_none) || !flow.windows(2).all(|w| w[0] < w[1]) {
                out.push(format!("order {} flow out of sequence: {flow:?}", o.order_id));
            }
            match &o.reported {
                Some(rv) if (rv.archived_refs.len() as u32) < o.min_refs => {
                    out.push(format!(
                        "order {} references {} objects, needs {}",
                        o.order_id,
                        rv.archived_refs.len(),
                        o.min_refs
                    ));
                }
                None => out.push(format!("order {} reported without values", o.order_id)),
                Some(_) => {}
            }
            if let (Some(rv), Some(c)) = (&o.reported, self.company(&o.company)) {
                for uid in &rv.archived_refs {
                    if c.archive.order_of(uid).as_deref() != Some(o.order_id.as_str()) {
                        out.push(format!("order {} reference {uid} does not resolve to it", o.order_id));
                    }
                }
            }
        }

        let mut stores: BTreeMap<&str, usize> = BTreeMap::new();
        for e in self.trace.of_kind(TraceKind::Store) {
            let company = e.actor.split('/').next().unwrap_or_default();
            *stores.entry(company).or_default() += 1;
        }
        for c in &self.companies {
            let stored = stores.get(c.name.as_str()).copied().unwrap_or(0);
            if stored != c.archive.len() {
                out.push(format!(
                    "{}: {stored} store events but {} archived objects",
                    c.name,
                    c.archive.len()
                ));
            }
            for uid in c.archive.list() {
                let owner = c.archive.order_of(&uid).unwrap_or_default();
                let known = self.orders.iter().any(|o| o.company == c.name && o.order_id == owner);
                if !known {
                    out.push(format!("{}: object {uid} carries unknown order_id {owner:?}", c.name));
                }
            }
        }

        if self.orders_wire.max_payload > ORDERS_PAYLOAD_LIMIT as u64 {
            out.push(format!(
                "ORDERS payload of {} bytes on the wire",
                self.orders_wire.max_payload
            ));
        }
        out
    }
}
