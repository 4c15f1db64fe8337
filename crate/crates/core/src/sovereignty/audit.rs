//! Append-only per-connector audit log and its replay.
//!
//! `detail` is the contract JSON for OFFER and `key=value` tokens otherwise
//! (`reads_done=N`, `state=S`, plus a leading error code on DENY).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ContractState, UsageContract};
use crate::identity::InstanceId;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AuditAction {
    Offer,
    Accept,
    Read,
    Delete,
    Deny,
    Revoke,
    Expire,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub at: Timestamp,
    pub contract_id: String,
    pub action: AuditAction,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    events: Vec<AuditEvent>,
    file: Option<File>,
    path: Option<PathBuf>,
}

/// File name of a connector's log: `audit-<id>.log`, with characters that
/// are awkward in file names replaced by `_`.
pub fn audit_file_name(id: &InstanceId) -> String {
    let safe: String = id
        .canonical()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("audit-{safe}.log")
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: &Path, id: &InstanceId) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(audit_file_name(id));
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            events: Vec::new(),
            file: Some(file),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&mut self, event: AuditEvent) -> io::Result<()> {
        if let Some(f) = &mut self.file {
            let mut line = serde_json::to_vec(&event).expect("audit events serialize");
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn read_file(path: &Path) -> io::Result<Vec<AuditEvent>> {
        BufReader::new(File::open(path)?)
            .lines()
            .map(|l| {
                let l = l?;
                serde_json::from_str(&l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
            })
            .collect()
    }
}

fn token<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail
        .split_whitespace()
        .find_map(|t| t.strip_prefix(key)?.strip_prefix('='))
}

/// Rebuild every contract a connector knows from its audit events alone.
pub fn replay(events: &[AuditEvent]) -> BTreeMap<String, UsageContract> {
    let mut out: BTreeMap<String, UsageContract> = BTreeMap::new();
    for ev in events {
        if ev.action == AuditAction::Offer {
            if let Ok(c) = serde_json::from_str::<UsageContract>(&ev.detail) {
                out.insert(c.contract_id.clone(), c);
            }
            continue;
        }
        let Some(c) = out.get_mut(&ev.contract_id) else {
            continue;
        };
        if let Some(n) = token(&ev.detail, "reads_done").and_then(|v| v.parse().ok()) {
            c.reads_done = c.reads_done.max(n);
        }
        if c.state.is_terminal() {
            continue;
        }
        let next = match ev.action {
            AuditAction::Accept => Some(ContractState::Active),
            AuditAction::Expire => Some(ContractState::Expired),
            AuditAction::Revoke => Some(ContractState::Revoked),
            _ => token(&ev.detail, "state").and_then(|s| serde_json::from_value(s.into()).ok()),
        };
        if let Some(s) = next {
            c.state = s;
        }
    }
    out
}
