//! Inspection procedures: how to set up the device and how to judge the
//! result. Shared by the MES (which orders them), the devices (which run
//! them) and the gateway (which applies their verdict rule).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orders::Verdict;
use crate::semantics::Method;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid procedure {id}: {reason}")]
pub struct ProcedureError {
    pub id: String,
    pub reason: String,
}

fn default_floor() -> f32 {
    20.0
}

fn default_min_refs() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Procedure {
    pub procedure_id: String,
    pub method: Method,
    pub rows: u16,
    pub cols: u16,
    /// percent-FSH; an indication at or above this rejects the part.
    pub reject_threshold: f32,
    /// percent-FSH; indications at or above this but below the reject
    /// threshold send the part to rework.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rework_threshold: Option<f32>,
    /// percent-FSH; cells below this are noise.
    #[serde(default = "default_floor")]
    pub detection_floor: f32,
    /// Minimum archived objects a report must reference.
    #[serde(default = "default_min_refs")]
    pub min_refs: u32,
}

/// Order, procedure and similar workflow tokens: `[A-Za-z0-9._-]{1,64}`.
pub fn is_workflow_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl Procedure {
    pub fn validate(&self) -> Result<(), ProcedureError> {
        let fail = |reason: &str| {
            Err(ProcedureError {
                id: self.procedure_id.clone(),
                reason: reason.to_owned(),
            })
        };
        if !is_workflow_token(&self.procedure_id) {
            return fail("procedure_id is not a valid token");
        }
        if !(self.reject_threshold > 0.0 && self.reject_threshold <= 100.0) {
            return fail("reject threshold must lie in (0, 100]");
        }
        if let Some(rework) = self.rework_threshold {
            if !(rework > 0.0 && rework < self.reject_threshold) {
                return fail("rework threshold must lie in (0, reject threshold)");
            }
        }
        if u32::from(self.rows) * u32::from(self.cols) < 1 {
            return fail("grid must have at least one cell");
        }
        // Also rejects NaN.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.detection_floor > 0.0) {
            return fail("detection floor must be positive");
        }
        Ok(())
    }

    /// Verdict for the largest indication amplitude (`None` = no indications).
    pub fn verdict(&self, max_amplitude: Option<f32>) -> Verdict {
        match max_amplitude {
            None => Verdict::Accept,
            Some(a) if a >= self.reject_threshold => Verdict::Reject,
            Some(a) if self.rework_threshold.is_some_and(|r| a >= r) => Verdict::Rework,
            Some(_) => Verdict::Accept,
        }
    }
}

/// One connected region of the amplitude grid at or above the detection
/// floor, reported at its peak cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indication {
    pub row: u16,
    pub col: u16,
    pub cells: u32,
    pub amplitude: f32,
}

/// Procedures known to one MES, keyed by ID.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcedureBook(BTreeMap<String, Procedure>);

impl ProcedureBook {
    pub fn new(procedures: impl IntoIterator<Item = Procedure>) -> Result<Self, ProcedureError> {
        let mut book = BTreeMap::new();
        for p in procedures {
            p.validate()?;
            if book.contains_key(&p.procedure_id) {
                return Err(ProcedureError {
                    id: p.procedure_id,
                    reason: "defined twice".into(),
                });
            }
            book.insert(p.procedure_id.clone(), p);
        }
        Ok(Self(book))
    }

    pub fn get(&self, id: &str) -> Option<&Procedure> {
        self.0.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Procedure> {
        self.0.values()
    }
}
