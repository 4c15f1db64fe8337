//! Translation between the orders bus and the archive, plus size routing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{DataObject, Element, ObjectIndex};
use crate::identity::InstanceId;
use crate::orders::{BusMessage, InspectionOrder, ReportedValues, ORDERS_PAYLOAD_LIMIT};
use crate::procedure::{Indication, Procedure};
use crate::semantics::{tags, Method, TagCode};
use crate::time::Timestamp;

const MAPPING_V1: &str = include_str!("../data/mapping-v1.tsv");

/// Order fields that must have a mapping entry.
pub const MUST_MAP: [&str; 4] = ["order_id", "component_serial", "procedure_id", "component_type"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("order field {0} has no mapping entry")]
    UnmappedField(String),
    #[error("mapping table line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("archived ref {0} cannot be fetched")]
    DanglingArchiveRef(String),
    #[error("object {uid} belongs to order {found:?}, not {expected}")]
    ForeignArchiveRef {
        uid: String,
        expected: String,
        found: String,
    },
    #[error("a report needs at least one archived object")]
    NoArchivedRefs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    version: u32,
    pairs: Vec<(String, TagCode)>,
}

impl MappingTable {
    pub fn standard() -> Self {
        Self::from_tsv(MAPPING_V1, 1).expect("compiled-in mapping table is valid")
    }

    /// Parse `field <TAB> group <TAB> element` lines (hex codes, `#` comments).
    pub fn from_tsv(text: &str, version: u32) -> Result<Self, GatewayError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: String| GatewayError::Table { line: line_no, reason };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [field, group, element] = cols[..] else {
                return Err(err(format!("expected 3 columns, got {}", cols.len())));
            };
            let hex = |s: &str| u16::from_str_radix(s, 16).map_err(|e| err(format!("{s:?}: {e}")));
            pairs.push((field.to_owned(), TagCode::new(hex(group)?, hex(element)?)));
        }
        Self::from_pairs(pairs, version)
    }

    pub fn from_pairs(pairs: Vec<(String, TagCode)>, version: u32) -> Result<Self, GatewayError> {
        for (i, (f, t)) in pairs.iter().enumerate() {
            for (g, u) in &pairs[..i] {
                if f == g || t == u {
                    return Err(GatewayError::Table {
                        line: i + 1,
                        reason: format!("{f}/{t} breaks the bijection with {g}/{u}"),
                    });
                }
            }
        }
        Ok(Self { version, pairs })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn pairs(&self) -> &[(String, TagCode)] {
        &self.pairs
    }

    pub fn tag_for(&self, field: &str) -> Option<TagCode> {
        self.pairs.iter().find(|(f, _)| f == field).map(|&(_, t)| t)
    }

    pub fn field_for(&self, tag: TagCode) -> Option<&str> {
        self.pairs.iter().find(|(_, t)| *t == tag).map(|(f, _)| f.as_str())
    }

    /// A copy with one pair removed.
    pub fn without(&self, field: &str) -> Self {
        Self {
            version: self.version,
            pairs: self.pairs.iter().filter(|(f, _)| f != field).cloned().collect(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# field\tgroup\telement\n");
        for (f, t) in &self.pairs {
            let _ = writeln!(out, "{f}\t{:04X}\t{:04X}", t.group, t.element);
        }
        out
    }
}

/// Unmapped order fields, as carried in the private extra tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderExtras {
    pub due: Timestamp,
    pub priority: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<InstanceId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

fn mapped_value(order: &InspectionOrder, field: &str) -> Option<String> {
    Some(match field {
        "order_id" => order.order_id.clone(),
        "component_serial" => order.component_serial.clone(),
        "procedure_id" => order.procedure_id.clone(),
        "component_type" => order.component_type.canonical(),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Workflow,
    Bulk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Orders,
    Archive,
    /// Archive the payload and send a reference over ORDERS.
    ArchiveWithReference,
}

pub fn route(payload_size: usize, kind: PayloadKind) -> Route {
    match kind {
        PayloadKind::Bulk => Route::Archive,
        PayloadKind::Workflow if payload_size <= ORDERS_PAYLOAD_LIMIT => Route::Orders,
        PayloadKind::Workflow => Route::ArchiveWithReference,
    }
}

/// The one translator between the MES and the archive.
#[derive(Debug, Clone)]
pub struct Gateway {
    table: MappingTable,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new(MappingTable::standard())
    }
}

impl Gateway {
    pub fn new(table: MappingTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &MappingTable {
        &self.table
    }

    /// Metadata seed devices merge into every object stored for the order:
    /// the mapped fields verbatim plus the remaining fields as a JSON blob
    /// under the private extra tag. Canonically ordered.
    pub fn order_to_archive_work(&self, order: &InspectionOrder) -> Result<Vec<Element>, GatewayError> {
        let mut seed = DataObject::new();
        for field in MUST_MAP {
            let tag = self
                .table
                .tag_for(field)
                .ok_or_else(|| GatewayError::UnmappedField(field.to_owned()))?;
            seed.set_str(tag, &mapped_value(order, field).expect("must-map field"));
        }
        let extras = OrderExtras {
            due: order.due,
            priority: order.priority,
            station: order.station.clone(),
            extra: order.extra.clone(),
        };
        seed.set_str(
            tags::GATEWAY_EXTRA,
            &serde_json::to_string(&extras).expect("extras serialize"),
        );
        Ok(seed.into_elements())
    }

    /// Inverse of the mapped part of [`Gateway::order_to_archive_work`].
    pub fn extract_order_fields(&self, elements: &[Element]) -> BTreeMap<String, String> {
        elements
            .iter()
            .filter_map(|e| {
                let field = self.table.field_for(e.tag)?;
                Some((field.to_owned(), String::from_utf8_lossy(&e.value).into_owned()))
            })
            .collect()
    }

    pub fn extract_extras(&self, elements: &[Element]) -> Option<OrderExtras> {
        let e = elements.iter().find(|e| e.tag == tags::GATEWAY_EXTRA)?;
        serde_json::from_slice(&e.value).ok()
    }

    /// Translate an evaluation into KPIs, checking every UID is archived
    /// under this order.
    pub fn archive_result_to_kpis(
        &self,
        order_id: &str,
        findings: &[Indication],
        uids: &[String],
        procedure: &Procedure,
        index: &dyn ObjectIndex,
    ) -> Result<ReportedValues, GatewayError> {
        if uids.is_empty() {
            return Err(GatewayError::NoArchivedRefs);
        }
        for uid in uids {
            match index.order_of(uid) {
                None => return Err(GatewayError::DanglingArchiveRef(uid.clone())),
                Some(found) if found != order_id => {
                    return Err(GatewayError::ForeignArchiveRef {
                        uid: uid.clone(),
                        expected: order_id.to_owned(),
                        found,
                    })
                }
                Some(_) => {}
            }
        }
        let max_amplitude = findings.iter().map(|f| f.amplitude).reduce(f32::max);
        Ok(ReportedValues {
            order_id: order_id.to_owned(),
            verdict: procedure.verdict(max_amplitude),
            indication_count: findings.len() as u32,
            max_amplitude,
            archived_refs: uids.to_vec(),
        })
    }

    /// Put an attachment on the order, inline when the resulting ORDERS
    /// message fits the cap, otherwise as a bulk object stored through
    /// `store` under `uid` with the order's seed attached. `method` is the
    /// method code of the order's procedure.
    pub fn attach<E>(
        &self,
        order: &mut InspectionOrder,
        attachment: &[u8],
        uid: &str,
        method: Method,
        store: impl FnOnce(&DataObject) -> Result<String, E>,
    ) -> Result<Route, AttachError<E>> {
        order.attachment = Some(base64::engine::general_purpose::STANDARD.encode(attachment));
        order.attachment_ref = None;
        let size = BusMessage::Order(order.clone()).to_payload().len();
        let r = route(size, PayloadKind::Workflow);
        if r == Route::ArchiveWithReference {
            order.attachment = None;
            let mut obj = DataObject::from_elements(self.order_to_archive_work(order)?).expect("seed is canonical");
            obj.set_str(tags::OBJECT_UID, uid);
            obj.set_str(tags::METHOD_CODE, method.as_str());
            obj.set(tags::BULK_PAYLOAD, attachment.to_vec());
            order.attachment_ref = Some(store(&obj).map_err(AttachError::Store)?);
        }
        Ok(r)
    }
}

#[derive(Debug, Error)]
pub enum AttachError<E> {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("storing the attachment failed: {0}")]
    Store(E),
}
