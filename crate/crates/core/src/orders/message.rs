//! Workflow records and their ORDERS-channel JSON envelope.
//!
//! Every ORDERS payload is one JSON object with a `"kind"` discriminator:
//! `order`, `status`, `report`, `ack` or `error`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::identity::{InstanceId, TypeId};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectionOrder {
    pub order_id: String,
    pub component_serial: String,
    pub component_type: TypeId,
    pub procedure_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<InstanceId>,
    pub due: Timestamp,
    #[serde(default)]
    pub priority: u32,
    /// Free-form order fields with no archive mapping.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
    /// Inline attachment, base64. Only ever present when the whole message
    /// fits the ORDERS payload cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<String>,
    /// Archive UID of an attachment that was too large to send inline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderState {
    Queued,
    Assigned,
    InProgress,
    DataArchived,
    Reported,
    Rejected,
}

impl OrderState {
    fn rank(self) -> u8 {
        match self {
            OrderState::Queued => 0,
            OrderState::Assigned => 1,
            OrderState::InProgress => 2,
            OrderState::DataArchived => 3,
            OrderState::Reported => 4,
            OrderState::Rejected => 5,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, OrderState::Reported | OrderState::Rejected)
    }

    /// States advance strictly along QUEUED..REPORTED (skipping allowed);
    /// REJECTED is reachable from any non-terminal state.
    pub fn can_advance_to(self, next: OrderState) -> bool {
        if self.is_terminal() {
            return false;
        }
        next == OrderState::Rejected || next.rank() > self.rank()
    }
}

impl fmt::Display for OrderState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OrderState::Queued => "QUEUED",
            OrderState::Assigned => "ASSIGNED",
            OrderState::InProgress => "IN_PROGRESS",
            OrderState::DataArchived => "DATA_ARCHIVED",
            OrderState::Reported => "REPORTED",
            OrderState::Rejected => "REJECTED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusEvent {
    pub order_id: String,
    pub state: OrderState,
    pub at: Timestamp,
    /// The claiming station, on ASSIGNED events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<InstanceId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Accept,
    Reject,
    Rework,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Accept => "ACCEPT",
            Verdict::Reject => "REJECT",
            Verdict::Rework => "REWORK",
        })
    }
}

/// The KPIs of one inspection as stored in the MES.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedValues {
    pub order_id: String,
    pub verdict: Verdict,
    pub indication_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_amplitude: Option<f32>,
    pub archived_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BusMessage {
    Order(InspectionOrder),
    Status(StatusEvent),
    Report(ReportedValues),
    Ack {
        order_id: String,
        state: OrderState,
        seq: u64,
    },
    Error {
        code: String,
        message: String,
    },
}

impl BusMessage {
    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("bus messages serialize")
    }

    pub fn from_payload(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}
