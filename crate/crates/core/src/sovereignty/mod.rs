//! Usage-controlled data exchange between companies.
//!
//! A provider connector offers an archived object to a consumer connector
//! under a [`UsagePolicy`]. The provider keeps the authoritative read
//! counter; the consumer keeps a mirror of the contract and a cache of what
//! it received, which is erased once the contract stops granting reads.
//! All traffic between connectors goes through an [`Exchange`] as
//! SOVEREIGN-channel frames.

mod audit;
mod connector;
mod wire;

pub use audit::{replay, AuditAction, AuditEvent, AuditLog};
pub use connector::{Connector, Exchange};
pub use wire::{SovMessage, OP_ACCEPT, OP_CONSUME, OP_DATA, OP_DENY, OP_ERROR, OP_FORWARD, OP_OFFER};

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::archive::ArchiveError;
use crate::identity::InstanceId;
use crate::orders::FrameError;
use crate::procedure::is_workflow_token;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaxReads {
    Bounded(u32),
    Unlimited,
}

impl MaxReads {
    pub fn remaining(self, done: u32) -> MaxReads {
        match self {
            MaxReads::Bounded(n) => MaxReads::Bounded(n.saturating_sub(done)),
            MaxReads::Unlimited => MaxReads::Unlimited,
        }
    }

    pub fn min(self, other: MaxReads) -> MaxReads {
        match (self, other) {
            (MaxReads::Bounded(a), MaxReads::Bounded(b)) => MaxReads::Bounded(a.min(b)),
            (MaxReads::Bounded(a), _) | (_, MaxReads::Bounded(a)) => MaxReads::Bounded(a),
            _ => MaxReads::Unlimited,
        }
    }

    pub fn is_reached(self, done: u32) -> bool {
        matches!(self, MaxReads::Bounded(n) if done >= n)
    }
}

/// A number, or the string `"UNLIMITED"`.
impl Serialize for MaxReads {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MaxReads::Bounded(n) => s.serialize_u32(*n),
            MaxReads::Unlimited => s.serialize_str("UNLIMITED"),
        }
    }
}

impl<'de> Deserialize<'de> for MaxReads {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(MaxReads::Bounded(n)),
            Raw::S(s) if s == "UNLIMITED" => Ok(MaxReads::Unlimited),
            Raw::S(s) => Err(serde::de::Error::custom(format!("bad max_reads {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsagePolicy {
    pub max_reads: MaxReads,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expires: Option<Timestamp>,
    #[serde(default)]
    pub allow_forward: bool,
    pub purpose: String,
}

impl UsagePolicy {
    pub fn read_once(purpose: &str) -> Self {
        Self {
            max_reads: MaxReads::Bounded(1),
            expires: None,
            allow_forward: false,
            purpose: purpose.to_owned(),
        }
    }

    pub fn validate(&self, now: Timestamp) -> Result<(), SovError> {
        if self.max_reads == MaxReads::Bounded(0) {
            return Err(SovError::InvalidPolicy("max_reads must be at least 1".into()));
        }
        if self.expires.is_some_and(|e| e <= now) {
            return Err(SovError::InvalidPolicy("expiry is not in the future".into()));
        }
        if !is_workflow_token(&self.purpose) {
            return Err(SovError::InvalidPolicy(format!("bad purpose {:?}", self.purpose)));
        }
        Ok(())
    }

    /// The strongest policy implied by both: fewer reads, earlier expiry,
    /// forwarding only if both allow it.
    pub fn clamp_to(&self, parent: &UsagePolicy, parent_reads_done: u32) -> UsagePolicy {
        let expires = match (self.expires, parent.expires) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        UsagePolicy {
            max_reads: self.max_reads.min(parent.max_reads.remaining(parent_reads_done)),
            expires,
            allow_forward: self.allow_forward && parent.allow_forward,
            purpose: self.purpose.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ContractState {
    Offered,
    Accepted,
    Active,
    Exhausted,
    Expired,
    Revoked,
}

impl ContractState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ContractState::Exhausted | ContractState::Expired | ContractState::Revoked
        )
    }
}

impl fmt::Display for ContractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("state serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageContract {
    pub contract_id: String,
    pub provider: InstanceId,
    pub consumer: InstanceId,
    pub object_uid: String,
    pub policy: UsagePolicy,
    pub state: ContractState,
    pub reads_done: u32,
    /// Set on contracts created by forwarding; reads are drawn from here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl UsageContract {
    pub fn remaining(&self) -> MaxReads {
        self.policy.max_reads.remaining(self.reads_done)
    }

    pub fn is_expired_at(&self, now: Timestamp) -> bool {
        self.policy.expires.is_some_and(|e| now > e)
    }
}

/// The provider encoded in a contract ID `"<provider>#<n>"`.
pub fn contract_provider(contract_id: &str) -> Option<InstanceId> {
    contract_id.rsplit_once('#')?.0.parse().ok()
}

#[derive(Debug, Error)]
pub enum SovError {
    #[error("unknown object UID {0}")]
    UnknownUid(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("contract {0} is addressed to another consumer")]
    WrongConsumer(String),
    #[error("contract {contract_id} is {state}")]
    WrongState { contract_id: String, state: String },
    #[error("contract {0} has no reads left")]
    PolicyExhausted(String),
    #[error("contract {0} has expired")]
    PolicyExpired(String),
    #[error("contract {0} was revoked")]
    Revoked(String),
    #[error("contract {0} does not allow forwarding")]
    ForwardProhibited(String),
    #[error("connector {0} is not certified")]
    Uncertified(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

impl SovError {
    pub fn code(&self) -> &'static str {
        match self {
            SovError::UnknownUid(_) => "UnknownUID",
            SovError::InvalidPolicy(_) => "InvalidPolicy",
            SovError::UnknownContract(_) => "UnknownContract",
            SovError::WrongConsumer(_) => "WrongConsumer",
            SovError::WrongState { .. } => "WrongState",
            SovError::PolicyExhausted(_) => "PolicyExhausted",
            SovError::PolicyExpired(_) => "PolicyExpired",
            SovError::Revoked(_) => "Revoked",
            SovError::ForwardProhibited(_) => "ForwardProhibited",
            SovError::Uncertified(_) => "Uncertified",
            SovError::Protocol(_) => "Protocol",
            SovError::Frame(_) => "Frame",
            SovError::Archive(_) => "Archive",
            SovError::Audit(_) => "Audit",
        }
    }

    /// Policy refusals travel as DENY, everything else as ERROR.
    pub fn is_denial(&self) -> bool {
        matches!(
            self,
            SovError::WrongConsumer(_)
                | SovError::PolicyExhausted(_)
                | SovError::PolicyExpired(_)
                | SovError::Revoked(_)
                | SovError::ForwardProhibited(_)
                | SovError::Uncertified(_)
        )
    }

    /// Rebuild an error received from a peer.
    pub fn from_remote(code: &str, subject: &str, message: &str) -> Self {
        let s = subject.to_owned();
        match code {
            "UnknownUID" => SovError::UnknownUid(s),
            "InvalidPolicy" => SovError::InvalidPolicy(message.to_owned()),
            "UnknownContract" => SovError::UnknownContract(s),
            "WrongConsumer" => SovError::WrongConsumer(s),
            "WrongState" => SovError::WrongState {
                contract_id: s,
                state: message.to_owned(),
            },
            "PolicyExhausted" => SovError::PolicyExhausted(s),
            "PolicyExpired" => SovError::PolicyExpired(s),
            "Revoked" => SovError::Revoked(s),
            "ForwardProhibited" => SovError::ForwardProhibited(s),
            "Uncertified" => SovError::Uncertified(s),
            _ => SovError::Protocol(format!("{code}: {message}")),
        }
    }

    /// Subject of the error for the wire: contract ID, UID or connector.
    pub fn subject(&self) -> String {
        match self {
            SovError::UnknownUid(s)
            | SovError::UnknownContract(s)
            | SovError::WrongConsumer(s)
            | SovError::PolicyExhausted(s)
            | SovError::PolicyExpired(s)
            | SovError::Revoked(s)
            | SovError::ForwardProhibited(s)
            | SovError::Uncertified(s) => s.clone(),
            SovError::WrongState { contract_id, .. } => contract_id.clone(),
            _ => String::new(),
        }
    }

    /// Detail carried alongside the code on the wire.
    pub fn wire_message(&self) -> String {
        match self {
            SovError::WrongState { state, .. } => state.clone(),
            SovError::InvalidPolicy(m) => m.clone(),
            other => other.to_string(),
        }
    }
}
