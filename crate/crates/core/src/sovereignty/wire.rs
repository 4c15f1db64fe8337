//! SOVEREIGN-channel payloads: opcode byte, then a JSON header. DATA adds a
//! newline and the encoded object after the header.

use serde::{Deserialize, Serialize};

use super::{ContractState, SovError, UsageContract};
use crate::archive::{decode_object, encode_object, DataObject};
use crate::identity::InstanceId;

pub const OP_OFFER: u8 = 0x11;
pub const OP_ACCEPT: u8 = 0x12;
pub const OP_CONSUME: u8 = 0x13;
pub const OP_DATA: u8 = 0x14;
pub const OP_FORWARD: u8 = 0x15;
pub const OP_DENY: u8 = 0x7E;
pub const OP_ERROR: u8 = 0x7F;

#[derive(Debug, Clone, PartialEq)]
pub enum SovMessage {
    Offer {
        from: InstanceId,
        to: InstanceId,
        contract: UsageContract,
    },
    /// Request carries only the ID; the reply carries the activated contract.
    Accept {
        from: InstanceId,
        to: InstanceId,
        contract_id: String,
        contract: Option<UsageContract>,
    },
    Consume {
        from: InstanceId,
        to: InstanceId,
        contract_id: String,
    },
    Data {
        from: InstanceId,
        to: InstanceId,
        contract_id: String,
        reads_done: u32,
        state: ContractState,
        object: DataObject,
    },
    Forward {
        from: InstanceId,
        to: InstanceId,
        contract: UsageContract,
    },
    Deny {
        from: InstanceId,
        to: InstanceId,
        code: String,
        subject: String,
        message: String,
    },
    Error {
        from: InstanceId,
        to: InstanceId,
        code: String,
        subject: String,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    from: InstanceId,
    to: InstanceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contract_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contract: Option<UsageContract>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reads_done: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<ContractState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

impl Header {
    fn new(from: &InstanceId, to: &InstanceId) -> Self {
        Self {
            from: from.clone(),
            to: to.clone(),
            contract_id: None,
            contract: None,
            reads_done: None,
            state: None,
            code: None,
            subject: None,
            message: None,
        }
    }
}

fn protocol(what: &str) -> SovError {
    SovError::Protocol(what.to_owned())
}

impl SovMessage {
    pub fn from(&self) -> &InstanceId {
        match self {
            SovMessage::Offer { from, .. }
            | SovMessage::Accept { from, .. }
            | SovMessage::Consume { from, .. }
            | SovMessage::Data { from, .. }
            | SovMessage::Forward { from, .. }
            | SovMessage::Deny { from, .. }
            | SovMessage::Error { from, .. } => from,
        }
    }

    pub fn to(&self) -> &InstanceId {
        match self {
            SovMessage::Offer { to, .. }
            | SovMessage::Accept { to, .. }
            | SovMessage::Consume { to, .. }
            | SovMessage::Data { to, .. }
            | SovMessage::Forward { to, .. }
            | SovMessage::Deny { to, .. }
            | SovMessage::Error { to, .. } => to,
        }
    }

    pub fn opcode(&self) -> u8 {
        match self {
            SovMessage::Offer { .. } => OP_OFFER,
            SovMessage::Accept { .. } => OP_ACCEPT,
            SovMessage::Consume { .. } => OP_CONSUME,
            SovMessage::Data { .. } => OP_DATA,
            SovMessage::Forward { .. } => OP_FORWARD,
            SovMessage::Deny { .. } => OP_DENY,
            SovMessage::Error { .. } => OP_ERROR,
        }
    }

    /// Reply to `request` reporting `err` as DENY or ERROR.
    pub fn refusal(request: &SovMessage, err: &SovError) -> SovMessage {
        let (from, to) = (request.to().clone(), request.from().clone());
        let (code, subject, message) = (err.code().to_owned(), err.subject(), err.wire_message());
        if err.is_denial() {
            SovMessage::Deny {
                from,
                to,
                code,
                subject,
                message,
            }
        } else {
            SovMessage::Error {
                from,
                to,
                code,
                subject,
                message,
            }
        }
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let mut h = Header::new(self.from(), self.to());
        let mut object = None;
        match self {
            SovMessage::Offer { contract, .. } | SovMessage::Forward { contract, .. } => {
                h.contract = Some(contract.clone());
            }
            SovMessage::Accept {
                contract_id, contract, ..
            } => {
                h.contract_id = Some(contract_id.clone());
                h.contract = contract.clone();
            }
            SovMessage::Consume { contract_id, .. } => h.contract_id = Some(contract_id.clone()),
            SovMessage::Data {
                contract_id,
                reads_done,
                state,
                object: obj,
                ..
            } => {
                h.contract_id = Some(contract_id.clone());
                h.reads_done = Some(*reads_done);
                h.state = Some(*state);
                object = Some(obj);
            }
            SovMessage::Deny {
                code, subject, message, ..
            }
            | SovMessage::Error {
                code, subject, message, ..
            } => {
                h.code = Some(code.clone());
                h.subject = Some(subject.clone());
                h.message = Some(message.clone());
            }
        }
        let mut out = vec![self.opcode()];
        out.extend(serde_json::to_vec(&h).expect("header serializes"));
        if let Some(obj) = object {
            out.push(b'\n');
            out.extend(encode_object(obj));
        }
        out
    }

    pub fn from_payload(bytes: &[u8]) -> Result<Self, SovError> {
        let (&op, rest) = bytes.split_first().ok_or_else(|| protocol("empty payload"))?;
        let (head, tail) = match op {
            OP_DATA => {
                let nl = rest
                    .iter()
                    .position(|&b| b == b'\n')
                    .ok_or_else(|| protocol("DATA without object"))?;
                (&rest[..nl], Some(&rest[nl + 1..]))
            }
            _ => (rest, None),
        };
        let h: Header = serde_json::from_slice(head).map_err(|e| SovError::Protocol(e.to_string()))?;
        let (from, to) = (h.from, h.to);
        let need = |v: Option<String>, what: &str| v.ok_or_else(|| protocol(what));
        Ok(match op {
            OP_OFFER => SovMessage::Offer {
                from,
                to,
                contract: h.contract.ok_or_else(|| protocol("OFFER without contract"))?,
            },
            OP_FORWARD => SovMessage::Forward {
                from,
                to,
                contract: h.contract.ok_or_else(|| protocol("FORWARD without contract"))?,
            },
            OP_ACCEPT => SovMessage::Accept {
                from,
                to,
                contract_id: need(h.contract_id, "ACCEPT without contract_id")?,
                contract: h.contract,
            },
            OP_CONSUME => SovMessage::Consume {
                from,
                to,
                contract_id: need(h.contract_id, "CONSUME without contract_id")?,
            },
            OP_DATA => SovMessage::Data {
                from,
                to,
                contract_id: need(h.contract_id, "DATA without contract_id")?,
                reads_done: h.reads_done.ok_or_else(|| protocol("DATA without reads_done"))?,
                state: h.state.ok_or_else(|| protocol("DATA without state"))?,
                object: decode_object(tail.unwrap_or_default()).map_err(|e| SovError::Protocol(e.to_string()))?,
            },
            OP_DENY | OP_ERROR => {
                let code = need(h.code, "refusal without code")?;
                let subject = h.subject.unwrap_or_default();
                let message = h.message.unwrap_or_default();
                if op == OP_DENY {
                    SovMessage::Deny {
                        from,
                        to,
                        code,
                        subject,
                        message,
                    }
                } else {
                    SovMessage::Error {
                        from,
                        to,
                        code,
                        subject,
                        message,
                    }
                }
            }
            other => return Err(SovError::Protocol(format!("unknown opcode 0x{other:02X}"))),
        })
    }
}
