//! Globally unique identifiers for asset types and asset instances.
//!
//! Both kinds share one URN scheme and are told apart by the kind segment:
//!
//! ```text
//! urn:nde4:type:<namespace>:<name>
//! urn:nde4:inst:<namespace>:<name>:<serial>
//! ```
//!
//! Namespaces and names are lowercase (`[a-z0-9-]`), serials are mixed-case
//! (`[A-Za-z0-9-]`). Every token is 1..=64 characters long. Ordering is
//! lexicographic on the canonical text, which other modules rely on for
//! deterministic tie-breaking.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const PREFIX: &str = "urn:nde4:";
const MAX_TOKEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("malformed {field} token {token:?}: {reason}")]
    MalformedToken {
        field: &'static str,
        token: String,
        reason: &'static str,
    },
    #[error("cannot parse identifier at byte {offset}: {reason}")]
    Parse { offset: usize, reason: &'static str },
}

fn check_token(field: &'static str, token: &str, allowed: fn(u8) -> bool) -> Result<(), IdError> {
    let reason = if token.is_empty() {
        Some("empty")
    } else if token.len() > MAX_TOKEN {
        Some("longer than 64 characters")
    } else if !token.bytes().all(allowed) {
        Some("illegal character")
    } else {
        None
    };
    match reason {
        Some(reason) => Err(IdError::MalformedToken {
            field,
            token: token.to_owned(),
            reason,
        }),
        None => Ok(()),
    }
}

fn lower_token_byte(b: u8) -> bool {
    b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-'
}

fn serial_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'-'
}

/// Identifier of an asset type ("drill", "ut-scanner"). Also the ID of the
/// administration shell describing that type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypeId {
    namespace: String,
    name: String,
}

/// Identifier of one concrete asset ("drill #25").
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceId {
    type_id: TypeId,
    serial: String,
}

/// Mint a type identifier. Minting the same pair twice yields equal values.
pub fn mint_type_id(namespace: &str, name: &str) -> Result<TypeId, IdError> {
    check_token("namespace", namespace, lower_token_byte)?;
    check_token("name", name, lower_token_byte)?;
    Ok(TypeId {
        namespace: namespace.to_owned(),
        name: name.to_owned(),
    })
}

/// Bind a serial to a type.
pub fn mint_instance_id(type_id: &TypeId, serial: &str) -> Result<InstanceId, IdError> {
    check_token("serial", serial, serial_byte)?;
    Ok(InstanceId {
        type_id: type_id.clone(),
        serial: serial.to_owned(),
    })
}

impl TypeId {
    pub fn new(namespace: &str, name: &str) -> Result<Self, IdError> {
        mint_type_id(namespace, name)
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }

    pub fn instance(&self, serial: &str) -> Result<InstanceId, IdError> {
        mint_instance_id(self, serial)
    }
}

impl InstanceId {
    pub fn type_id(&self) -> &TypeId {
        &self.type_id
    }

    pub fn serial(&self) -> &str {
        &self.serial
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{PREFIX}type:{}:{}", self.namespace, self.name)
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{PREFIX}inst:{}:{}:{}",
            self.type_id.namespace, self.type_id.name, self.serial
        )
    }
}

impl Ord for TypeId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for TypeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InstanceId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for InstanceId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Either kind of identifier, as produced by [`parse_id`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnyId {
    Type(TypeId),
    Instance(InstanceId),
}

impl fmt::Display for AnyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnyId::Type(t) => t.fmt(f),
            AnyId::Instance(i) => i.fmt(f),
        }
    }
}

/// Parse a canonical identifier. Errors report the byte offset of the
/// first violation.
pub fn parse_id(text: &str) -> Result<AnyId, IdError> {
    let bytes = text.as_bytes();
    let common = bytes.iter().zip(PREFIX.as_bytes()).take_while(|(a, b)| a == b).count();
    if common < PREFIX.len() {
        return Err(IdError::Parse {
            offset: common,
            reason: "expected \"urn:nde4:\" prefix",
        });
    }

    // Split the remainder into ':'-separated segments, remembering offsets.
    let mut segments = Vec::new();
    let mut start = PREFIX.len();
    for (i, &b) in bytes.iter().enumerate().skip(PREFIX.len()) {
        if b == b':' {
            segments.push((start, &text[start..i]));
            start = i + 1;
        }
    }
    segments.push((start, &text[start..]));

    let (kind_at, kind) = segments[0];
    let expected = match kind {
        "type" => 3,
        "inst" => 4,
        _ => {
            return Err(IdError::Parse {
                offset: kind_at,
                reason: "unknown kind segment",
            })
        }
    };
    if segments.len() != expected {
        let offset = if segments.len() > expected {
            segments[expected].0 - 1
        } else {
            text.len()
        };
        return Err(IdError::Parse {
            offset,
            reason: "wrong number of segments",
        });
    }

    let check = |(at, seg): (usize, &str), allowed: fn(u8) -> bool| -> Result<(), IdError> {
        if seg.is_empty() {
            return Err(IdError::Parse {
                offset: at,
                reason: "empty token",
            });
        }
        if let Some(pos) = seg.bytes().position(|b| !allowed(b)) {
            return Err(IdError::Parse {
                offset: at + pos,
                reason: "illegal character",
            });
        }
        if seg.len() > MAX_TOKEN {
            return Err(IdError::Parse {
                offset: at + MAX_TOKEN,
                reason: "token longer than 64 characters",
            });
        }
        Ok(())
    };

    check(segments[1], lower_token_byte)?;
    check(segments[2], lower_token_byte)?;
    let type_id = TypeId {
        namespace: segments[1].1.to_owned(),
        name: segments[2].1.to_owned(),
    };
    if expected == 3 {
        return Ok(AnyId::Type(type_id));
    }
    check(segments[3], serial_byte)?;
    Ok(AnyId::Instance(InstanceId {
        type_id,
        serial: segments[3].1.to_owned(),
    }))
}

impl FromStr for TypeId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_id(s)? {
            AnyId::Type(t) => Ok(t),
            AnyId::Instance(_) => Err(IdError::Parse {
                offset: PREFIX.len(),
                reason: "expected a type identifier",
            }),
        }
    }
}

impl FromStr for InstanceId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match parse_id(s)? {
            AnyId::Instance(i) => Ok(i),
            AnyId::Type(_) => Err(IdError::Parse {
                offset: PREFIX.len(),
                reason: "expected an instance identifier",
            }),
        }
    }
}

macro_rules! serde_via_canonical {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let text = String::deserialize(deserializer)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_canonical!(TypeId);
serde_via_canonical!(InstanceId);
