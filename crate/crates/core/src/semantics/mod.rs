//! The semantic dictionary: tag codes, value representations and units.
//!
//! Every element stored in the archive is keyed by a [`TagCode`]. Even groups
//! in `0x0008..=0x7FFF` belong to the standard dictionary; odd groups from
//! `0x0009` upwards are the private range, tolerated but always reported.

mod dictionary;
mod validate;
mod value;

pub use dictionary::{Dictionary, DictionaryError, Lookup};
pub use validate::{validate_object, FindingKind, ObjectFinding, ObjectReport, Severity};
pub use value::{encode_value, interpret, InterpretError, Value};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TagCode {
    pub group: u16,
    pub element: u16,
}

impl TagCode {
    pub const fn new(group: u16, element: u16) -> Self {
        Self { group, element }
    }

    pub fn is_private(&self) -> bool {
        self.group % 2 == 1 && self.group >= 0x0009
    }
}

/// Well-known codes of the standard dictionary.
pub mod tags {
    use super::TagCode;

    pub const OBJECT_UID: TagCode = TagCode::new(0x0008, 0x0001);
    pub const CREATION: TagCode = TagCode::new(0x0008, 0x0002);
    pub const METHOD_CODE: TagCode = TagCode::new(0x0008, 0x0010);
    pub const COMPONENT_SERIAL: TagCode = TagCode::new(0x0010, 0x0001);
    pub const COMPONENT_TYPE: TagCode = TagCode::new(0x0010, 0x0002);
    pub const ORDER_ID: TagCode = TagCode::new(0x0020, 0x0001);
    pub const PROCEDURE_ID: TagCode = TagCode::new(0x0020, 0x0002);
    pub const DEVICE_ID: TagCode = TagCode::new(0x0030, 0x0001);
    pub const CALIBRATION_DUE: TagCode = TagCode::new(0x0030, 0x0002);
    pub const ROWS: TagCode = TagCode::new(0x0040, 0x0001);
    pub const COLS: TagCode = TagCode::new(0x0040, 0x0002);
    pub const AMPLITUDE_GRID: TagCode = TagCode::new(0x0040, 0x0003);
    pub const BULK_PAYLOAD: TagCode = TagCode::new(0x7FE0, 0x0010);
    /// Private-range carrier for order fields the gateway has no mapping for.
    pub const GATEWAY_EXTRA: TagCode = TagCode::new(0x0009, 0x0001);

    /// Tags every archived object must carry.
    pub const MANDATORY: [TagCode; 4] = [OBJECT_UID, ORDER_ID, COMPONENT_SERIAL, METHOD_CODE];
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad tag code {0:?}: expected \"gggg,eeee\" in hex")]
pub struct TagParseError(pub String);

/// `gggg,eeee`, uppercase hex.
impl fmt::Display for TagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04X},{:04X}", self.group, self.element)
    }
}

impl FromStr for TagCode {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TagParseError(s.to_owned());
        let (g, e) = s.split_once(',').ok_or_else(err)?;
        if g.len() != 4 || e.len() != 4 {
            return Err(err());
        }
        Ok(TagCode {
            group: u16::from_str_radix(g, 16).map_err(|_| err())?,
            element: u16::from_str_radix(e, 16).map_err(|_| err())?,
        })
    }
}

impl Serialize for TagCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TagCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ValueRep {
    IdStr,
    Text,
    DateTime,
    U16,
    F32Array,
    Bytes,
}

impl ValueRep {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValueRep::IdStr => "IDSTR",
            ValueRep::Text => "TEXT",
            ValueRep::DateTime => "DATETIME",
            ValueRep::U16 => "U16",
            ValueRep::F32Array => "F32ARRAY",
            ValueRep::Bytes => "BYTES",
        }
    }
}

impl FromStr for ValueRep {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "IDSTR" => ValueRep::IdStr,
            "TEXT" => ValueRep::Text,
            "DATETIME" => ValueRep::DateTime,
            "U16" => ValueRep::U16,
            "F32ARRAY" => ValueRep::F32Array,
            "BYTES" => ValueRep::Bytes,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Multiplicity {
    One,
    Many,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDefinition {
    pub code: TagCode,
    pub name: String,
    pub value_rep: ValueRep,
    pub units: Option<String>,
    pub multiplicity: Multiplicity,
}

/// NDE inspection method codes accepted under the method-code tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    UT,
    RT,
    CT,
    ET,
    MT,
    PT,
    VT,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::UT,
        Method::RT,
        Method::CT,
        Method::ET,
        Method::MT,
        Method::PT,
        Method::VT,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::UT => "UT",
            Method::RT => "RT",
            Method::CT => "CT",
            Method::ET => "ET",
            Method::MT => "MT",
            Method::PT => "PT",
            Method::VT => "VT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or(())
    }
}

/// Characters permitted in IDSTR values.
pub fn is_idstr(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b':' | b'.' | b'_' | b'-'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_code_text_form() {
        let t: TagCode = "7FE0,0010".parse().unwrap();
        assert_eq!(t, tags::BULK_PAYLOAD);
        assert_eq!(t.to_string(), "7FE0,0010");
        assert!("7FE0;0010".parse::<TagCode>().is_err());
        assert!("7FE,0010".parse::<TagCode>().is_err());
    }

    #[test]
    fn private_range() {
        assert!(TagCode::new(0x0009, 0x0001).is_private());
        assert!(TagCode::new(0x7FE1, 0x0001).is_private());
        assert!(!TagCode::new(0x0007, 0x0001).is_private());
        assert!(!tags::ORDER_ID.is_private());
    }

    #[test]
    fn method_vocabulary() {
        assert_eq!("UT".parse::<Method>(), Ok(Method::UT));
        assert!("XX".parse::<Method>().is_err());
    }
}
