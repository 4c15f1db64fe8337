use thiserror::Error;

use super::{is_idstr, TagDefinition, ValueRep};
use crate::time::{Timestamp, TIMESTAMP_LEN};

/// A decoded element value in its host representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    IdStr(String),
    Text(String),
    DateTime(Timestamp),
    U16(u16),
    F32Array(Vec<f32>),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn value_rep(&self) -> ValueRep {
        match self {
            Value::IdStr(_) => ValueRep::IdStr,
            Value::Text(_) => ValueRep::Text,
            Value::DateTime(_) => ValueRep::DateTime,
            Value::U16(_) => ValueRep::U16,
            Value::F32Array(_) => ValueRep::F32Array,
            Value::Bytes(_) => ValueRep::Bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpretError {
    #[error("{rep} value has invalid length {len}")]
    LengthMismatch { rep: &'static str, len: usize },
    #[error("{rep} value is not validly encoded: {reason}")]
    EncodingError { rep: &'static str, reason: String },
}

/// Decode raw element bytes according to a tag definition. Numbers are
/// little-endian.
pub fn interpret(def: &TagDefinition, raw: &[u8]) -> Result<Value, InterpretError> {
    let rep = def.value_rep.as_str();
    let length = || InterpretError::LengthMismatch { rep, len: raw.len() };
    let encoding = |reason: String| InterpretError::EncodingError { rep, reason };

    match def.value_rep {
        ValueRep::IdStr => {
            let s = std::str::from_utf8(raw).map_err(|e| encoding(e.to_string()))?;
            if !is_idstr(s) {
                return Err(encoding(format!("{s:?} is not an identifier string")));
            }
            Ok(Value::IdStr(s.to_owned()))
        }
        ValueRep::Text => std::str::from_utf8(raw)
            .map(|s| Value::Text(s.to_owned()))
            .map_err(|e| encoding(e.to_string())),
        ValueRep::DateTime => {
            if raw.len() != TIMESTAMP_LEN {
                return Err(length());
            }
            Timestamp::parse_bytes(raw)
                .map(Value::DateTime)
                .map_err(|e| encoding(e.to_string()))
        }
        ValueRep::U16 => {
            let bytes: [u8; 2] = raw.try_into().map_err(|_| length())?;
            Ok(Value::U16(u16::from_le_bytes(bytes)))
        }
        ValueRep::F32Array => {
            if !raw.len().is_multiple_of(4) {
                return Err(length());
            }
            Ok(Value::F32Array(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ))
        }
        ValueRep::Bytes => Ok(Value::Bytes(raw.to_vec())),
    }
}

/// Inverse of [`interpret`].
pub fn encode_value(value: &Value) -> Vec<u8> {
    match value {
        Value::IdStr(s) | Value::Text(s) => s.as_bytes().to_vec(),
        Value::DateTime(t) => t.to_bytes().to_vec(),
        Value::U16(v) => v.to_le_bytes().to_vec(),
        Value::F32Array(values) => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        Value::Bytes(b) => b.clone(),
    }
}
