//! Tagged-binary object codec.
//!
//! ```text
//! object  := "NDEO" version:u8=1 element*
//! element := group:u16le element:u16le length:u32le value[length]
//! ```
//!
//! Elements are strictly ascending by `(group, element)`; the decoder rejects
//! anything else so each object has exactly one byte form.

use thiserror::Error;

use crate::semantics::{tags, TagCode};

pub const OBJECT_MAGIC: &[u8; 4] = b"NDEO";
pub const OBJECT_VERSION: u8 = 1;
const ELEMENT_HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("bad preamble: expected \"NDEO\" version 1")]
    BadPreamble,
    #[error("TruncatedElement at byte {offset}")]
    TruncatedElement { offset: usize },
    #[error("NonCanonicalOrder at byte {offset}: ({tag}) does not follow ({previous})")]
    NonCanonicalOrder {
        offset: usize,
        tag: TagCode,
        previous: TagCode,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub tag: TagCode,
    pub value: Vec<u8>,
}

/// A tagged dataset. Elements are kept in canonical order at all times.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataObject {
    elements: Vec<Element>,
}

impl DataObject {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from elements that must already be strictly ascending.
    pub fn from_elements(elements: Vec<Element>) -> Result<Self, CodecError> {
        for pair in elements.windows(2) {
            if pair[1].tag <= pair[0].tag {
                return Err(CodecError::NonCanonicalOrder {
                    offset: 0,
                    tag: pair[1].tag,
                    previous: pair[0].tag,
                });
            }
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<Element> {
        self.elements
    }

    pub fn get(&self, tag: TagCode) -> Option<&[u8]> {
        self.elements
            .binary_search_by_key(&tag, |e| e.tag)
            .ok()
            .map(|i| self.elements[i].value.as_slice())
    }

    pub fn get_str(&self, tag: TagCode) -> Option<&str> {
        self.get(tag).and_then(|v| std::str::from_utf8(v).ok())
    }

    /// Insert or replace an element, keeping canonical order.
    pub fn set(&mut self, tag: TagCode, value: Vec<u8>) {
        match self.elements.binary_search_by_key(&tag, |e| e.tag) {
            Ok(i) => self.elements[i].value = value,
            Err(i) => self.elements.insert(i, Element { tag, value }),
        }
    }

    pub fn set_str(&mut self, tag: TagCode, value: &str) {
        self.set(tag, value.as_bytes().to_vec());
    }

    pub fn remove(&mut self, tag: TagCode) -> Option<Vec<u8>> {
        self.elements
            .binary_search_by_key(&tag, |e| e.tag)
            .ok()
            .map(|i| self.elements.remove(i).value)
    }

    /// Copy every element of `seed` into this object, overwriting clashes.
    pub fn merge(&mut self, seed: &[Element]) {
        for el in seed {
            self.set(el.tag, el.value.clone());
        }
    }

    pub fn uid(&self) -> Option<&str> {
        self.get_str(tags::OBJECT_UID)
    }

    pub fn order_id(&self) -> Option<&str> {
        self.get_str(tags::ORDER_ID)
    }

    pub fn component_serial(&self) -> Option<&str> {
        self.get_str(tags::COMPONENT_SERIAL)
    }

    pub fn method(&self) -> Option<&str> {
        self.get_str(tags::METHOD_CODE)
    }

    pub fn encoded_len(&self) -> usize {
        5 + self
            .elements
            .iter()
            .map(|e| ELEMENT_HEADER + e.value.len())
            .sum::<usize>()
    }
}

pub fn encode_object(obj: &DataObject) -> Vec<u8> {
    let mut out = Vec::with_capacity(obj.encoded_len());
    out.extend_from_slice(OBJECT_MAGIC);
    out.push(OBJECT_VERSION);
    for el in &obj.elements {
        out.extend_from_slice(&el.tag.group.to_le_bytes());
        out.extend_from_slice(&el.tag.element.to_le_bytes());
        let len = u32::try_from(el.value.len()).expect("element value exceeds 4 GiB");
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&el.value);
    }
    out
}

pub fn decode_object(bytes: &[u8]) -> Result<DataObject, CodecError> {
    if bytes.len() < 5 || &bytes[..4] != OBJECT_MAGIC || bytes[4] != OBJECT_VERSION {
        return Err(CodecError::BadPreamble);
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut pos = 5;
    while pos < bytes.len() {
        let header = bytes
            .get(pos..pos + ELEMENT_HEADER)
            .ok_or(CodecError::TruncatedElement { offset: pos })?;
        let tag = TagCode::new(
            u16::from_le_bytes([header[0], header[1]]),
            u16::from_le_bytes([header[2], header[3]]),
        );
        let len = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as usize;
        if let Some(prev) = elements.last() {
            if tag <= prev.tag {
                return Err(CodecError::NonCanonicalOrder {
                    offset: pos,
                    tag,
                    previous: prev.tag,
                });
            }
        }
        let start = pos + ELEMENT_HEADER;
        let value = start
            .checked_add(len)
            .and_then(|end| bytes.get(start..end))
            .ok_or(CodecError::TruncatedElement { offset: pos })?;
        elements.push(Element {
            tag,
            value: value.to_vec(),
        });
        pos = start + len;
    }
    Ok(DataObject { elements })
}
