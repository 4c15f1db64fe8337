//! ARCHIVE-channel messages: a one-byte opcode followed by a body.
//!
//! | opcode | body |
//! |--------|------|
//! | `STORE`  0x01 | encoded object |
//! | `FETCH`  0x02 | UID, UTF-8 |
//! | `QUERY`  0x03 | criteria JSON |
//! | `RESULT` 0x04 | encoded object (fetch) or JSON `{"uid":..}` / `{"uids":[..]}` |
//! | `ERROR`  0x7F | JSON `{"code":..,"message":..}` |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{decode_object, encode_object, Archive, ArchiveError, CodecError, DataObject, QueryCriteria};
use crate::orders::frame::{decode_frame, encode_frame, Channel, FrameError};

pub const OP_STORE: u8 = 0x01;
pub const OP_FETCH: u8 = 0x02;
pub const OP_QUERY: u8 = 0x03;
pub const OP_RESULT: u8 = 0x04;
pub const OP_ERROR: u8 = 0x7F;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("empty archive message")]
    Empty,
    #[error("unknown archive opcode 0x{0:02X}")]
    UnknownOpcode(u8),
    #[error("malformed body: {0}")]
    Body(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveRequest {
    Store(DataObject),
    Fetch(String),
    Query(QueryCriteria),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveResponse {
    Stored(String),
    Object(DataObject),
    Uids(Vec<String>),
    Error(ErrorBody),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ResultBody {
    Stored { uid: String },
    Uids { uids: Vec<String> },
}

fn body_err(e: impl std::fmt::Display) -> WireError {
    WireError::Body(e.to_string())
}

impl ArchiveRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ArchiveRequest::Store(obj) => {
                out.push(OP_STORE);
                out.extend(encode_object(obj));
            }
            ArchiveRequest::Fetch(uid) => {
                out.push(OP_FETCH);
                out.extend_from_slice(uid.as_bytes());
            }
            ArchiveRequest::Query(c) => {
                out.push(OP_QUERY);
                out.extend(serde_json::to_vec(c).expect("criteria serialize"));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let (&op, body) = bytes.split_first().ok_or(WireError::Empty)?;
        match op {
            OP_STORE => Ok(ArchiveRequest::Store(decode_object(body)?)),
            OP_FETCH => std::str::from_utf8(body)
                .map(|s| ArchiveRequest::Fetch(s.to_owned()))
                .map_err(body_err),
            OP_QUERY => serde_json::from_slice(body)
                .map(ArchiveRequest::Query)
                .map_err(body_err),
            other => Err(WireError::UnknownOpcode(other)),
        }
    }
}

impl ArchiveResponse {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ArchiveResponse::Stored(uid) => {
                out.push(OP_RESULT);
                out.extend(serde_json::to_vec(&ResultBody::Stored { uid: uid.clone() }).unwrap());
            }
            ArchiveResponse::Uids(uids) => {
                out.push(OP_RESULT);
                out.extend(serde_json::to_vec(&ResultBody::Uids { uids: uids.clone() }).unwrap());
            }
            ArchiveResponse::Object(obj) => {
                out.push(OP_RESULT);
                out.extend(encode_object(obj));
            }
            ArchiveResponse::Error(e) => {
                out.push(OP_ERROR);
                out.extend(serde_json::to_vec(e).unwrap());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let (&op, body) = bytes.split_first().ok_or(WireError::Empty)?;
        match op {
            OP_RESULT if body.starts_with(super::codec::OBJECT_MAGIC) => {
                Ok(ArchiveResponse::Object(decode_object(body)?))
            }
            OP_RESULT => match serde_json::from_slice(body).map_err(body_err)? {
                ResultBody::Stored { uid } => Ok(ArchiveResponse::Stored(uid)),
                ResultBody::Uids { uids } => Ok(ArchiveResponse::Uids(uids)),
            },
            OP_ERROR => serde_json::from_slice(body)
                .map(ArchiveResponse::Error)
                .map_err(body_err),
            other => Err(WireError::UnknownOpcode(other)),
        }
    }
}

fn error_code(e: &ArchiveError) -> &'static str {
    match e {
        ArchiveError::ValidationFailed(_) => "ValidationFailed",
        ArchiveError::DuplicateUid(_) => "DuplicateUID",
        ArchiveError::UnknownUid(_) => "UnknownUID",
        ArchiveError::InvalidUid(_) => "InvalidUID",
        ArchiveError::Corrupt { .. } => "Corrupt",
        ArchiveError::Codec(_) => "Codec",
        ArchiveError::Io(_) => "Io",
    }
}

/// Serve one request against an archive.
pub fn handle(archive: &Archive, request: &ArchiveRequest) -> ArchiveResponse {
    let result = match request {
        ArchiveRequest::Store(obj) => archive.store(obj).map(ArchiveResponse::Stored),
        ArchiveRequest::Fetch(uid) => archive.fetch(uid).map(ArchiveResponse::Object),
        ArchiveRequest::Query(c) => Ok(ArchiveResponse::Uids(archive.query(c))),
    };
    result.unwrap_or_else(|e| {
        ArchiveResponse::Error(ErrorBody {
            code: error_code(&e).to_owned(),
            message: e.to_string(),
        })
    })
}

/// Serve one ARCHIVE-channel frame, returning the response frame bytes.
pub fn handle_frame(archive: &Archive, frame_bytes: &[u8]) -> Result<Vec<u8>, WireError> {
    let frame = decode_frame(frame_bytes)?;
    if frame.channel != Channel::Archive {
        return Err(WireError::Body(format!(
            "expected ARCHIVE channel, got {:?}",
            frame.channel
        )));
    }
    let response = match ArchiveRequest::from_bytes(&frame.payload) {
        Ok(req) => handle(archive, &req),
        Err(e) => ArchiveResponse::Error(ErrorBody {
            code: "BadRequest".into(),
            message: e.to_string(),
        }),
    };
    Ok(encode_frame(Channel::Archive, &response.to_bytes())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::{tags, Dictionary};
    use crate::time::LogicalClock;

    fn obj(uid: &str) -> DataObject {
        let mut o = DataObject::new();
        o.set_str(tags::OBJECT_UID, uid);
        o.set_str(tags::METHOD_CODE, "RT");
        o.set_str(tags::COMPONENT_SERIAL, "S-1");
        o.set_str(tags::ORDER_ID, "ORD-1");
        o
    }

    fn roundtrip(archive: &Archive, req: ArchiveRequest) -> ArchiveResponse {
        let frame = encode_frame(Channel::Archive, &req.to_bytes()).unwrap();
        let resp = handle_frame(archive, &frame).unwrap();
        ArchiveResponse::from_bytes(&decode_frame(&resp).unwrap().payload).unwrap()
    }

    #[test]
    fn store_fetch_query_over_frames() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path(), Dictionary::standard(), LogicalClock::new()).unwrap();
        assert_eq!(
            roundtrip(&archive, ArchiveRequest::Store(obj("x1"))),
            ArchiveResponse::Stored("x1".into())
        );
        assert_eq!(
            roundtrip(&archive, ArchiveRequest::Fetch("x1".into())),
            ArchiveResponse::Object(obj("x1"))
        );
        assert_eq!(
            roundtrip(&archive, ArchiveRequest::Query(QueryCriteria::order("ORD-1"))),
            ArchiveResponse::Uids(vec!["x1".into()])
        );
        match roundtrip(&archive, ArchiveRequest::Fetch("nope".into())) {
            ArchiveResponse::Error(e) => assert_eq!(e.code, "UnknownUID"),
            other => panic!("unexpected {other:?}"),
        }
        match roundtrip(&archive, ArchiveRequest::Store(obj("x1"))) {
            ArchiveResponse::Error(e) => assert_eq!(e.code, "DuplicateUID"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_requests() {
        assert!(matches!(ArchiveRequest::from_bytes(&[]), Err(WireError::Empty)));
        assert!(matches!(
            ArchiveRequest::from_bytes(&[0x55]),
            Err(WireError::UnknownOpcode(0x55))
        ));
        assert!(matches!(
            ArchiveRequest::from_bytes(&[OP_STORE, b'x']),
            Err(WireError::Codec(CodecError::BadPreamble))
        ));
        let dir = tempfile::tempdir().unwrap();
        let archive = Archive::open(dir.path(), Dictionary::standard(), LogicalClock::new()).unwrap();
        let frame = encode_frame(Channel::Archive, &[0x55]).unwrap();
        let resp = handle_frame(&archive, &frame).unwrap();
        assert!(matches!(
            ArchiveResponse::from_bytes(&decode_frame(&resp).unwrap().payload).unwrap(),
            ArchiveResponse::Error(ErrorBody { ref code, .. }) if code == "BadRequest"
        ));
        let wrong = encode_frame(Channel::Orders, &[OP_FETCH]).unwrap();
        assert!(handle_frame(&archive, &wrong).is_err());
    }
}
