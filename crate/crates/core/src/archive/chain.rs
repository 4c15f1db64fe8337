//! Append-only digest chain over stored objects.
//!
//! `chain.log` is a sequence of records:
//!
//! ```text
//! record := body_len:u32le body record_digest[32]
//! body   := index:u64le uid object_digest[32] prev_digest[32] stored_at[15]
//! ```
//!
//! `record_digest = SHA-256(body)` and record `k` carries record `k-1`'s
//! digest as `prev_digest` (all zeros for record 0). The uid length is
//! implied by `body_len`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use sha2::{Digest as _, Sha256};

use super::{is_object_uid, object_path, CHAIN_FILE, OBJECT_EXT};
use crate::par;
use crate::time::{Timestamp, TIMESTAMP_LEN};

pub type Digest = [u8; 32];

pub const ZERO_DIGEST: Digest = [0u8; 32];
const FIXED_BODY: usize = 8 + 32 + 32 + TIMESTAMP_LEN;

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainRecord {
    pub index: u64,
    pub object_uid: String,
    pub object_digest: Digest,
    pub prev_digest: Digest,
    pub stored_at: Timestamp,
}

impl ChainRecord {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_BODY + self.object_uid.len());
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(self.object_uid.as_bytes());
        out.extend_from_slice(&self.object_digest);
        out.extend_from_slice(&self.prev_digest);
        out.extend_from_slice(&self.stored_at.to_bytes());
        out
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }

    /// On-disk form: length prefix, canonical bytes, self digest.
    pub fn to_log_bytes(&self) -> Vec<u8> {
        let body = self.canonical_bytes();
        let mut out = Vec::with_capacity(4 + body.len() + 32);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&sha256(&body));
        out
    }

    fn from_body(body: &[u8]) -> Option<Self> {
        if body.len() <= FIXED_BODY {
            return None;
        }
        let uid_len = body.len() - FIXED_BODY;
        let index = u64::from_le_bytes(body[..8].try_into().ok()?);
        let uid = std::str::from_utf8(&body[8..8 + uid_len]).ok()?;
        if !is_object_uid(uid) {
            return None;
        }
        let rest = &body[8 + uid_len..];
        Some(ChainRecord {
            index,
            object_uid: uid.to_owned(),
            object_digest: rest[..32].try_into().ok()?,
            prev_digest: rest[32..64].try_into().ok()?,
            stored_at: Timestamp::parse_bytes(&rest[64..]).ok()?,
        })
    }
}

/// Why a record failed verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Defect {
    Truncated,
    Malformed,
    RecordDigest,
    IndexMismatch,
    BrokenLink,
    DuplicateUid,
    MissingObject,
    ObjectDigest,
    /// An object file exists that no record accounts for.
    MissingRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainStatus {
    Ok { records: usize },
    Bad { index: u64, defect: Defect },
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok { .. })
    }

    pub fn bad_index(&self) -> Option<u64> {
        match self {
            ChainStatus::Ok { .. } => None,
            ChainStatus::Bad { index, .. } => Some(*index),
        }
    }
}

impl fmt::Display for ChainStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainStatus::Ok { .. } => f.write_str("chain OK"),
            ChainStatus::Bad { index, defect } => write!(f, "bad at index {index} ({defect:?})"),
        }
    }
}

/// Result of structurally parsing a chain log: the records that parsed and
/// self-verified, plus the first structural defect, if any.
pub(crate) struct ParsedChain {
    pub records: Vec<ChainRecord>,
    pub defect: Option<Defect>,
}

pub(crate) fn parse_log(bytes: &[u8]) -> ParsedChain {
    let mut records: Vec<ChainRecord> = Vec::new();
    let mut seen = HashSet::new();
    let mut pos = 0;
    let mut prev = ZERO_DIGEST;
    while pos < bytes.len() {
        let k = records.len() as u64;
        let fail = |records, defect| ParsedChain {
            records,
            defect: Some(defect),
        };
        let Some(len_bytes) = bytes.get(pos..pos + 4) else {
            return fail(records, Defect::Truncated);
        };
        let body_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let body_start = pos + 4;
        let Some(body) = bytes.get(body_start..body_start + body_len) else {
            return fail(records, Defect::Truncated);
        };
        let Some(stored) = bytes.get(body_start + body_len..body_start + body_len + 32) else {
            return fail(records, Defect::Truncated);
        };
        let digest = sha256(body);
        if digest[..] != stored[..] {
            return fail(records, Defect::RecordDigest);
        }
        let Some(record) = ChainRecord::from_body(body) else {
            return fail(records, Defect::Malformed);
        };
        if record.index != k {
            return fail(records, Defect::IndexMismatch);
        }
        if record.prev_digest != prev {
            return fail(records, Defect::BrokenLink);
        }
        if !seen.insert(record.object_uid.clone()) {
            return fail(records, Defect::DuplicateUid);
        }
        prev = digest;
        records.push(record);
        pos = body_start + body_len + 32;
    }
    ParsedChain { records, defect: None }
}

/// Which execution strategy to use for digesting object files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    Sequential,
    #[default]
    Parallel,
}

fn object_defect(dir: &Path, record: &ChainRecord) -> Option<Defect> {
    match std::fs::read(object_path(dir, &record.object_uid)) {
        Ok(bytes) if sha256(&bytes) == record.object_digest => None,
        Ok(_) => Some(Defect::ObjectDigest),
        Err(_) => Some(Defect::MissingObject),
    }
}

/// Recompute every digest in the store rooted at `dir` and report the
/// smallest index whose record or object bytes fail. Tampering is a
/// result, not an error.
pub fn verify_dir(dir: &Path, strategy: Strategy) -> std::io::Result<ChainStatus> {
    let log = match std::fs::read(dir.join(CHAIN_FILE)) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    let parsed = parse_log(&log);

    let check = |r: &ChainRecord| object_defect(dir, r);
    let object_defects = match strategy {
        Strategy::Sequential => par::map_seq(&parsed.records, check),
        Strategy::Parallel => par::map(&parsed.records, check),
    };
    if let Some((k, defect)) = object_defects
        .into_iter()
        .enumerate()
        .find_map(|(k, d)| d.map(|d| (k, d)))
    {
        return Ok(ChainStatus::Bad {
            index: k as u64,
            defect,
        });
    }
    let tail = parsed.records.len() as u64;
    if let Some(defect) = parsed.defect {
        return Ok(ChainStatus::Bad { index: tail, defect });
    }

    let known: HashSet<&str> = parsed.records.iter().map(|r| r.object_uid.as_str()).collect();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(uid) = name.strip_suffix(OBJECT_EXT) {
            if !known.contains(uid) {
                return Ok(ChainStatus::Bad {
                    index: tail,
                    defect: Defect::MissingRecord,
                });
            }
        }
    }
    Ok(ChainStatus::Ok {
        records: parsed.records.len(),
    })
}
