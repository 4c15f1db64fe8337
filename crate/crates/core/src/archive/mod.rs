//! Revision-safe bulk-data archive.
//!
//! Objects are encoded with the tagged-binary [`codec`], written once to
//! `<uid>.ndeo` and linked into the append-only [`chain`]. There is no
//! delete or update path. The directory comes from `NDE4_DATA_DIR`
//! (default `./nde4-data`) when not given explicitly.

pub mod chain;
pub mod codec;
pub mod wire;

pub use chain::{verify_dir, ChainRecord, ChainStatus, Defect, Digest, Strategy};
pub use codec::{decode_object, encode_object, CodecError, DataObject, Element};

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::semantics::{validate_object, Dictionary, Method, ObjectReport};
use crate::time::LogicalClock;

pub const CHAIN_FILE: &str = "chain.log";
pub const OBJECT_EXT: &str = ".ndeo";
pub const DATA_DIR_ENV: &str = "NDE4_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "./nde4-data";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("object failed semantic validation:\n{0}")]
    ValidationFailed(ObjectReport),
    #[error("object UID {0:?} already stored")]
    DuplicateUid(String),
    #[error("unknown object UID {0:?}")]
    UnknownUid(String),
    #[error("{0:?} is not a valid object UID")]
    InvalidUid(String),
    #[error("archive chain is damaged at index {index}; refusing to append")]
    Corrupt { index: u64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Object UIDs double as file names: `[A-Za-z0-9][A-Za-z0-9._-]{0,127}`.
pub fn is_object_uid(uid: &str) -> bool {
    let bytes = uid.as_bytes();
    !bytes.is_empty()
        && bytes.len() <= 128
        && bytes[0].is_ascii_alphanumeric()
        && bytes
            .iter()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

pub(crate) fn object_path(dir: &Path, uid: &str) -> PathBuf {
    dir.join(format!("{uid}{OBJECT_EXT}"))
}

/// `NDE4_DATA_DIR`, falling back to `./nde4-data`.
pub fn data_dir_from_env() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// Conjunctive metadata filter. Absent fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCriteria {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_serial: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
}

impl QueryCriteria {
    pub fn order(order_id: &str) -> Self {
        Self {
            order_id: Some(order_id.to_owned()),
            ..Self::default()
        }
    }

    pub fn matches(&self, meta: &ObjectMeta) -> bool {
        self.order_id
            .as_deref()
            .is_none_or(|o| meta.order_id.as_deref() == Some(o))
            && self
                .component_serial
                .as_deref()
                .is_none_or(|s| meta.component_serial.as_deref() == Some(s))
            && self.method.is_none_or(|m| meta.method.as_deref() == Some(m.as_str()))
    }
}

/// Metadata extracted from a stored object for querying.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectMeta {
    pub order_id: Option<String>,
    pub component_serial: Option<String>,
    pub method: Option<String>,
}

impl ObjectMeta {
    pub fn of(obj: &DataObject) -> Self {
        Self {
            order_id: obj.order_id().map(str::to_owned),
            component_serial: obj.component_serial().map(str::to_owned),
            method: obj.method().map(str::to_owned),
        }
    }
}

/// Read-only view used by other components to check archive references.
pub trait ObjectIndex: Send + Sync {
    /// The order an object belongs to, or `None` if the UID is unknown.
    fn order_of(&self, uid: &str) -> Option<String>;

    fn contains(&self, uid: &str) -> bool {
        self.order_of(uid).is_some()
    }
}

#[derive(Default)]
struct Index {
    records: Vec<ChainRecord>,
    meta: Vec<ObjectMeta>,
    by_uid: HashMap<String, usize>,
    corrupt_at: Option<u64>,
}

/// Single writer, many readers. Readers only ever see committed objects.
pub struct Archive {
    dir: PathBuf,
    dict: Dictionary,
    clock: LogicalClock,
    writer: Mutex<()>,
    index: RwLock<Index>,
}

impl std::fmt::Debug for Archive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Archive").field("dir", &self.dir).finish()
    }
}

impl Archive {
    /// Open (creating if needed) the store in `dir`.
    pub fn open(dir: impl Into<PathBuf>, dict: Dictionary, clock: LogicalClock) -> Result<Self, ArchiveError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let log = match fs::read(dir.join(CHAIN_FILE)) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let parsed = chain::parse_log(&log);
        let mut index = Index {
            corrupt_at: parsed.defect.map(|_| parsed.records.len() as u64),
            ..Index::default()
        };
        for record in parsed.records {
            let meta = fs::read(object_path(&dir, &record.object_uid))
                .ok()
                .and_then(|bytes| decode_object(&bytes).ok())
                .map(|obj| ObjectMeta::of(&obj))
                .unwrap_or_default();
            index.by_uid.insert(record.object_uid.clone(), index.records.len());
            index.records.push(record);
            index.meta.push(meta);
        }
        Ok(Self {
            dir,
            dict,
            clock,
            writer: Mutex::new(()),
            index: RwLock::new(index),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn object_file(&self, uid: &str) -> PathBuf {
        object_path(&self.dir, uid)
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validate, persist and chain one object. All-or-nothing.
    pub fn store(&self, obj: &DataObject) -> Result<String, ArchiveError> {
        let report = validate_object(&self.dict, obj);
        if !report.is_valid() {
            return Err(ArchiveError::ValidationFailed(report));
        }
        let uid = obj.uid().unwrap_or_default().to_owned();
        if !is_object_uid(&uid) {
            return Err(ArchiveError::InvalidUid(uid));
        }

        let _guard = self.writer.lock().unwrap();
        let (index, prev) = {
            let idx = self.index.read().unwrap();
            if let Some(at) = idx.corrupt_at {
                return Err(ArchiveError::Corrupt { index: at });
            }
            if idx.by_uid.contains_key(&uid) {
                return Err(ArchiveError::DuplicateUid(uid));
            }
            let prev = idx
                .records
                .last()
                .map(ChainRecord::digest)
                .unwrap_or(chain::ZERO_DIGEST);
            (idx.records.len() as u64, prev)
        };

        let bytes = encode_object(obj);
        let record = ChainRecord {
            index,
            object_uid: uid.clone(),
            object_digest: chain::sha256(&bytes),
            prev_digest: prev,
            stored_at: self.clock.now(),
        };

        let path = self.object_file(&uid);
        if path.exists() {
            // A file without a record: leftover of a crashed store or tampering.
            return Err(ArchiveError::DuplicateUid(uid));
        }
        let tmp = self.dir.join(format!(".{uid}.tmp"));
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, &path)?;
        if let Err(e) = self.append_record(&record) {
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }

        let mut idx = self.index.write().unwrap();
        let at = idx.records.len();
        idx.by_uid.insert(uid.clone(), at);
        idx.records.push(record);
        idx.meta.push(ObjectMeta::of(obj));
        Ok(uid)
    }

    fn append_record(&self, record: &ChainRecord) -> std::io::Result<()> {
        let path = self.dir.join(CHAIN_FILE);
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let before = file.metadata()?.len();
        let result = file.write_all(&record.to_log_bytes()).and_then(|_| file.sync_data());
        if result.is_err() {
            let _ = file.set_len(before);
        }
        result
    }

    pub fn fetch_bytes(&self, uid: &str) -> Result<Vec<u8>, ArchiveError> {
        if !self.index.read().unwrap().by_uid.contains_key(uid) {
            return Err(ArchiveError::UnknownUid(uid.to_owned()));
        }
        Ok(fs::read(self.object_file(uid))?)
    }

    pub fn fetch(&self, uid: &str) -> Result<DataObject, ArchiveError> {
        Ok(decode_object(&self.fetch_bytes(uid)?)?)
    }

    /// UIDs matching all supplied criteria, in store order.
    pub fn query(&self, criteria: &QueryCriteria) -> Vec<String> {
        let idx = self.index.read().unwrap();
        idx.records
            .iter()
            .zip(&idx.meta)
            .filter(|(_, meta)| criteria.matches(meta))
            .map(|(r, _)| r.object_uid.clone())
            .collect()
    }

    /// All UIDs in store order.
    pub fn list(&self) -> Vec<String> {
        self.query(&QueryCriteria::default())
    }

    pub fn records(&self) -> Vec<ChainRecord> {
        self.index.read().unwrap().records.clone()
    }

    pub fn verify_chain(&self) -> Result<ChainStatus, ArchiveError> {
        self.verify_chain_with(Strategy::default())
    }

    pub fn verify_chain_with(&self, strategy: Strategy) -> Result<ChainStatus, ArchiveError> {
        let _guard = self.writer.lock().unwrap();
        Ok(verify_dir(&self.dir, strategy)?)
    }
}

impl ObjectIndex for Archive {
    fn order_of(&self, uid: &str) -> Option<String> {
        let idx = self.index.read().unwrap();
        idx.by_uid
            .get(uid)
            .map(|&i| idx.meta[i].order_id.clone().unwrap_or_default())
    }
}
