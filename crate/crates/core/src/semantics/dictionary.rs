use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use super::{Multiplicity, TagCode, TagDefinition, ValueRep};

const DEFAULT_TABLE: &str = include_str!("../../data/dict-v1.tsv");

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("unknown standard tag ({0})")]
    UnknownStandardTag(TagCode),
    #[error("line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("duplicate code ({0})")]
    DuplicateCode(TagCode),
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("code ({0}) lies in the private range")]
    PrivateCode(TagCode),
    #[error("dictionary file name must look like dict-vN.tsv")]
    FileName,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of a successful [`Dictionary::lookup`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup<'a> {
    Defined(&'a TagDefinition),
    Private,
}

/// An immutable, versioned snapshot of tag definitions. Extending produces a
/// new version that is a superset of this one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    version: u32,
    defs: Vec<TagDefinition>,
}

impl Dictionary {
    /// The compiled-in normative dictionary (version 1).
    pub fn standard() -> Self {
        Self::from_tsv(DEFAULT_TABLE, 1).expect("compiled-in dictionary is valid")
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn definitions(&self) -> &[TagDefinition] {
        &self.defs
    }

    pub fn lookup(&self, code: TagCode) -> Result<Lookup<'_>, DictionaryError> {
        if code.is_private() {
            return Ok(Lookup::Private);
        }
        self.defs
            .iter()
            .find(|d| d.code == code)
            .map(Lookup::Defined)
            .ok_or(DictionaryError::UnknownStandardTag(code))
    }

    pub fn by_name(&self, name: &str) -> Option<&TagDefinition> {
        self.defs.iter().find(|d| d.name == name)
    }

    /// Append definitions, yielding version `N + 1`. Existing codes keep
    /// their meaning.
    pub fn extend(&self, defs: impl IntoIterator<Item = TagDefinition>) -> Result<Dictionary, DictionaryError> {
        let mut next = self.defs.clone();
        next.extend(defs);
        Self::checked(next, self.version + 1)
    }

    fn checked(defs: Vec<TagDefinition>, version: u32) -> Result<Self, DictionaryError> {
        let mut codes = HashSet::new();
        let mut names = HashSet::new();
        for d in &defs {
            if d.code.is_private() {
                return Err(DictionaryError::PrivateCode(d.code));
            }
            if !codes.insert(d.code) {
                return Err(DictionaryError::DuplicateCode(d.code));
            }
            if !names.insert(d.name.as_str()) {
                return Err(DictionaryError::DuplicateName(d.name.clone()));
            }
        }
        Ok(Dictionary { version, defs })
    }

    /// Parse a table of `code name value_rep units multiplicity` lines.
    /// `#` starts a comment line; `-` marks absent units.
    pub fn from_tsv(text: &str, version: u32) -> Result<Self, DictionaryError> {
        let mut defs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| DictionaryError::Table {
                line,
                reason: reason.to_owned(),
            };
            let cols: Vec<&str> = raw.split('\t').collect();
            let [code, name, rep, units, mult] = cols[..] else {
                return Err(bad("expected 5 tab-separated columns"));
            };
            let code: TagCode = code.parse().map_err(|_| bad("bad tag code"))?;
            let value_rep: ValueRep = rep.parse().map_err(|_| bad("unknown value rep"))?;
            let multiplicity = match mult {
                "1" => Multiplicity::One,
                "N" => Multiplicity::Many,
                _ => return Err(bad("multiplicity must be 1 or N")),
            };
            if name.is_empty() {
                return Err(bad("empty name"));
            }
            defs.push(TagDefinition {
                code,
                name: name.to_owned(),
                value_rep,
                units: (units != "-").then(|| units.to_owned()),
                multiplicity,
            });
        }
        Self::checked(defs, version)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# code\tname\tvalue_rep\tunits\tmultiplicity\n");
        for d in &self.defs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                d.code,
                d.name,
                d.value_rep.as_str(),
                d.units.as_deref().unwrap_or("-"),
                match d.multiplicity {
                    Multiplicity::One => "1",
                    Multiplicity::Many => "N",
                }
            ));
        }
        out
    }

    /// Load `dict-vN.tsv`, taking the version from the file name.
    pub fn load(path: &Path) -> Result<Self, DictionaryError> {
        let version = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("dict-v"))
            .and_then(|n| n.strip_suffix(".tsv"))
            .and_then(|n| n.parse().ok())
            .ok_or(DictionaryError::FileName)?;
        let text = std::fs::read_to_string(path)?;
        Self::from_tsv(&text, version)
    }
}

impl Default for Dictionary {
    fn default() -> Self {
        Self::standard()
    }
}
