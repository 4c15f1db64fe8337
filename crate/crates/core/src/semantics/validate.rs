use std::fmt;

use serde::Serialize;

use super::{tags, Dictionary, Lookup, Method, Multiplicity, TagCode, TagDefinition, ValueRep};
use crate::archive::DataObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FindingKind {
    UnknownStandardTag,
    ValueRepMismatch,
    MultiplicityViolation,
    MissingMandatory,
    /// Informational: vendor extensions are tolerated but surfaced.
    PrivateTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Severity {
    Info,
    Error,
}

impl FindingKind {
    pub fn severity(&self) -> Severity {
        match self {
            FindingKind::PrivateTag => Severity::Info,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObjectFinding {
    pub kind: FindingKind,
    pub tag: TagCode,
    pub detail: String,
}

impl fmt::Display for ObjectFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} ({}) {}", self.kind, self.tag, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ObjectReport {
    pub findings: Vec<ObjectFinding>,
}

impl ObjectReport {
    /// No error-severity findings. Informational ones are allowed.
    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &ObjectFinding> {
        self.findings.iter().filter(|f| f.kind.severity() == Severity::Error)
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }
}

impl fmt::Display for ObjectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Count of values carried by an element, or `None` if the bytes cannot be
/// split under the representation at all.
fn value_count(def: &TagDefinition, raw: &[u8]) -> Option<usize> {
    match def.value_rep {
        ValueRep::IdStr | ValueRep::Text => {
            let s = std::str::from_utf8(raw).ok()?;
            Some(if s.is_empty() { 0 } else { s.split('\\').count() })
        }
        ValueRep::U16 => raw.len().is_multiple_of(2).then_some(raw.len() / 2),
        ValueRep::DateTime | ValueRep::F32Array | ValueRep::Bytes => Some(1),
    }
}

fn check_element(def: &TagDefinition, raw: &[u8]) -> Option<(FindingKind, String)> {
    let count = value_count(def, raw);
    if def.multiplicity == Multiplicity::One {
        if let Some(n) = count.filter(|&n| n != 1) {
            return Some((
                FindingKind::MultiplicityViolation,
                format!("{} expects 1 value, found {n}", def.name),
            ));
        }
    }
    if let Err(e) = super::interpret(def, raw) {
        return Some((FindingKind::ValueRepMismatch, format!("{}: {e}", def.name)));
    }
    if def.code == tags::METHOD_CODE {
        let text = String::from_utf8_lossy(raw);
        if text.parse::<Method>().is_err() {
            return Some((
                FindingKind::ValueRepMismatch,
                format!("method code {text:?} not in vocabulary"),
            ));
        }
    }
    None
}

/// Check every element of an object against the dictionary and report
/// missing mandatory tags. Findings are data; this never fails.
pub fn validate_object(dict: &Dictionary, obj: &DataObject) -> ObjectReport {
    let mut findings = Vec::new();
    for el in obj.elements() {
        match dict.lookup(el.tag) {
            Ok(Lookup::Private) => findings.push(ObjectFinding {
                kind: FindingKind::PrivateTag,
                tag: el.tag,
                detail: format!("private element, {} bytes", el.value.len()),
            }),
            Ok(Lookup::Defined(def)) => {
                if let Some((kind, detail)) = check_element(def, &el.value) {
                    findings.push(ObjectFinding {
                        kind,
                        tag: el.tag,
                        detail,
                    });
                }
            }
            Err(_) => findings.push(ObjectFinding {
                kind: FindingKind::UnknownStandardTag,
                tag: el.tag,
                detail: "not in dictionary".into(),
            }),
        }
    }
    for tag in tags::MANDATORY {
        if obj.get(tag).is_none() {
            let name = dict.by_code_name(tag);
            findings.push(ObjectFinding {
                kind: FindingKind::MissingMandatory,
                tag,
                detail: name,
            });
        }
    }
    ObjectReport { findings }
}

impl Dictionary {
    fn by_code_name(&self, code: TagCode) -> String {
        self.definitions()
            .iter()
            .find(|d| d.code == code)
            .map(|d| d.name.clone())
            .unwrap_or_default()
    }
}
