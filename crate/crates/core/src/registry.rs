//! Asset administration shells: the digital twin of every asset.
//!
//! A [`Manifest`] is the table of contents of an asset. Its header carries
//! the shell's type ID and the asset's instance ID; its body references the
//! asset's data, describes its services and lists nested child shells.
//! People are assets too: an inspector's shell is handled exactly like a
//! machine's.
//!
//! Manifests are exchanged as `.aas` JSON documents:
//!
//! ```json
//! {
//!   "header": {"shellTypeId": "urn:nde4:type:..", "assetInstanceId": "urn:nde4:inst:..", "displayName": ".."},
//!   "body": {"dataRefs": [{"semanticTag": "0020,0001", "locator": ".."}],
//!            "services": [{"name": "inspect-ut", "inputs": [], "outputs": []}],
//!            "children": ["urn:nde4:inst:.."]}
//! }
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::RwLock;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::identity::{InstanceId, TypeId};
use crate::semantics::{Dictionary, Method, TagCode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Header {
    #[serde(default, deserialize_with = "empty_as_none")]
    pub shell_type_id: Option<TypeId>,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub asset_instance_id: Option<InstanceId>,
    #[serde(default)]
    pub display_name: String,
}

fn empty_as_none<'de, D, T>(deserializer: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: std::str::FromStr,
    T::Err: fmt::Display,
{
    let text = Option::<String>::deserialize(deserializer)?;
    match text.as_deref() {
        None | Some("") => Ok(None),
        Some(s) => s.parse().map(Some).map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DataRef {
    pub semantic_tag: TagCode,
    /// Archive object UID or orders-bus topic.
    pub locator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDesc {
    pub name: String,
    #[serde(default)]
    pub inputs: Vec<TagCode>,
    #[serde(default)]
    pub outputs: Vec<TagCode>,
}

impl ServiceDesc {
    /// The inspection service advertising `method`.
    pub fn inspect(method: Method) -> Self {
        Self {
            name: format!("inspect-{}", method.as_str().to_ascii_lowercase()),
            inputs: vec![crate::semantics::tags::ORDER_ID, crate::semantics::tags::PROCEDURE_ID],
            outputs: vec![crate::semantics::tags::OBJECT_UID],
        }
    }

    /// The method this service performs, if it is an inspection service.
    pub fn method(&self) -> Option<Method> {
        self.name
            .strip_prefix("inspect-")
            .and_then(|m| m.to_ascii_uppercase().parse().ok())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Body {
    #[serde(default)]
    pub data_refs: Vec<DataRef>,
    #[serde(default)]
    pub services: Vec<ServiceDesc>,
    #[serde(default)]
    pub children: Vec<InstanceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub header: Header,
    #[serde(default)]
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("manifest parse error at byte {offset}: {message}")]
pub struct ManifestParseError {
    pub offset: usize,
    pub message: String,
}

/// Byte offset of a 1-based (line, column) position reported by serde_json.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

impl Manifest {
    pub fn new(shell_type_id: TypeId, asset_instance_id: InstanceId, display_name: &str) -> Self {
        Self {
            header: Header {
                shell_type_id: Some(shell_type_id),
                asset_instance_id: Some(asset_instance_id),
                display_name: display_name.to_owned(),
            },
            body: Body::default(),
        }
    }

    pub fn instance_id(&self) -> Option<&InstanceId> {
        self.header.asset_instance_id.as_ref()
    }

    pub fn methods(&self) -> BTreeSet<Method> {
        self.body.services.iter().filter_map(ServiceDesc::method).collect()
    }

    pub fn from_aas_str(text: &str) -> Result<Self, ManifestParseError> {
        serde_json::from_str(text).map_err(|e| ManifestParseError {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn to_aas_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ManifestFindingKind {
    MissingHeaderId,
    DuplicateBodyEntry,
    UnknownSemanticTag,
    /// Warning only: supply chains register shells in any order.
    DanglingChild,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestFinding {
    pub kind: ManifestFindingKind,
    pub detail: String,
}

impl fmt::Display for ManifestFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestReport {
    pub findings: Vec<ManifestFinding>,
}

impl ManifestReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    /// Findings that block registration (everything but dangling children).
    pub fn errors(&self) -> impl Iterator<Item = &ManifestFinding> {
        self.findings
            .iter()
            .filter(|f| f.kind != ManifestFindingKind::DanglingChild)
    }

    pub fn has(&self, kind: ManifestFindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }

    fn push(&mut self, kind: ManifestFindingKind, detail: String) {
        self.findings.push(ManifestFinding { kind, detail });
    }
}

impl fmt::Display for ManifestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

fn duplicates<T: Eq + std::hash::Hash + Clone>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut seen = HashSet::new();
    items.into_iter().filter(|i| !seen.insert(i.clone())).collect()
}

/// Structural validation of a manifest on its own. Dangling-child checks
/// need a registry; see [`Registry::validate`].
pub fn validate_manifest(dict: &Dictionary, manifest: &Manifest) -> ManifestReport {
    use ManifestFindingKind::*;
    let mut report = ManifestReport::default();
    if manifest.header.shell_type_id.is_none() {
        report.push(MissingHeaderId, "header.shellTypeId".into());
    }
    if manifest.header.asset_instance_id.is_none() {
        report.push(MissingHeaderId, "header.assetInstanceId".into());
    }

    let body = &manifest.body;
    for dup in duplicates(body.data_refs.iter()) {
        report.push(
            DuplicateBodyEntry,
            format!("dataRef ({}) {}", dup.semantic_tag, dup.locator),
        );
    }
    for dup in duplicates(body.services.iter().map(|s| s.name.as_str())) {
        report.push(DuplicateBodyEntry, format!("service {dup}"));
    }
    for dup in duplicates(body.children.iter()) {
        report.push(DuplicateBodyEntry, format!("child {dup}"));
    }

    let tags = body.data_refs.iter().map(|r| r.semantic_tag).chain(
        body.services
            .iter()
            .flat_map(|s| s.inputs.iter().chain(&s.outputs).copied()),
    );
    let mut reported = HashSet::new();
    for tag in tags {
        if dict.lookup(tag).is_err() && reported.insert(tag) {
            report.push(UnknownSemanticTag, format!("({tag})"));
        }
    }
    report
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("instance {0} is already registered")]
    DuplicateInstance(InstanceId),
    #[error("invalid manifest:\n{0}")]
    InvalidManifest(ManifestReport),
    #[error("nesting {child} under {parent} would create a cycle")]
    CycleDetected {
        parent: Box<InstanceId>,
        child: Box<InstanceId>,
    },
    #[error("unknown shell {0}")]
    UnknownShell(InstanceId),
}

/// Returned by [`Registry::register`]; carries non-blocking findings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellHandle {
    pub id: InstanceId,
    pub warnings: ManifestReport,
}

#[derive(Default)]
struct Inner {
    shells: HashMap<InstanceId, Manifest>,
    order: Vec<InstanceId>,
    /// Nesting edges added after registration via `nest`.
    added: HashMap<InstanceId, Vec<InstanceId>>,
}

impl Inner {
    fn children(&self, id: &InstanceId) -> impl Iterator<Item = &InstanceId> {
        let declared = self
            .shells
            .get(id)
            .map(|m| m.body.children.as_slice())
            .unwrap_or_default();
        let added = self.added.get(id).map(Vec::as_slice).unwrap_or_default();
        declared.iter().chain(added)
    }

    /// Whether `target` is reachable from any of `start`.
    fn reaches<'a>(&'a self, start: impl IntoIterator<Item = &'a InstanceId>, target: &InstanceId) -> bool {
        let mut stack: Vec<&InstanceId> = start.into_iter().collect();
        let mut seen = HashSet::new();
        while let Some(node) = stack.pop() {
            if node == target {
                return true;
            }
            if seen.insert(node) {
                stack.extend(self.children(node));
            }
        }
        false
    }
}

/// Thread-safe shell store. Mutations are serialized; reads run in parallel
/// and always observe a complete manifest.
#[derive(Default)]
pub struct Registry {
    dict: Dictionary,
    inner: RwLock<Inner>,
}

impl Registry {
    pub fn new(dict: Dictionary) -> Self {
        Self {
            dict,
            inner: RwLock::default(),
        }
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    /// Full report including dangling children against the current state.
    pub fn validate(&self, manifest: &Manifest) -> ManifestReport {
        let mut report = validate_manifest(&self.dict, manifest);
        let inner = self.inner.read().unwrap();
        for child in &manifest.body.children {
            if !inner.shells.contains_key(child) {
                report.push(ManifestFindingKind::DanglingChild, child.to_string());
            }
        }
        report
    }

    pub fn register(&self, manifest: Manifest) -> Result<ShellHandle, RegistryError> {
        let report = self.validate(&manifest);
        if report.errors().next().is_some() {
            return Err(RegistryError::InvalidManifest(report));
        }
        let id = manifest.instance_id().cloned().expect("validated header");

        let mut inner = self.inner.write().unwrap();
        if inner.shells.contains_key(&id) {
            return Err(RegistryError::DuplicateInstance(id));
        }
        // Children declared by this shell, or edges that already point at it
        // from earlier registrations, may close a cycle.
        if let Some(child) = manifest
            .body
            .children
            .iter()
            .find(|c| **c == id || inner.reaches([*c], &id))
        {
            return Err(RegistryError::CycleDetected {
                parent: Box::new(id),
                child: Box::new(child.clone()),
            });
        }
        inner.order.push(id.clone());
        inner.shells.insert(id.clone(), manifest);
        Ok(ShellHandle { id, warnings: report })
    }

    pub fn nest(&self, parent: &InstanceId, child: &InstanceId) -> Result<(), RegistryError> {
        let mut inner = self.inner.write().unwrap();
        for id in [parent, child] {
            if !inner.shells.contains_key(id) {
                return Err(RegistryError::UnknownShell(id.clone()));
            }
        }
        if parent == child || inner.reaches([child], parent) {
            return Err(RegistryError::CycleDetected {
                parent: Box::new(parent.clone()),
                child: Box::new(child.clone()),
            });
        }
        if inner.children(parent).any(|c| c == child) {
            return Ok(());
        }
        inner.added.entry(parent.clone()).or_default().push(child.clone());
        Ok(())
    }

    /// The manifest as registered, with later nesting edges appended to its
    /// children.
    pub fn resolve(&self, id: &InstanceId) -> Result<Manifest, RegistryError> {
        let inner = self.inner.read().unwrap();
        let mut manifest = inner
            .shells
            .get(id)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownShell(id.clone()))?;
        if let Some(extra) = inner.added.get(id) {
            manifest.body.children.extend(extra.iter().cloned());
        }
        Ok(manifest)
    }

    pub fn contains(&self, id: &InstanceId) -> bool {
        self.inner.read().unwrap().shells.contains_key(id)
    }

    /// Registered instance IDs in registration order.
    pub fn list(&self) -> Vec<InstanceId> {
        self.inner.read().unwrap().order.clone()
    }

    /// Full-graph DFS. Always true unless the registry has a bug.
    pub fn is_acyclic(&self) -> bool {
        let inner = self.inner.read().unwrap();
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        fn visit<'a>(inner: &'a Inner, node: &'a InstanceId, marks: &mut HashMap<&'a InstanceId, Mark>) -> bool {
            match marks.get(node) {
                Some(Mark::Active) => return false,
                Some(Mark::Done) => return true,
                None => {}
            }
            marks.insert(node, Mark::Active);
            for child in inner.children(node) {
                if !visit(inner, child, marks) {
                    return false;
                }
            }
            marks.insert(node, Mark::Done);
            true
        }
        let mut marks = HashMap::new();
        inner.order.iter().all(|id| visit(&inner, id, &mut marks))
    }
}
