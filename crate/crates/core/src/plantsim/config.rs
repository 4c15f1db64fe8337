//! Scenario configuration (`.scen`, JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::acquire::{DefectSpot, NoiseModel};
use super::SimError;
use crate::procedure::{is_workflow_token, Procedure, ProcedureBook};
use crate::rami::{cells, Hierarchy, Layer, Lifecycle, RamiCoordinate};
use crate::semantics::Method;
use crate::sovereignty::{MaxReads, UsagePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    MaterialSupplier,
    ComponentSupplier,
    Oem,
    Operator,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::MaterialSupplier,
        Role::ComponentSupplier,
        Role::Oem,
        Role::Operator,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultKind {
    TamperArchiveByte,
    OversizeWorkflowMsg,
    PolicyOverread,
    DropGateway,
}

fn default_station_kind() -> String {
    "inspection-station".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub serial: String,
    #[serde(default = "default_station_kind")]
    pub kind: String,
    pub methods: Vec<Method>,
    /// A human inspector rather than a machine.
    #[serde(default)]
    pub person: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompanyConfig {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub stations: Vec<StationConfig>,
    #[serde(default)]
    pub procedures: Vec<Procedure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderPlan {
    pub order_id: String,
    pub company: String,
    pub component_serial: String,
    pub component_type: String,
    pub procedure_id: String,
    #[serde(default)]
    pub priority: u32,
    /// Tick at which the MES submits the order (once its evidence is in).
    #[serde(default)]
    pub release: u64,
    /// Due tick; defaults to one hour after release.
    #[serde(default)]
    pub due: Option<u64>,
    /// Pin the order to one station serial of the company.
    #[serde(default)]
    pub station: Option<String>,
    /// Fixed defect spots instead of random ones.
    #[serde(default)]
    pub defects: Option<Vec<DefectSpot>>,
    /// Size of a document attached to the order message.
    #[serde(default)]
    pub attachment_bytes: usize,
    /// Orders whose archived results must be in hand before this one starts.
    #[serde(default)]
    pub requires: Vec<String>,
    /// Policy under which this order's results are shared with other companies.
    #[serde(default)]
    pub evidence_policy: Option<UsagePolicy>,
}

impl OrderPlan {
    pub fn due_tick(&self) -> u64 {
        self.due.unwrap_or(self.release + 3600)
    }
}

/// One coordinate, or the product of axis value lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellSpec {
    One(RamiCoordinate),
    Product {
        layers: Vec<Layer>,
        lifecycle: Vec<Lifecycle>,
        hierarchy: Vec<Hierarchy>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SovereigntyConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Company names whose connectors are certified; all when absent.
    #[serde(default)]
    pub allowlist: Option<Vec<String>>,
}

impl Default for SovereigntyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            allowlist: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    /// Demand one company per supply-chain role.
    #[serde(default)]
    pub full_chain: bool,
    #[serde(default)]
    pub noise: NoiseModel,
    pub companies: Vec<CompanyConfig>,
    pub orders: Vec<OrderPlan>,
    #[serde(default)]
    pub faults: Vec<FaultKind>,
    #[serde(default)]
    pub required_cells: Vec<CellSpec>,
    #[serde(default)]
    pub sovereignty: SovereigntyConfig,
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::ConfigInvalid(msg.into())
}

fn is_lower_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

fn is_serial(s: &str) -> bool {
    !s.is_empty() && s.len() <= 64 && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn company(&self, name: &str) -> Option<&CompanyConfig> {
        self.companies.iter().find(|c| c.name == name)
    }

    pub fn order(&self, id: &str) -> Option<&OrderPlan> {
        self.orders.iter().find(|o| o.order_id == id)
    }

    pub fn procedure(&self, order: &OrderPlan) -> Option<&Procedure> {
        self.company(&order.company)?
            .procedures
            .iter()
            .find(|p| p.procedure_id == order.procedure_id)
    }

    pub fn required(&self) -> BTreeSet<RamiCoordinate> {
        let mut out = BTreeSet::new();
        for spec in &self.required_cells {
            match spec {
                CellSpec::One(c) => {
                    out.insert(*c);
                }
                CellSpec::Product {
                    layers,
                    lifecycle,
                    hierarchy,
                } => out.extend(cells(layers, lifecycle, hierarchy)),
            }
        }
        out
    }

    /// Provider order -> consumer companies, for requirements that cross a
    /// company boundary.
    pub fn shares(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for o in &self.orders {
            for r in &o.requires {
                if let Some(p) = self.order(r) {
                    if p.company != o.company {
                        out.entry(r.clone()).or_default().insert(o.company.clone());
                    }
                }
            }
        }
        out
    }

    pub fn evidence_policy(&self, order: &OrderPlan) -> UsagePolicy {
        order
            .evidence_policy
            .clone()
            .unwrap_or_else(|| UsagePolicy::read_once("evidence"))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut names = BTreeSet::new();
        for c in &self.companies {
            if !is_lower_token(&c.name) {
                return Err(invalid(format!("company name {:?} must be [a-z0-9-]{{1,64}}", c.name)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(invalid(format!("company {} defined twice", c.name)));
            }
            ProcedureBook::new(c.procedures.iter().cloned()).map_err(|e| invalid(e.to_string()))?;
            let mut serials = BTreeSet::new();
            for s in &c.stations {
                if !is_serial(&s.serial) || !is_lower_token(&s.kind) {
                    return Err(invalid(format!(
                        "bad station {:?}/{:?} in {}",
                        s.kind, s.serial, c.name
                    )));
                }
                if !serials.insert(s.serial.as_str()) {
                    return Err(invalid(format!("station {} defined twice in {}", s.serial, c.name)));
                }
                if s.methods.is_empty() {
                    return Err(invalid(format!("station {} advertises no method", s.serial)));
                }
            }
        }
        if self.full_chain {
            for role in Role::ALL {
                if !self.companies.iter().any(|c| c.role == role) {
                    return Err(invalid(format!("full chain needs a {role:?} company")));
                }
            }
        }
        let mut ids = BTreeSet::new();
        for o in &self.orders {
            if !is_workflow_token(&o.order_id) || !ids.insert(o.order_id.as_str()) {
                return Err(invalid(format!("bad or duplicate order_id {:?}", o.order_id)));
            }
            let company = self
                .company(&o.company)
                .ok_or_else(|| invalid(format!("order {} names unknown company {}", o.order_id, o.company)))?;
            let proc_ = self.procedure(o).ok_or_else(|| {
                invalid(format!(
                    "order {} names unknown procedure {}",
                    o.order_id, o.procedure_id
                ))
            })?;
            if !is_lower_token(&o.component_type) || !is_workflow_token(&o.component_serial) {
                return Err(invalid(format!(
                    "order {} has a bad component type or serial",
                    o.order_id
                )));
            }
            if let Some(s) = &o.station {
                if !company.stations.iter().any(|st| &st.serial == s) {
                    return Err(invalid(format!("order {} pins unknown station {s}", o.order_id)));
                }
            }
            for d in o.defects.iter().flatten() {
                if !d.fits(proc_.rows, proc_.cols) {
                    return Err(invalid(format!("order {} has a defect outside the grid", o.order_id)));
                }
            }
            if let Some(p) = &o.evidence_policy {
                p.validate(crate::time::Timestamp::epoch())
                    .map_err(|e| invalid(e.to_string()))?;
            }
        }
        for o in &self.orders {
            for r in &o.requires {
                if self.order(r).is_none() || r == &o.order_id {
                    return Err(invalid(format!("order {} requires unknown order {r}", o.order_id)));
                }
            }
        }
        self.check_acyclic()?;
        if let Some(list) = &self.sovereignty.allowlist {
            for n in list {
                if self.company(n).is_none() {
                    return Err(invalid(format!("allowlist names unknown company {n}")));
                }
            }
        }
        self.noise.validate().map_err(invalid)?;
        let mut seen = BTreeSet::new();
        for f in &self.faults {
            if !seen.insert(f) {
                return Err(invalid(format!("fault {f:?} listed twice")));
            }
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<(), SimError> {
        // Kahn's algorithm over the requires graph.
        let mut indeg: BTreeMap<&str, usize> = self
            .orders
            .iter()
            .map(|o| (o.order_id.as_str(), o.requires.len()))
            .collect();
        let mut ready: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| k).collect();
        let mut done = 0;
        while let Some(id) = ready.pop() {
            done += 1;
            for o in &self.orders {
                if o.requires.iter().any(|r| r == id) {
                    let d = indeg.get_mut(o.order_id.as_str()).expect("known order");
                    *d -= 1;
                    if *d == 0 {
                        ready.push(&o.order_id);
                    }
                }
            }
        }
        if done != self.orders.len() {
            return Err(invalid("order requirements form a cycle"));
        }
        Ok(())
    }

    /// Cells the scenario must cover: the configured ones, plus the
    /// connected world whenever evidence crosses a company boundary.
    pub fn coverage_required(&self) -> BTreeSet<RamiCoordinate> {
        let mut req = self.required();
        if !self.shares().is_empty() {
            req.extend(cells(
                &[Layer::Information, Layer::Communication],
                &[Lifecycle::InstUse],
                &[Hierarchy::ConnectedWorld],
            ));
        }
        req
    }

    /// Components the run deploys, after faults.
    pub fn deployed_loci(&self) -> Vec<&'static str> {
        self.loci_under(&self.faults.iter().copied().collect())
    }

    pub(crate) fn loci_under(&self, faults: &BTreeSet<FaultKind>) -> Vec<&'static str> {
        let mut names = vec!["orders-bus"];
        if !faults.contains(&FaultKind::DropGateway) {
            names.push("gateway");
        }
        if self.sovereignty.enabled {
            names.push("sovereignty");
        }
        names
    }

    /// Companies whose connectors are certified.
    pub fn certified(&self) -> BTreeSet<String> {
        match &self.sovereignty.allowlist {
            Some(list) => list.iter().cloned().collect(),
            None => self.companies.iter().map(|c| c.name.clone()).collect(),
        }
    }

    pub fn has_bounded_cross_share(&self) -> bool {
        self.shares().keys().any(|o| {
            self.order(o)
                .is_some_and(|p| matches!(self.evidence_policy(p).max_reads, MaxReads::Bounded(_)))
        })
    }
}
