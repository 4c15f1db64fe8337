//! Three-axis reference-architecture coordinates and interface coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const LOCI_V1: &str = include_str!("../data/rami-loci.tsv");

macro_rules! axis {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = RamiError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(RamiError::BadEnumerant {
                        axis: stringify!($name),
                        value: s.to_owned(),
                    }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

axis!(Layer {
    Asset => "ASSET",
    Integration => "INTEGRATION",
    Communication => "COMMUNICATION",
    Information => "INFORMATION",
    Functional => "FUNCTIONAL",
    Business => "BUSINESS",
});

axis!(Lifecycle {
    TypeDev => "TYPE_DEV",
    TypeUse => "TYPE_USE",
    InstProd => "INST_PROD",
    InstUse => "INST_USE",
});

axis!(Hierarchy {
    Process => "PROCESS",
    Field => "FIELD",
    Control => "CONTROL",
    ShopFloor => "SHOP_FLOOR",
    Plant => "PLANT",
    Enterprise => "ENTERPRISE",
    ConnectedWorld => "CONNECTED_WORLD",
});

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RamiError {
    #[error("{value:?} is not a {axis} value")]
    BadEnumerant { axis: &'static str, value: String },
    #[error("bad coordinate {0:?}: expected LAYER/LIFECYCLE/HIERARCHY")]
    BadCoordinate(String),
    #[error("loci table line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("unknown component {0}")]
    UnknownComponent(String),
    #[error("locus of {0} has no cells")]
    EmptyLocus(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RamiCoordinate {
    pub layer: Layer,
    pub lifecycle: Lifecycle,
    pub hierarchy: Hierarchy,
}

impl RamiCoordinate {
    pub fn new(layer: Layer, lifecycle: Lifecycle, hierarchy: Hierarchy) -> Self {
        Self {
            layer,
            lifecycle,
            hierarchy,
        }
    }
}

/// `LAYER/LIFECYCLE/HIERARCHY`
impl fmt::Display for RamiCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.layer, self.lifecycle, self.hierarchy)
    }
}

impl FromStr for RamiCoordinate {
    type Err = RamiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        let [l, c, h] = parts[..] else {
            return Err(RamiError::BadCoordinate(s.to_owned()));
        };
        Ok(Self::new(l.parse()?, c.parse()?, h.parse()?))
    }
}

impl Serialize for RamiCoordinate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RamiCoordinate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Cartesian product of axis values.
pub fn cells(layers: &[Layer], lifecycles: &[Lifecycle], hierarchy: &[Hierarchy]) -> BTreeSet<RamiCoordinate> {
    let mut out = BTreeSet::new();
    for &l in layers {
        for &c in lifecycles {
            for &h in hierarchy {
                out.insert(RamiCoordinate::new(l, c, h));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLocus {
    pub component: String,
    pub cells: BTreeSet<RamiCoordinate>,
}

/// Known component loci: the shipped table plus anything registered later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LociTable {
    loci: BTreeMap<String, BTreeSet<RamiCoordinate>>,
}

impl Default for LociTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl LociTable {
    pub fn standard() -> Self {
        Self::from_tsv(LOCI_V1).expect("compiled-in loci table is valid")
    }

    /// One `component <TAB> layer <TAB> lifecycle <TAB> hierarchy` cell per line.
    pub fn from_tsv(text: &str) -> Result<Self, RamiError> {
        let mut loci: BTreeMap<String, BTreeSet<RamiCoordinate>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let table = |reason: String| RamiError::Table { line: i + 1, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            let [comp, l, c, h] = cols[..] else {
                return Err(table(format!("expected 4 columns, got {}", cols.len())));
            };
            let coord = RamiCoordinate::new(
                l.parse().map_err(|e: RamiError| table(e.to_string()))?,
                c.parse().map_err(|e: RamiError| table(e.to_string()))?,
                h.parse().map_err(|e: RamiError| table(e.to_string()))?,
            );
            if !loci.entry(comp.to_owned()).or_default().insert(coord) {
                return Err(table(format!("duplicate cell {coord} for {comp}")));
            }
        }
        Ok(Self { loci })
    }

    pub fn register(&mut self, locus: ComponentLocus) -> Result<(), RamiError> {
        if locus.cells.is_empty() {
            return Err(RamiError::EmptyLocus(locus.component));
        }
        self.loci.insert(locus.component, locus.cells);
        Ok(())
    }

    pub fn locate(&self, component: &str) -> Result<ComponentLocus, RamiError> {
        self.loci
            .get(component)
            .map(|cells| ComponentLocus {
                component: component.to_owned(),
                cells: cells.clone(),
            })
            .ok_or_else(|| RamiError::UnknownComponent(component.to_owned()))
    }

    pub fn components(&self) -> impl Iterator<Item = &str> {
        self.loci.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub gaps: BTreeSet<RamiCoordinate>,
}

impl GapReport {
    pub fn is_covered(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn hierarchy_levels(&self) -> BTreeSet<Hierarchy> {
        self.gaps.iter().map(|c| c.hierarchy).collect()
    }
}

impl fmt::Display for GapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.gaps.is_empty() {
            return writeln!(f, "covered");
        }
        for g in &self.gaps {
            writeln!(f, "gap {g}")?;
        }
        Ok(())
    }
}

/// Required cells not covered by any locus.
pub fn coverage_check(required: &BTreeSet<RamiCoordinate>, loci: &[ComponentLocus]) -> GapReport {
    let covered: BTreeSet<RamiCoordinate> = loci.iter().flat_map(|l| l.cells.iter().copied()).collect();
    GapReport {
        gaps: required.difference(&covered).copied().collect(),
    }
}
