//! The 22 property heads: groups, canonical units, log-space flags and
//! name aliases. The table itself lives in `data/registry.tsv`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{self, Dimension, Unit};

pub const NUM_HEADS: usize = 22;

const BUILTIN: &str = include_str!("../data/registry.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId(pub usize);

impl HeadId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn all() -> impl Iterator<Item = HeadId> {
        (0..NUM_HEADS).map(HeadId)
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Thermal,
    Mechanical,
    ElectricalTransport,
    Physicochemical,
}

impl Group {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "thermal" => Group::Thermal,
            "mechanical" => Group::Mechanical,
            "electrical_transport" => Group::ElectricalTransport,
            "physicochemical" => Group::Physicochemical,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Thermal => "thermal",
            Group::Mechanical => "mechanical",
            Group::ElectricalTransport => "electrical_transport",
            Group::Physicochemical => "physicochemical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertySpec {
    pub head_id: HeadId,
    pub name: String,
    pub group: Group,
    pub canonical_unit: &'static Unit,
    pub log_space: bool,
    /// Folded aliases; the first entry is the human-readable display label.
    pub aliases: Vec<String>,
}

impl PropertySpec {
    pub fn dimension(&self) -> Dimension {
        self.canonical_unit.dimension
    }

    pub fn display_label(&self) -> &str {
        &self.aliases[0]
    }
}

/// Case and whitespace folding applied to every alias and lookup key.
pub fn fold(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace(['’', '‘'], "'")
        .to_lowercase()
}

#[derive(Debug, Clone)]
pub struct Registry {
    specs: Vec<PropertySpec>,
    by_alias: HashMap<String, HeadId>,
}

impl Registry {
    /// The registry shipped with the crate.
    pub fn builtin() -> &'static Registry {
        static REGISTRY: OnceLock<Registry> = OnceLock::new();
        REGISTRY.get_or_init(|| Registry::parse(BUILTIN).expect("bundled registry is valid"))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Registry> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Registry::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Registry> {
        let mut specs: Vec<PropertySpec> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Registry(format!("line {}: {msg}", lineno + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(bad("expected 6 tab-separated columns"));
            }
            let head_id: usize = cols[0].parse().map_err(|_| bad("bad head id"))?;
            let group = Group::parse(cols[2]).ok_or_else(|| bad("unknown group"))?;
            let canonical_unit = units::by_symbol(cols[3]).ok_or_else(|| bad("unknown unit"))?;
            if !canonical_unit.is_canonical() {
                return Err(bad("unit is not canonical for its dimension"));
            }
            let log_space = match cols[4] {
                "true" => true,
                "false" => false,
                _ => return Err(bad("log flag must be true or false")),
            };
            let mut aliases: Vec<String> = cols[5].split('|').map(fold).filter(|a| !a.is_empty()).collect();
            let name = cols[1].to_string();
            if !aliases.contains(&fold(&name)) {
                aliases.push(fold(&name));
            }
            specs.push(PropertySpec {
                head_id: HeadId(head_id),
                name,
                group,
                canonical_unit,
                log_space,
                aliases,
            });
        }
        if specs.len() != NUM_HEADS {
            return Err(Error::Registry(format!("expected {NUM_HEADS} heads, found {}", specs.len())));
        }
        specs.sort_by_key(|s| s.head_id);
        for (i, s) in specs.iter().enumerate() {
            if s.head_id.0 != i {
                return Err(Error::Registry("head ids must be a permutation of 0..21".into()));
            }
        }
        let mut by_alias = HashMap::new();
        for s in &specs {
            for a in &s.aliases {
                if let Some(prev) = by_alias.insert(a.clone(), s.head_id) {
                    if prev != s.head_id {
                        return Err(Error::Registry(format!("alias {a:?} shared by heads {prev} and {}", s.head_id)));
                    }
                }
            }
        }
        Ok(Registry { specs, by_alias })
    }

    pub fn specs(&self) -> &[PropertySpec] {
        &self.specs
    }

    pub fn get(&self, head: HeadId) -> &PropertySpec {
        &self.specs[head.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&PropertySpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Resolves a property mention to its head after case/whitespace folding.
    pub fn lookup(&self, alias: &str) -> Option<&PropertySpec> {
        self.by_alias.get(&fold(alias)).map(|&h| self.get(h))
    }

    pub fn is_log_space(&self, head: HeadId) -> bool {
        assert!(head.0 < NUM_HEADS, "unknown head id {head}");
        self.specs[head.0].log_space
    }

    pub fn heads_in(&self, group: Group) -> impl Iterator<Item = &PropertySpec> {
        self.specs.iter().filter(move |s| s.group == group)
    }

    /// Serializes back to the tab-separated file format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# head_id\tname\tgroup\tcanonical_unit\tlog_space\taliases\n");
        for s in &self.specs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                s.head_id,
                s.name,
                s.group.as_str(),
                s.canonical_unit.symbol,
                s.log_space,
                s.aliases.join("|")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> &'static Registry {
        Registry::builtin()
    }

    #[test]
    fn lookup_examples() {
        assert_eq!(reg().lookup("glass transition temperature").unwrap().name, "tg");
        assert_eq!(reg().lookup("tensile strength").unwrap().name, "tensile_strength");
        assert!(reg().lookup("shoe size").is_none());
        assert_eq!(reg().lookup("  Glass   Transition\tTemperature ").unwrap().name, "tg");
        assert_eq!(reg().lookup("Young’s modulus").unwrap().name, "youngs_modulus");
    }

    #[test]
    fn canonical_names_round_trip() {
        for s in reg().specs() {
            assert_eq!(reg().lookup(&s.name), Some(s));
        }
    }

    #[test]
    fn group_counts() {
        assert_eq!(reg().heads_in(Group::Thermal).count(), 5);
        assert_eq!(reg().heads_in(Group::Mechanical).count(), 8);
        assert_eq!(reg().heads_in(Group::ElectricalTransport).count(), 3);
        assert_eq!(reg().heads_in(Group::Physicochemical).count(), 6);
    }

    #[test]
    fn log_space_set() {
        let log: Vec<&str> = reg().specs().iter().filter(|s| s.log_space).map(|s| s.name.as_str()).collect();
        assert_eq!(
            log,
            [
                "tensile_strength",
                "youngs_modulus",
                "flexural_strength",
                "compressive_strength",
                "yield_strength",
                "flexural_modulus",
                "electrical_conductivity",
                "dielectric_constant",
                "thermal_conductivity",
                "mn",
                "mw",
                "viscosity"
            ]
        );
        let h = |n: &str| reg().by_name(n).unwrap().head_id;
        assert!(reg().is_log_space(h("youngs_modulus")));
        assert!(!reg().is_log_space(h("tg")));
        assert!(!reg().is_log_space(h("density")));
    }

    #[test]
    #[should_panic]
    fn unknown_head_is_a_contract_violation() {
        reg().is_log_space(HeadId(22));
    }

    #[test]
    fn tsv_round_trip() {
        let again = Registry::parse(&reg().to_tsv()).unwrap();
        assert_eq!(again.specs(), reg().specs());
    }

    #[test]
    fn rejects_shared_alias() {
        let text = BUILTIN.replace("bending strength", "bending modulus");
        assert!(matches!(Registry::parse(&text), Err(Error::Registry(_))));
    }
}
