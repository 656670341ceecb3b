//! Field-level precision audit of extracted records against hand-annotated
//! gold records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extract::PropertyObservation;
use crate::registry::Registry;
use crate::tsv::{self, Table};
use crate::units;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldRecord {
    pub record_id: String,
    pub sample_id: String,
    pub head: String,
    pub value: f64,
    /// Unit symbol as annotated; empty when the true value is unitless.
    pub unit: String,
    /// Annotator verdicts on the extracted record (sample, property, value,
    /// unit), when the gold file carries them.
    pub flags: Option<[bool; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn precision(self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub n: usize,
    pub sample_association: Tally,
    pub property_mapping: Tally,
    pub value: Tally,
    pub unit: Tally,
    /// All four components correct on the same record.
    pub strict: Tally,
    /// Records whose computed verdicts differ from the annotated flags.
    pub flag_disagreements: usize,
    pub erroneous_records: Vec<String>,
}

impl AuditReport {
    pub fn sample_assoc_precision(&self) -> f64 {
        self.sample_association.precision()
    }
    pub fn property_precision(&self) -> f64 {
        self.property_mapping.precision()
    }
    pub fn value_precision(&self) -> f64 {
        self.value.precision()
    }
    pub fn unit_precision(&self) -> f64 {
        self.unit.precision()
    }
    pub fn strict_precision(&self) -> f64 {
        self.strict.precision()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["component", "correct", "total", "precision"]);
        for (name, tally) in [
            ("sample_association", self.sample_association),
            ("property_mapping", self.property_mapping),
            ("value", self.value),
            ("unit", self.unit),
            ("strict", self.strict),
        ] {
            t.push(vec![
                name.into(),
                tally.correct.to_string(),
                tally.total.to_string(),
                format!("{:.3}", tally.precision()),
            ]);
        }
        t.footer("flag_disagreements", self.flag_disagreements.to_string());
        t
    }
}

fn normalize_unit(unit: &str) -> String {
    let unit = unit.trim();
    if unit.is_empty() || unit == units::DIMENSIONLESS_SYMBOL {
        return String::new();
    }
    match units::match_prefix(unit) {
        Some((u, len)) if len == unit.len() => u.symbol.to_string(),
        _ => unit.to_string(),
    }
}

fn same_value(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// Compares every extracted record with its gold counterpart.
///
/// Values are compared as stated (before unit conversion) so that value
/// and unit errors are scored independently.
pub fn audit(extracted: &[PropertyObservation], gold: &[GoldRecord], registry: &Registry) -> Result<AuditReport> {
    let by_id: BTreeMap<&str, &GoldRecord> = gold.iter().map(|g| (g.record_id.as_str(), g)).collect();
    let extracted_ids: BTreeMap<&str, &PropertyObservation> =
        extracted.iter().map(|o| (o.record_id.as_str(), o)).collect();
    if by_id.len() != gold.len() || extracted_ids.len() != extracted.len() {
        return Err(Error::MismatchedIds("duplicate record ids".into()));
    }
    if let Some(missing) = extracted_ids.keys().find(|id| !by_id.contains_key(*id)) {
        return Err(Error::MismatchedIds(format!("{missing} has no gold annotation")));
    }
    if let Some(extra) = by_id.keys().find(|id| !extracted_ids.contains_key(*id)) {
        return Err(Error::MismatchedIds(format!("gold record {extra} was not extracted")));
    }

    let n = extracted.len();
    let mut counts = [0usize; 5];
    let mut flag_disagreements = 0;
    let mut erroneous_records = Vec::new();
    for (id, obs) in &extracted_ids {
        let g = by_id[id];
        let verdict = [
            obs.sample_id == g.sample_id,
            registry.get(obs.head).name == g.head,
            same_value(obs.quantity.headline(), g.value),
            obs.quantity.unit_symbol() == normalize_unit(&g.unit),
        ];
        for (c, ok) in counts.iter_mut().zip(verdict) {
            *c += usize::from(ok);
        }
        if verdict.iter().all(|&ok| ok) {
            counts[4] += 1;
        } else {
            erroneous_records.push(id.to_string());
        }
        if g.flags.is_some_and(|f| f != verdict) {
            flag_disagreements += 1;
        }
    }
    let tally = |correct| Tally { correct, total: n };
    Ok(AuditReport {
        n,
        sample_association: tally(counts[0]),
        property_mapping: tally(counts[1]),
        value: tally(counts[2]),
        unit: tally(counts[3]),
        strict: tally(counts[4]),
        flag_disagreements,
        erroneous_records,
    })
}

pub fn read_gold(path: impl AsRef<Path>) -> Result<Vec<GoldRecord>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let table = Table::read(path)?;
    gold_from_table(&table, &origin)
}

pub fn gold_from_table(table: &Table, origin: &str) -> Result<Vec<GoldRecord>> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::format(origin, 1, format!("missing column {name}")))
    };
    let [rid, sid, head, value, unit] = ["record_id", "sample_id", "head", "value", "unit"].map(col);
    let (rid, sid, head, value, unit) = (rid?, sid?, head?, value?, unit?);
    let flag_cols: Option<Vec<usize>> = ["sample_ok", "property_ok", "value_ok", "unit_ok"]
        .iter()
        .map(|c| table.column(c))
        .collect();
    let mut out = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 2;
        let flags = match &flag_cols {
            Some(cols) => {
                let mut f = [false; 4];
                for (slot, &c) in f.iter_mut().zip(cols) {
                    *slot = match row[c].as_str() {
                        "1" | "true" | "yes" => true,
                        "0" | "false" | "no" => false,
                        other => return Err(Error::format(origin, line, format!("bad flag {other:?}"))),
                    };
                }
                Some(f)
            }
            None => None,
        };
        out.push(GoldRecord {
            record_id: row[rid].clone(),
            sample_id: row[sid].clone(),
            head: row[head].clone(),
            value: tsv::parse_f64(&row[value], origin, line)?,
            unit: row[unit].clone(),
            flags,
        });
    }
    Ok(out)
}
