//! Record extraction from sample-delimited measurement documents.
//!
//! A document is plain text in which each sample is wrapped in
//!
//! ```text
//! == SAMPLE <id> ==
//! Sample: <material description>
//! Synthesis: <processing history>
//! <property> = <quantity>
//! == END SAMPLE ==
//! ```
//!
//! Measurement statements are `<label> <sep> <quantity>` where `<sep>` is
//! `=`, `:` or one of `was`/`is`/`were`/`of`. Several statements may share a
//! line when separated by `;`. Lines without a separator are prose and are
//! skipped.

use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::quantity::{scan_quantity, Direction, Magnitude, Quantity};
use crate::registry::{HeadId, PropertySpec, Registry};
use crate::tsv::{self, Table};
use crate::units;

/// Result of converting a quantity into a regression label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Canonical {
    Value(f64),
    /// Inequality limits carry no point label.
    Rejected,
}

/// Converts a quantity into the head's canonical unit. Ranges collapse to
/// the midpoint of the converted endpoints.
///
/// A quantity without a unit is read as already being in the canonical
/// unit, which is the usual convention for tables with a unit header.
pub fn to_canonical(q: &Quantity, head: &PropertySpec) -> Result<Canonical> {
    let unit = match q.unit {
        None => head.canonical_unit,
        Some(u) if u.dimension == head.dimension() => u,
        Some(u) => {
            return Err(Error::IncompatibleUnit {
                unit: u.symbol.to_string(),
                head: head.name.clone(),
                expected: head.canonical_unit.symbol.to_string(),
            })
        }
    };
    Ok(match q.magnitude {
        Magnitude::Point(v) => Canonical::Value(unit.to_canonical(v)),
        Magnitude::Range { lo, hi } => Canonical::Value(0.5 * (unit.to_canonical(lo) + unit.to_canonical(hi))),
        Magnitude::Limit { .. } => Canonical::Rejected,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyObservation {
    pub record_id: String,
    pub sample_id: String,
    pub head: HeadId,
    pub quantity: Quantity,
    /// Present for points and ranges, absent for limits.
    pub canonical_value: Option<f64>,
    /// Byte offsets of the quantity in the source document.
    pub source_span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleText {
    pub sample_id: String,
    pub description: String,
    pub synthesis: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub samples: Vec<SampleText>,
    pub observations: Vec<PropertyObservation>,
    pub unmapped: usize,
    pub parse_failures: usize,
    pub incompatible: usize,
}

impl Extraction {
    pub fn sample(&self, id: &str) -> Option<&SampleText> {
        self.samples.iter().find(|s| s.sample_id == id)
    }

    /// Appends another extraction, renumbering its record ids to continue
    /// this one's sequence.
    pub fn merge(&mut self, other: Extraction) -> Result<()> {
        let seen: HashSet<&str> = self.samples.iter().map(|s| s.sample_id.as_str()).collect();
        if let Some(dup) = other.samples.iter().find(|s| seen.contains(s.sample_id.as_str())) {
            return Err(Error::MalformedDocument {
                line: 0,
                reason: format!("sample {} appears in more than one document", dup.sample_id),
            });
        }
        let offset = self.observations.len();
        self.samples.extend(other.samples);
        for (i, mut obs) in other.observations.into_iter().enumerate() {
            obs.record_id = record_id(offset + i);
            self.observations.push(obs);
        }
        self.unmapped += other.unmapped;
        self.parse_failures += other.parse_failures;
        self.incompatible += other.incompatible;
        Ok(())
    }
}

fn record_id(index: usize) -> String {
    format!("r{:05}", index + 1)
}

fn open_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^==\s*SAMPLE\s+(\S+)\s*==$").unwrap())
}

fn close_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^==\s*END(?:\s+SAMPLE)?(?:\s+(\S+))?\s*==$").unwrap())
}

fn word_sep_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s(?:was|is|were|of|reached)\s").unwrap())
}

/// Splits a statement into (label, value offset within the statement).
fn split_statement(stmt: &str) -> Option<(&str, usize)> {
    for sep in ['=', ':'] {
        if let Some(i) = stmt.find(sep) {
            return Some((&stmt[..i], i + sep.len_utf8()));
        }
    }
    let m = word_sep_re().find(stmt)?;
    Some((&stmt[..m.start()], m.end()))
}

fn resolve_label<'r>(registry: &'r Registry, label: &str) -> Option<&'r PropertySpec> {
    let label = label.trim();
    if let Some(spec) = registry.lookup(label) {
        return Some(spec);
    }
    let stripped = label
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .trim_start_matches("The ")
        .trim_start_matches("the ");
    let without_paren = match stripped.find('(') {
        Some(i) => &stripped[..i],
        None => stripped,
    };
    registry.lookup(stripped).or_else(|| registry.lookup(without_paren))
}

struct OpenSample {
    id: String,
    line: usize,
    text: SampleText,
}

/// Extracts every property observation of a document.
pub fn extract_document(doc: &str, registry: &Registry) -> Result<Extraction> {
    let mut out = Extraction::default();
    let mut open: Option<OpenSample> = None;
    let mut seen = HashSet::new();
    let mut offset = 0usize;

    for (lineno, raw_line) in doc.split_inclusive('\n').enumerate() {
        let line_start = offset;
        offset += raw_line.len();
        let line = raw_line.trim_end_matches(['\n', '\r']);
        let trimmed = line.trim();
        let malformed = |reason: String| Error::MalformedDocument { line: lineno + 1, reason };

        if let Some(cap) = open_re().captures(trimmed) {
            if let Some(prev) = &open {
                return Err(malformed(format!("sample {} opened at line {} is not closed", prev.id, prev.line)));
            }
            let id = cap[1].to_string();
            if !seen.insert(id.clone()) {
                return Err(malformed(format!("duplicate sample id {id}")));
            }
            open = Some(OpenSample {
                id: id.clone(),
                line: lineno + 1,
                text: SampleText {
                    sample_id: id,
                    description: String::new(),
                    synthesis: String::new(),
                },
            });
            continue;
        }
        if let Some(cap) = close_re().captures(trimmed) {
            let Some(current) = open.take() else {
                return Err(malformed("END without an open sample".into()));
            };
            if let Some(id) = cap.get(1) {
                if id.as_str() != current.id {
                    return Err(malformed(format!("END {} closes sample {}", id.as_str(), current.id)));
                }
            }
            out.samples.push(current.text);
            continue;
        }
        let Some(current) = open.as_mut() else {
            continue;
        };
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = strip_header(trimmed, "sample:") {
            append(&mut current.text.description, rest);
            continue;
        }
        if let Some(rest) = strip_header(trimmed, "synthesis:") {
            append(&mut current.text.synthesis, rest);
            continue;
        }

        let mut stmt_start = 0usize;
        for stmt in line.split(';') {
            let base = line_start + stmt_start;
            stmt_start += stmt.len() + 1;
            let Some((label, value_at)) = split_statement(stmt) else {
                continue;
            };
            let Some(spec) = resolve_label(registry, label) else {
                out.unmapped += 1;
                continue;
            };
            let found = match scan_quantity(&stmt[value_at..]) {
                Ok(found) => found,
                Err(_) => {
                    out.parse_failures += 1;
                    continue;
                }
            };
            let canonical_value = match to_canonical(&found.quantity, spec) {
                Ok(Canonical::Value(v)) => Some(v),
                Ok(Canonical::Rejected) => None,
                Err(_) => {
                    out.incompatible += 1;
                    continue;
                }
            };
            let span = base + value_at + found.span.start..base + value_at + found.span.end;
            out.observations.push(PropertyObservation {
                record_id: record_id(out.observations.len()),
                sample_id: current.id.clone(),
                head: spec.head_id,
                quantity: found.quantity,
                canonical_value,
                source_span: span,
            });
        }
    }
    if let Some(current) = open {
        return Err(Error::MalformedDocument {
            line: current.line,
            reason: format!("sample {} is never closed", current.id),
        });
    }
    Ok(out)
}

fn strip_header<'a>(line: &'a str, header: &str) -> Option<&'a str> {
    let head = line.get(..header.len())?;
    head.eq_ignore_ascii_case(header).then(|| line[header.len()..].trim())
}

fn append(buf: &mut String, text: &str) {
    if !buf.is_empty() {
        buf.push(' ');
    }
    buf.push_str(text);
}

pub fn extract_files(paths: &[impl AsRef<Path>], registry: &Registry) -> Result<Extraction> {
    let mut all = Extraction::default();
    for path in paths {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        all.merge(extract_document(&text, registry)?)?;
    }
    Ok(all)
}

pub const OBSERVATION_COLUMNS: [&str; 14] = [
    "record_id",
    "sample_id",
    "head",
    "kind",
    "value",
    "lo",
    "hi",
    "direction",
    "unit",
    "canonical_value",
    "span_start",
    "span_end",
    "sample_text",
    "synthesis_text",
];

/// Observation table; each row repeats its sample's descriptions so the
/// file is self-contained.
pub fn observations_table(ex: &Extraction, registry: &Registry) -> Table {
    let mut t = Table::new(OBSERVATION_COLUMNS);
    for obs in &ex.observations {
        let sample = ex.sample(&obs.sample_id).expect("observation belongs to a sample");
        let (value, lo, hi, direction) = match obs.quantity.magnitude {
            Magnitude::Point(v) => (tsv::fmt_f64(v), String::new(), String::new(), String::new()),
            Magnitude::Range { lo, hi } => (
                tsv::fmt_f64(0.5 * (lo + hi)),
                tsv::fmt_f64(lo),
                tsv::fmt_f64(hi),
                String::new(),
            ),
            Magnitude::Limit { direction, bound } => (
                tsv::fmt_f64(bound),
                String::new(),
                String::new(),
                match direction {
                    Direction::Greater => "greater".into(),
                    Direction::Less => "less".into(),
                },
            ),
        };
        t.push(vec![
            obs.record_id.clone(),
            obs.sample_id.clone(),
            registry.get(obs.head).name.clone(),
            obs.quantity.kind().into(),
            value,
            lo,
            hi,
            direction,
            obs.quantity.unit_symbol().into(),
            tsv::fmt_opt(obs.canonical_value),
            obs.source_span.start.to_string(),
            obs.source_span.end.to_string(),
            sample.description.clone(),
            sample.synthesis.clone(),
        ]);
    }
    t.footer("observations", ex.observations.len().to_string());
    t.footer("samples", ex.samples.len().to_string());
    t.footer("unmapped", ex.unmapped.to_string());
    t.footer("parse_failures", ex.parse_failures.to_string());
    t.footer("incompatible_units", ex.incompatible.to_string());
    t
}

pub fn read_observations(path: impl AsRef<Path>, registry: &Registry) -> Result<Extraction> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let table = Table::read(path)?;
    observations_from_table(&table, registry, &origin)
}

pub fn observations_from_table(table: &Table, registry: &Registry, origin: &str) -> Result<Extraction> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::format(origin, 1, format!("missing column {name}")))
    };
    let idx: Vec<usize> = OBSERVATION_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut ex = Extraction::default();
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 2;
        let f = |k: usize| row[idx[k]].as_str();
        let num = |k: usize| tsv::parse_f64(f(k), origin, line);
        let head = registry
            .by_name(f(2))
            .ok_or_else(|| Error::format(origin, line, format!("unknown head {}", f(2))))?;
        let unit = match f(8) {
            "" => None,
            sym => Some(units::by_symbol(sym).ok_or_else(|| Error::format(origin, line, format!("unknown unit {sym}")))?),
        };
        let magnitude = match f(3) {
            "point" => Magnitude::Point(num(4)?),
            "range" => Magnitude::Range { lo: num(5)?, hi: num(6)? },
            "limit" => Magnitude::Limit {
                direction: match f(7) {
                    "greater" => Direction::Greater,
                    "less" => Direction::Less,
                    d => return Err(Error::format(origin, line, format!("bad direction {d:?}"))),
                },
                bound: num(4)?,
            },
            k => return Err(Error::format(origin, line, format!("bad kind {k:?}"))),
        };
        let canonical = num(9)?;
        let span_at = |k: usize| {
            f(k).parse::<usize>()
                .map_err(|_| Error::format(origin, line, "bad span offset"))
        };
        let sample_id = f(1).to_string();
        if ex.sample(&sample_id).is_none() {
            ex.samples.push(SampleText {
                sample_id: sample_id.clone(),
                description: f(12).to_string(),
                synthesis: f(13).to_string(),
            });
        }
        ex.observations.push(PropertyObservation {
            record_id: f(0).to_string(),
            sample_id,
            head: head.head_id,
            quantity: Quantity { magnitude, unit },
            canonical_value: (!canonical.is_nan()).then_some(canonical),
            source_span: span_at(10)?..span_at(11)?,
        });
    }
    let footer = |k: &str| table.footer_value(k).and_then(|v| v.parse().ok()).unwrap_or(0);
    ex.unmapped = footer("unmapped");
    ex.parse_failures = footer("parse_failures");
    ex.incompatible = footer("incompatible_units");
    Ok(ex)
}
