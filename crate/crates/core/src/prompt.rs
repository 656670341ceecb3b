//! Prompt assembly, target-value scrubbing and the prompt dataset file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{token_hash, MASK_TOKEN, SAMPLE_HEADER, SYNTHESIS_HEADER};
use crate::error::{Error, Result};
use crate::extract::Extraction;
use crate::quantity::{find_numbers, Magnitude};
use crate::registry::{HeadId, Registry, NUM_HEADS};
use crate::tsv::{self, Table};
use crate::units::{self, Dimension};

/// Relative tolerance for treating a number in the text as a target value.
pub const MASK_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SampleSynthesis,
    SampleOnly,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SampleSynthesis => "sample_synthesis",
            Variant::SampleOnly => "sample_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "sample_synthesis" => Ok(Variant::SampleSynthesis),
            "sample_only" => Ok(Variant::SampleOnly),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Deterministic train/test assignment from the sample id alone, so both
/// ablation variants see the same held-out samples.
pub fn assign_split(sample_id: &str, seed: u64, test_fraction: f64) -> Split {
    let h = token_hash(&format!("{seed}:{sample_id}"));
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < test_fraction {
        Split::Test
    } else {
        Split::Train
    }
}

pub fn build_prompt(sample_desc: &str, synthesis_desc: &str, variant: Variant) -> Result<String> {
    if sample_desc.trim().is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(match variant {
        Variant::SampleSynthesis => format!("{SAMPLE_HEADER}\n{sample_desc}\n{SYNTHESIS_HEADER}\n{synthesis_desc}"),
        Variant::SampleOnly => format!("{SAMPLE_HEADER}\n{sample_desc}"),
    })
}

/// A value reported for one head of a sample, in canonical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub head: HeadId,
    pub value: f64,
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= MASK_TOLERANCE * b.abs()
}

/// Whether `number`, read in any unit of `dimension`, lands within tolerance
/// of the canonical `target`.
fn matches_target(number: f64, dimension: Dimension, target: f64) -> bool {
    units::units_of(dimension).any(|u| near(number, u.from_canonical(target)))
}

fn hits<'a>(text: &'a str, targets: &'a [Target], registry: &'a Registry) -> impl Iterator<Item = (std::ops::Range<usize>, f64)> + 'a {
    find_numbers(text).into_iter().filter(move |(_, v)| {
        targets
            .iter()
            .any(|t| matches_target(*v, registry.get(t.head).dimension(), t.value))
    })
}

/// Replaces every number that matches a target value with the mask token.
pub fn mask_labels(text: &str, targets: &[Target], registry: &Registry) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (span, _) in hits(text, targets, registry) {
        out.push_str(&text[last..span.start]);
        out.push_str(MASK_TOKEN);
        last = span.end;
    }
    out.push_str(&text[last..]);
    out
}

/// Numbers in `text` that would have been masked for these targets.
pub fn scan_leakage(text: &str, targets: &[Target], registry: &Registry) -> Vec<f64> {
    hits(text, targets, registry).map(|(_, v)| v).collect()
}

/// Every number an extraction reported for each sample: point values, range
/// endpoints and limit bounds, converted to canonical units.
pub fn sample_targets(ex: &Extraction, registry: &Registry) -> BTreeMap<String, Vec<Target>> {
    let mut out: BTreeMap<String, Vec<Target>> = BTreeMap::new();
    for obs in &ex.observations {
        let spec = registry.get(obs.head);
        let unit = match obs.quantity.unit {
            Some(u) if u.dimension == spec.dimension() => u,
            Some(_) => continue,
            None => spec.canonical_unit,
        };
        let raw = match obs.quantity.magnitude {
            Magnitude::Point(v) => vec![v],
            Magnitude::Range { lo, hi } => vec![lo, hi],
            Magnitude::Limit { bound, .. } => vec![bound],
        };
        let list = out.entry(obs.sample_id.clone()).or_default();
        for v in raw {
            list.push(Target {
                head: obs.head,
                value: unit.to_canonical(v),
            });
        }
        if let Some(v) = obs.canonical_value {
            list.push(Target { head: obs.head, value: v });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub sample_id: String,
    pub variant: Variant,
    pub split: Split,
    pub text: String,
    /// Canonical-unit labels; NaN where unobserved.
    pub labels: [f64; NUM_HEADS],
    pub label_mask: [bool; NUM_HEADS],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub variant: Variant,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            variant: Variant::SampleSynthesis,
            seed: 0,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub options: DatasetOptions,
    pub instances: Vec<PromptInstance>,
    /// Samples dropped for a blank description.
    pub skipped_empty: usize,
    /// Samples dropped because no label survived conversion.
    pub skipped_unlabeled: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &PromptInstance> {
        self.instances.iter().filter(move |i| i.split == split)
    }

    /// Label counts per head over one split.
    pub fn label_counts(&self, split: Split) -> [usize; NUM_HEADS] {
        let mut counts = [0; NUM_HEADS];
        for inst in self.split(split) {
            for (c, &m) in counts.iter_mut().zip(&inst.label_mask) {
                *c += m as usize;
            }
        }
        counts
    }

    /// Order-independent digest of the held-out sample ids.
    pub fn test_id_digest(&self) -> String {
        let mut ids: Vec<&str> = self.split(Split::Test).map(|i| i.sample_id.as_str()).collect();
        ids.sort_unstable();
        crate::config::digest(ids.join("\n").as_bytes())
    }
}

/// Builds one prompt per labeled sample, masking every reported target
/// value, then runs the leakage guard over the result.
///
/// Multiple observations of the same head for one sample are averaged.
pub fn build_dataset(ex: &Extraction, registry: &Registry, options: DatasetOptions) -> Result<Dataset> {
    let targets = sample_targets(ex, registry);
    let mut sums: BTreeMap<&str, ([f64; NUM_HEADS], [usize; NUM_HEADS])> = BTreeMap::new();
    for obs in &ex.observations {
        if let Some(v) = obs.canonical_value {
            if !v.is_finite() {
                continue;
            }
            let e = sums.entry(obs.sample_id.as_str()).or_insert(([0.0; NUM_HEADS], [0; NUM_HEADS]));
            e.0[obs.head.index()] += v;
            e.1[obs.head.index()] += 1;
        }
    }
    let mut ds = Dataset {
        options,
        instances: Vec::new(),
        skipped_empty: 0,
        skipped_unlabeled: 0,
    };
    let none = Vec::new();
    for sample in &ex.samples {
        if sample.description.trim().is_empty() {
            ds.skipped_empty += 1;
            continue;
        }
        let Some((sum, count)) = sums.get(sample.sample_id.as_str()) else {
            ds.skipped_unlabeled += 1;
            continue;
        };
        let mut labels = [f64::NAN; NUM_HEADS];
        let mut label_mask = [false; NUM_HEADS];
        for t in 0..NUM_HEADS {
            if count[t] > 0 {
                labels[t] = sum[t] / count[t] as f64;
                label_mask[t] = true;
            }
        }
        let tg = targets.get(&sample.sample_id).unwrap_or(&none);
        let text = build_prompt(
            &mask_labels(&sample.description, tg, registry),
            &mask_labels(&sample.synthesis, tg, registry),
            options.variant,
        )?;
        ds.instances.push(PromptInstance {
            sample_id: sample.sample_id.clone(),
            variant: options.variant,
            split: assign_split(&sample.sample_id, options.seed, options.test_fraction),
            text,
            labels,
            label_mask,
        });
    }
    let leaks = leakage_hits(&ds, &targets, registry);
    if leaks > 0 {
        return Err(Error::Leakage(leaks));
    }
    Ok(ds)
}

/// Exhaustive scan of every prompt for surviving target values.
pub fn leakage_hits(ds: &Dataset, targets: &BTreeMap<String, Vec<Target>>, registry: &Registry) -> usize {
    ds.instances
        .iter()
        .map(|inst| {
            let tg = targets.get(&inst.sample_id).map_or(&[][..], Vec::as_slice);
            scan_leakage(&inst.text, tg, registry).len()
        })
        .sum()
}

const FIXED_COLUMNS: [&str; 4] = ["sample_id", "variant", "split", "prompt"];

pub fn dataset_table(ds: &Dataset, registry: &Registry) -> Table {
    let columns = FIXED_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain(registry.specs().iter().map(|s| s.name.clone()));
    let mut t = Table::new(columns);
    for inst in &ds.instances {
        let mut row = vec![
            inst.sample_id.clone(),
            inst.variant.as_str().into(),
            inst.split.as_str().into(),
            inst.text.clone(),
        ];
        row.extend(
            (0..NUM_HEADS).map(|i| if inst.label_mask[i] { tsv::fmt_f64(inst.labels[i]) } else { tsv::MISSING.into() }),
        );
        t.push(row);
    }
    t.footer("variant", ds.options.variant.as_str());
    t.footer("seed", ds.options.seed.to_string());
    t.footer("test_fraction", tsv::fmt_f64(ds.options.test_fraction));
    t.footer("skipped_empty", ds.skipped_empty.to_string());
    t.footer("skipped_unlabeled", ds.skipped_unlabeled.to_string());
    t.footer("leakage_hits", "0");
    t.footer("test_ids", ds.test_id_digest());
    t
}

pub fn dataset_from_table(table: &Table, registry: &Registry, origin: &str) -> Result<Dataset> {
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::format(origin, 1, format!("missing column {name}")))
    };
    let fixed: Vec<usize> = FIXED_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let heads: Vec<usize> = registry.specs().iter().map(|s| col(&s.name)).collect::<Result<_>>()?;
    let footer = |key: &str| {
        table
            .footer_value(key)
            .ok_or_else(|| Error::format(origin, 1, format!("missing footer {key}")))
    };
    let parse_footer = |key: &str| -> Result<f64> {
        footer(key)?
            .parse()
            .map_err(|_| Error::format(origin, 1, format!("bad footer {key}")))
    };
    let options = DatasetOptions {
        variant: footer("variant")?.parse()?,
        seed: parse_footer("seed")? as u64,
        test_fraction: parse_footer("test_fraction")?,
    };
    let mut instances = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let line = i + 2;
        let mut labels = [f64::NAN; NUM_HEADS];
        let mut label_mask = [false; NUM_HEADS];
        for (t, &c) in heads.iter().enumerate() {
            let v = tsv::parse_f64(&row[c], origin, line)?;
            labels[t] = v;
            label_mask[t] = v.is_finite();
        }
        instances.push(PromptInstance {
            sample_id: row[fixed[0]].clone(),
            variant: row[fixed[1]].parse()?,
            split: row[fixed[2]].parse()?,
            text: row[fixed[3]].clone(),
            labels,
            label_mask,
        });
    }
    Ok(Dataset {
        options,
        instances,
        skipped_empty: parse_footer("skipped_empty")? as usize,
        skipped_unlabeled: parse_footer("skipped_unlabeled")? as usize,
    })
}

pub fn write_dataset(ds: &Dataset, registry: &Registry, path: impl AsRef<Path>) -> Result<()> {
    dataset_table(ds, registry).write(path)
}

pub fn read_dataset(path: impl AsRef<Path>, registry: &Registry) -> Result<Dataset> {
    let path = path.as_ref();
    dataset_from_table(&Table::read(path)?, registry, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::extract_document;
    use proptest::prelude::*;

    fn reg() -> &'static Registry {
        Registry::builtin()
    }

    fn tg(v: f64) -> Vec<Target> {
        vec![Target {
            head: reg().by_name("tg").unwrap().head_id,
            value: v,
        }]
    }

    #[test]
    fn prompt_templates() {
        let both = build_prompt("PLA film", "annealed 2 h at 80 °C", Variant::SampleSynthesis).unwrap();
        assert_eq!(both, "[Sample]\nPLA film\n[Synthesis]\nannealed 2 h at 80 °C");
        let only = build_prompt("PLA film", "annealed 2 h at 80 °C", Variant::SampleOnly).unwrap();
        assert!(!only.contains("[Synthesis]") && !only.contains("annealed"));
        assert!(both.starts_with(&only));
        let empty = build_prompt("PLA film", "", Variant::SampleSynthesis).unwrap();
        assert!(empty.ends_with("[Synthesis]\n"));
        assert!(matches!(build_prompt("  ", "x", Variant::SampleOnly), Err(Error::EmptySample)));
    }

    #[test]
    fn masking_examples() {
        assert_eq!(
            mask_labels("Tg of 105 °C, cured at 120 °C", &tg(105.0), reg()),
            "Tg of [MASKED] °C, cured at 120 °C"
        );
        assert_eq!(mask_labels("Tg was 378 K", &tg(105.0), reg()), "Tg was [MASKED] K");
        let plain = "cast from chloroform, dried 12 h";
        assert_eq!(mask_labels(plain, &tg(105.0), reg()), plain);
    }

    #[test]
    fn masking_spans_scientific_notation() {
        let mw = vec![Target {
            head: reg().by_name("mw").unwrap().head_id,
            value: 1.2e5,
        }];
        assert_eq!(mask_labels("Mw near 1.2 × 10^5 g/mol", &mw, reg()), "Mw near [MASKED] g/mol");
        assert_eq!(mask_labels("Mw near 120 kg/mol", &mw, reg()), "Mw near [MASKED] kg/mol");
    }

    proptest! {
        #[test]
        fn masked_text_scans_clean(target in -50.0f64..400.0, noise in prop::collection::vec(0.0f64..500.0, 0..6)) {
            let mut text = format!("Tg {target:.3} and {:.2} K", target + 273.15);
            for n in &noise {
                text.push_str(&format!(", step {n:.1}"));
            }
            let targets = tg(target);
            let masked = mask_labels(&text, &targets, reg());
            prop_assert!(scan_leakage(&masked, &targets, reg()).is_empty());
            prop_assert!(!scan_leakage(&text, &targets, reg()).is_empty());
        }

        #[test]
        fn sample_only_is_prefix(a in "[a-z ]{1,20}", b in "[a-z ]{0,20}") {
            prop_assume!(!a.trim().is_empty());
            let full = build_prompt(&a, &b, Variant::SampleSynthesis).unwrap();
            let only = build_prompt(&a, &b, Variant::SampleOnly).unwrap();
            prop_assert!(full.starts_with(&only) && full.len() > only.len());
        }
    }

    const DOC: &str = "== SAMPLE s1 ==
Sample: PS film, Mw 250 kg/mol, Tg 100 °C
Synthesis: annealed at 120 °C for 2 h
Tg = 100 °C
Mw = 250000 g/mol
Td5 = 380 °C
== END SAMPLE ==
== SAMPLE s2 ==
Sample: PMMA sheet
Synthesis: cast
Tg = 105-109 °C
Tg = 107 °C
== END SAMPLE ==
== SAMPLE s3 ==
Sample: PC pellet
Synthesis: molded
== END SAMPLE ==
";

    #[test]
    fn dataset_round_trip() {
        let ex = extract_document(DOC, reg()).unwrap();
        let ds = build_dataset(&ex, reg(), DatasetOptions::default()).unwrap();
        assert_eq!(ds.instances.len(), 2);
        assert_eq!(ds.skipped_unlabeled, 1);
        let s1 = &ds.instances[0];
        assert_eq!(s1.text, "[Sample]\nPS film, Mw [MASKED] kg/mol, Tg [MASKED] °C\n[Synthesis]\nannealed at 120 °C for 2 h");
        let tg_i = reg().by_name("tg").unwrap().head_id.index();
        assert_eq!(ds.instances[1].labels[tg_i], 107.0);
        for inst in &ds.instances {
            for t in 0..NUM_HEADS {
                assert_eq!(inst.labels[t].is_finite(), inst.label_mask[t]);
            }
        }
        let text = dataset_table(&ds, reg()).render();
        let back = dataset_from_table(&Table::parse(&text, "mem").unwrap(), reg(), "mem").unwrap();
        assert_eq!(dataset_table(&back, reg()).render(), text);
        assert_eq!(back.instances[1].label_mask, ds.instances[1].label_mask);
    }

    #[test]
    fn splits_are_stable_and_balanced() {
        let test = (0..10_000)
            .filter(|i| assign_split(&format!("s{i}"), 3, 0.2) == Split::Test)
            .count();
        assert!((1800..2200).contains(&test), "{test}");
        assert_eq!(assign_split("abc", 1, 0.5), assign_split("abc", 1, 0.5));
    }
}
