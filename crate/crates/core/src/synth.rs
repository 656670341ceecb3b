//! Synthetic literature corpus with a known generative model.
//!
//! Each sample has a composition (base polymer, optional second component
//! at a blend ratio, product form) and a processing history (cure time,
//! anneal temperature, filler type and loading). For head `t` the latent
//! value is
//!
//! ```text
//! latent = f_t(composition) + γ_t · g_t(process) + η_t · ε,   ε ~ N(0, 1)
//! ```
//!
//! where `f_t` and `g_t` sum seeded per-token weights. The latent is skewed
//! by `(exp(τ z) − 1)/τ` and mapped to a realistic scale: affinely for
//! linear heads, as a power of ten for log-space heads. Mechanical heads use
//! `γ_t = γ`; all other groups use `γ/2`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{Error, Result};
use crate::registry::{Group, HeadId, PropertySpec, Registry, NUM_HEADS};
use crate::tsv::{self, Table};
use crate::units::{self, Unit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub documents: usize,
    /// Heads to emit by name; empty means all.
    pub heads: Vec<String>,
    /// Default noise scale η in latent units.
    pub noise: f64,
    /// Per-head overrides of `noise`.
    pub head_noise: BTreeMap<String, f64>,
    /// Process-effect strength γ.
    pub gamma: f64,
    /// Skew τ of the latent-to-label map; 0 disables skewing.
    pub tail_skew: f64,
    /// Probability that a sample reports a given head.
    pub report_rate: f64,
    pub range_fraction: f64,
    pub limit_fraction: f64,
    /// Probability of reporting in a non-canonical unit.
    pub alt_unit_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            documents: 2000,
            heads: Vec::new(),
            noise: 0.3,
            head_noise: BTreeMap::new(),
            gamma: 0.5,
            tail_skew: 0.5,
            report_rate: 0.3,
            range_fraction: 0.05,
            limit_fraction: 0.02,
            alt_unit_fraction: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<SynthConfig> {
        config::load(path)
    }

    pub fn digest(&self) -> Result<String> {
        config::config_digest(self)
    }

    pub fn validate(&self, registry: &Registry) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if !frac(self.report_rate) || !frac(self.range_fraction) || !frac(self.limit_fraction) || !frac(self.alt_unit_fraction) {
            return Err(Error::Config("rates and fractions must lie in [0, 1]".into()));
        }
        if !(self.noise >= 0.0) || self.head_noise.values().any(|&n| !(n >= 0.0)) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if !(self.tail_skew >= 0.0) {
            return Err(Error::Config("tail_skew must be non-negative".into()));
        }
        for name in self.heads.iter().chain(self.head_noise.keys()) {
            if registry.by_name(name).is_none() {
                return Err(Error::Config(format!("unknown head {name:?}")));
            }
        }
        Ok(())
    }

    pub fn head_list(&self, registry: &Registry) -> Vec<HeadId> {
        if self.heads.is_empty() {
            HeadId::all().collect()
        } else {
            self.heads
                .iter()
                .filter_map(|n| registry.by_name(n).map(|s| s.head_id))
                .collect()
        }
    }

    pub fn noise_for(&self, spec: &PropertySpec) -> f64 {
        self.head_noise.get(&spec.name).copied().unwrap_or(self.noise)
    }

    pub fn gamma_for(&self, spec: &PropertySpec) -> f64 {
        if spec.group == Group::Mechanical {
            self.gamma
        } else {
            0.5 * self.gamma
        }
    }
}

pub const POLYMERS: [&str; 12] = [
    "PLA", "PCL", "PS", "PMMA", "PC", "PET", "PP", "HDPE", "PA6", "PVDF", "PEEK", "PBS",
];
pub const MODIFIERS: [&str; 8] = ["PEG", "PBAT", "SEBS", "PVA", "PHB", "TPU", "ABS", "EVA"];
/// Blend ratios as (major, minor) parts; values are disjoint from every
/// process number.
pub const RATIOS: [(u32, u32); 4] = [(95, 5), (85, 15), (75, 25), (65, 35)];
pub const FORMS: [&str; 5] = ["film", "fiber", "sheet", "foam", "pellet"];
pub const CURE_HOURS: [f64; 5] = [1.0, 3.0, 6.0, 12.0, 24.0];
pub const ANNEAL_C: [f64; 5] = [70.0, 90.0, 110.0, 130.0, 150.0];
pub const FILLERS: [&str; 5] = ["silica", "clay", "graphene", "talc", "cellulose"];
pub const LOADINGS: [f64; 5] = [0.5, 2.5, 4.0, 7.5, 10.0];

/// Center and spread of each head's label map: linear heads use
/// `center + scale·s(z)`, log-space heads `10^(center + scale·s(z))`.
const LABEL_MAP: [(f64, f64); NUM_HEADS] = [
    (80.0, 35.0),   // tg, °C
    (180.0, 35.0),  // tm
    (130.0, 30.0),  // tc
    (360.0, 35.0),  // td5
    (340.0, 35.0),  // td_onset
    (1.6, 0.3),     // tensile strength, log10 MPa
    (3.3, 0.35),    // Young's modulus
    (100.0, 40.0),  // elongation at break, %
    (1.78, 0.3),    // flexural strength
    (1.9, 0.3),     // compressive strength
    (20.0, 8.0),    // impact strength, kJ/m²
    (1.54, 0.3),    // yield strength
    (3.4, 0.35),    // flexural modulus
    (-8.0, 2.0),    // electrical conductivity, log10 S/cm
    (0.48, 0.15),   // dielectric constant
    (-0.6, 0.2),    // thermal conductivity
    (1.2, 0.12),    // density, g/cm³
    (4.7, 0.4),     // Mn, log10 g/mol
    (5.0, 0.4),     // Mw
    (2.0, 0.4),     // dispersity
    (35.0, 10.0),   // crystallinity, %
    (2.0, 1.0),     // viscosity, log10 Pa·s
];

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub polymer: usize,
    /// Second component and ratio index.
    pub modifier: Option<(usize, usize)>,
    pub form: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub cure: usize,
    pub anneal: usize,
    pub filler: usize,
    pub loading: usize,
}

/// Seeded token weights defining `f_t` and `g_t`.
#[derive(Debug, Clone)]
pub struct Generator {
    polymer: Vec<[f64; NUM_HEADS]>,
    modifier: Vec<[f64; NUM_HEADS]>,
    form: Vec<[f64; NUM_HEADS]>,
    cure: Vec<[f64; NUM_HEADS]>,
    anneal: Vec<[f64; NUM_HEADS]>,
    filler: Vec<[f64; NUM_HEADS]>,
    loading: Vec<[f64; NUM_HEADS]>,
}

fn normal_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; NUM_HEADS]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut *rng)))
        .collect()
}

impl Generator {
    pub fn new(seed: u64) -> Generator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        Generator {
            polymer: normal_rows(&mut rng, POLYMERS.len()),
            modifier: normal_rows(&mut rng, MODIFIERS.len()),
            form: normal_rows(&mut rng, FORMS.len()),
            cure: normal_rows(&mut rng, CURE_HOURS.len()),
            anneal: normal_rows(&mut rng, ANNEAL_C.len()),
            filler: normal_rows(&mut rng, FILLERS.len()),
            loading: normal_rows(&mut rng, LOADINGS.len()),
        }
    }

    /// Composition effect, roughly unit variance.
    pub fn f(&self, c: &Composition, head: HeadId) -> f64 {
        let t = head.index();
        let mut v = 0.8 * self.polymer[c.polymer][t] + 0.4 * self.form[c.form][t];
        if let Some((m, r)) = c.modifier {
            let minor = RATIOS[r].1 as f64 / 20.0;
            v += 0.5 * self.modifier[m][t] * minor;
        }
        v
    }

    /// Process effect, roughly unit variance.
    pub fn g(&self, p: &Process, head: HeadId) -> f64 {
        let t = head.index();
        0.5 * (self.cure[p.cure][t] + self.anneal[p.anneal][t] + self.filler[p.filler][t] + self.loading[p.loading][t])
    }
}

pub fn skew(z: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        z
    } else {
        (tau * z).exp_m1() / tau
    }
}

/// Canonical-unit label for a latent value.
pub fn label_of(spec: &PropertySpec, latent: f64, tau: f64) -> f64 {
    let (center, scale) = LABEL_MAP[spec.head_id.index()];
    let v = center + scale * skew(latent, tau);
    if spec.log_space {
        10f64.powf(v)
    } else {
        v
    }
}

fn describe_composition(c: &Composition) -> String {
    let form = FORMS[c.form];
    match c.modifier {
        None => format!("{} {form}", POLYMERS[c.polymer]),
        Some((m, r)) => {
            let (a, b) = RATIOS[r];
            format!("{}/{} blend ({a}/{b} w/w) {form}", POLYMERS[c.polymer], MODIFIERS[m])
        }
    }
}

fn describe_process(p: &Process) -> String {
    format!(
        "cured for {} h, annealed at {} °C, filled with {} wt% {}",
        CURE_HOURS[p.cure], ANNEAL_C[p.anneal], LOADINGS[p.loading], FILLERS[p.filler]
    )
}

/// Five significant digits, switching to `× 10^n` outside `[1e-3, 1e6)`.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e6).contains(&a) {
        let exp = a.log10().floor() as i32;
        let mantissa = v / 10f64.powi(exp);
        let m = format!("{mantissa:.4}");
        let m = m.trim_end_matches('0').trim_end_matches('.');
        return format!("{m} × 10^{exp}");
    }
    let digits = (4 - if a == 0.0 { 0 } else { a.log10().floor() as i32 }).clamp(0, 8) as usize;
    let s = format!("{v:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn with_unit(number: String, unit: &Unit) -> String {
    if unit.symbol == units::DIMENSIONLESS_SYMBOL {
        number
    } else {
        format!("{number} {}", unit.symbol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reported {
    Point,
    Range,
    Limit,
}

impl Reported {
    pub fn as_str(self) -> &'static str {
        match self {
            Reported::Point => "point",
            Reported::Range => "range",
            Reported::Limit => "limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub sample_id: String,
    pub head: HeadId,
    /// Noise-free label `f + γ g` mapped to canonical units.
    pub clean_value: f64,
    /// The label actually reported, canonical units.
    pub value: f64,
    pub noise_scale: f64,
    pub reported: Reported,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub document: String,
    pub truth: Vec<TruthRecord>,
}

fn word_separated(alias: &str) -> bool {
    [" was ", " is ", " were ", " of ", " reached "]
        .iter()
        .any(|w| format!(" {alias} ").contains(w))
}

fn statement(spec: &PropertySpec, quantity: &str, rng: &mut ChaCha8Rng) -> String {
    let label = spec.aliases.choose(rng).expect("aliases").as_str();
    match rng.random_range(0..3) {
        0 => format!("{label} = {quantity}"),
        1 => format!("{label}: {quantity}"),
        _ if !word_separated(label) => format!("The {label} was {quantity}"),
        _ => format!("{label} = {quantity}"),
    }
}

pub fn gen_corpus(config: &SynthConfig, registry: &Registry) -> Result<Corpus> {
    config.validate(registry)?;
    let gen = Generator::new(config.seed);
    let heads = config.head_list(registry);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut document = String::new();
    let mut truth = Vec::new();
    for i in 0..config.documents {
        let id = format!("s{i:05}");
        let comp = Composition {
            polymer: rng.random_range(0..POLYMERS.len()),
            modifier: rng
                .random_bool(0.5)
                .then(|| (rng.random_range(0..MODIFIERS.len()), rng.random_range(0..RATIOS.len()))),
            form: rng.random_range(0..FORMS.len()),
        };
        let proc_ = Process {
            cure: rng.random_range(0..CURE_HOURS.len()),
            anneal: rng.random_range(0..ANNEAL_C.len()),
            filler: rng.random_range(0..FILLERS.len()),
            loading: rng.random_range(0..LOADINGS.len()),
        };
        let mut lines = Vec::new();
        for &h in &heads {
            // Draw every random number regardless of reporting so that a
            // head's labels do not depend on which other heads are emitted.
            let report = rng.random_bool(config.report_rate);
            let eps: f64 = StandardNormal.sample(&mut rng);
            let style = rng.random::<f64>();
            let alt = rng.random_bool(config.alt_unit_fraction);
            let half_width = rng.random_range(0.02..0.08);
            if !report {
                continue;
            }
            let spec = registry.get(h);
            let eta = config.noise_for(spec);
            let clean = gen.f(&comp, h) + config.gamma_for(spec) * gen.g(&proc_, h);
            let value = label_of(spec, clean + eta * eps, config.tail_skew);
            let unit = if alt {
                let options: Vec<&Unit> = units::units_of(spec.dimension()).collect();
                *options.choose(&mut rng).expect("canonical unit exists")
            } else {
                spec.canonical_unit
            };
            let shown = unit.from_canonical(value);
            let (quantity, reported) = if style < config.limit_fraction {
                (format!("> {}", with_unit(format_number(shown), unit)), Reported::Limit)
            } else if style < config.limit_fraction + config.range_fraction {
                let d = half_width * shown.abs().max(1e-12);
                let lo = format_number(shown - d);
                let hi = format_number(shown + d);
                (with_unit(format!("{lo}–{hi}"), unit), Reported::Range)
            } else {
                (with_unit(format_number(shown), unit), Reported::Point)
            };
            lines.push(statement(spec, &quantity, &mut rng));
            truth.push(TruthRecord {
                sample_id: id.clone(),
                head: h,
                clean_value: label_of(spec, clean, config.tail_skew),
                value,
                noise_scale: eta,
                reported,
            });
        }
        document.push_str(&format!("== SAMPLE {id} ==\n"));
        document.push_str(&format!("Sample: {}\n", describe_composition(&comp)));
        document.push_str(&format!("Synthesis: {}\n", describe_process(&proc_)));
        for l in lines {
            document.push_str(&l);
            document.push('\n');
        }
        document.push_str("== END SAMPLE ==\n");
    }
    Ok(Corpus { document, truth })
}

pub fn truth_table(corpus: &Corpus, registry: &Registry, config_digest: &str) -> Table {
    let mut t = Table::new(["sample_id", "head", "value", "clean_value", "noise_scale", "reported"]);
    for r in &corpus.truth {
        t.push(vec![
            r.sample_id.clone(),
            registry.get(r.head).name.clone(),
            tsv::fmt_f64(r.value),
            tsv::fmt_f64(r.clean_value),
            tsv::fmt_f64(r.noise_scale),
            r.reported.as_str().into(),
        ]);
    }
    t.footer("config_digest", config_digest);
    t
}

/// Path of the ground-truth table written next to a corpus.
pub fn truth_path(docs: &Path) -> std::path::PathBuf {
    let mut p = docs.as_os_str().to_owned();
    p.push(".truth.tsv");
    p.into()
}

/// Writes the corpus text and its ground-truth table.
pub fn write_corpus(corpus: &Corpus, config: &SynthConfig, registry: &Registry, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    tsv::write_file(path, &corpus.document)?;
    truth_table(corpus, registry, &config.digest()?).write(truth_path(path))
}

/// Sample skewness `m3 / m2^{3/2}`.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::extract_document;

    fn reg() -> &'static Registry {
        Registry::builtin()
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = SynthConfig {
            documents: 50,
            ..SynthConfig::default()
        };
        let a = gen_corpus(&cfg, reg()).unwrap();
        let b = gen_corpus(&cfg, reg()).unwrap();
        assert_eq!(a.document, b.document);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn extraction_recovers_reported_labels() {
        let cfg = SynthConfig {
            documents: 300,
            ..SynthConfig::default()
        };
        let corpus = gen_corpus(&cfg, reg()).unwrap();
        let ex = extract_document(&corpus.document, reg()).unwrap();
        assert_eq!(ex.unmapped + ex.parse_failures + ex.incompatible, 0);
        assert_eq!(ex.observations.len(), corpus.truth.len());
        for (obs, t) in ex.observations.iter().zip(&corpus.truth) {
            assert_eq!((obs.sample_id.as_str(), obs.head), (t.sample_id.as_str(), t.head));
            match (obs.canonical_value, t.reported) {
                (None, Reported::Limit) => {}
                (Some(v), Reported::Point | Reported::Range) => {
                    let tol = 1e-3 * t.value.abs() + 1e-9;
                    assert!((v - t.value).abs() <= tol, "{} {}: {v} vs {}", t.sample_id, reg().get(t.head).name, t.value);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn gamma_zero_and_noise_zero_is_composition_only() {
        let cfg = SynthConfig {
            documents: 400,
            gamma: 0.0,
            noise: 0.0,
            report_rate: 1.0,
            range_fraction: 0.0,
            limit_fraction: 0.0,
            ..SynthConfig::default()
        };
        let corpus = gen_corpus(&cfg, reg()).unwrap();
        let ex = extract_document(&corpus.document, reg()).unwrap();
        let mut by_comp: BTreeMap<(String, HeadId), f64> = BTreeMap::new();
        for t in &corpus.truth {
            let sample = ex.sample(&t.sample_id).unwrap();
            let key = (sample.description.clone(), t.head);
            if let Some(prev) = by_comp.insert(key, t.value) {
                assert_eq!(prev, t.value);
            }
            assert_eq!(t.value, t.clean_value);
        }
    }

    #[test]
    fn labels_are_skewed() {
        let cfg = SynthConfig {
            documents: 3000,
            report_rate: 1.0,
            ..SynthConfig::default()
        };
        let corpus = gen_corpus(&cfg, reg()).unwrap();
        for h in HeadId::all() {
            let v: Vec<f64> = corpus.truth.iter().filter(|t| t.head == h).map(|t| t.value).collect();
            let s = skewness(&v);
            assert!(s > 0.5, "{}: skewness {s}", reg().get(h).name);
        }
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(105.0), "105");
        assert_eq!(format_number(353.15), "353.15");
        assert_eq!(format_number(0.251234), "0.25123");
        assert_eq!(format_number(125000.0), "125000");
        assert_eq!(format_number(2.5e6), "2.5 × 10^6");
        assert_eq!(format_number(3.2e-9), "3.2 × 10^-9");
    }
}
