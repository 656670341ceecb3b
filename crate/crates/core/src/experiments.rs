//! The sample/synthesis ablation and the task-uncertainty study.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{Error, Result};
use crate::extract::extract_document;
use crate::metrics::{calibration_ratio, evaluate, low_signal, rank_correlations, spearman, EvalReport};
use crate::prompt::{build_dataset, Dataset, DatasetOptions, Split, Variant};
use crate::registry::{Group, Registry};
use crate::synth::{gen_corpus, SynthConfig};
use crate::trainer::{Checkpoint, TrainConfig, Trainer};
use crate::tsv::{self, Table};

/// Extracts a synthetic corpus and builds one prompt variant from it.
pub fn corpus_dataset(synth: &SynthConfig, variant: Variant, split_seed: u64, registry: &Registry) -> Result<Dataset> {
    let corpus = gen_corpus(synth, registry)?;
    let ex = extract_document(&corpus.document, registry)?;
    build_dataset(
        &ex,
        registry,
        DatasetOptions {
            variant,
            seed: split_seed,
            ..DatasetOptions::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Train both arms on identical `sample_synthesis` prompts.
    pub control: bool,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let mechanical = Registry::builtin()
            .heads_in(Group::Mechanical)
            .map(|s| s.name.clone())
            .collect();
        AblationConfig {
            seeds: vec![0, 1, 2],
            control: false,
            synth: SynthConfig {
                documents: 5000,
                heads: mechanical,
                // Low enough that per-document noise is not worth memorizing
                // through process tokens when γ = 0.
                noise: 0.15,
                ..SynthConfig::default()
            },
            train: TrainConfig::default(),
        }
    }
}

impl AblationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<AblationConfig> {
        config::load(path)
    }

    pub fn digest(&self) -> Result<String> {
        config::config_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub seed: Option<u64>,
    pub head: String,
    pub n: usize,
    pub with_synthesis: f64,
    pub sample_only: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    /// One row per seed and head.
    pub runs: Vec<AblationRow>,
    /// Per-head means over seeds.
    pub heads: Vec<AblationRow>,
    pub mean_delta: f64,
    /// Held-out sample-id digest per seed; identical for both arms.
    pub test_ids: Vec<String>,
}

impl AblationReport {
    pub fn to_table(&self, config_digest: &str) -> Table {
        let mut t = Table::new(["seed", "head", "n", "r2_sample_synthesis", "r2_sample_only", "delta"]);
        for r in self.runs.iter().chain(&self.heads) {
            t.push(vec![
                r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
                r.head.clone(),
                r.n.to_string(),
                tsv::fmt_f64(r.with_synthesis),
                tsv::fmt_f64(r.sample_only),
                tsv::fmt_f64(r.delta),
            ]);
        }
        t.footer("mean_delta", tsv::fmt_f64(self.mean_delta));
        t.footer("test_ids", self.test_ids.join(","));
        t.footer("config_digest", config_digest);
        t
    }

    pub fn write(&self, path: impl AsRef<Path>, config_digest: &str) -> Result<()> {
        let path = path.as_ref();
        self.to_table(config_digest).write(path)?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        tsv::write_file(crate::metrics::json_path(path), json + "\n")
    }
}

fn primary_by_head(report: &EvalReport) -> Vec<(String, usize, f64)> {
    report
        .heads
        .iter()
        .filter_map(|h| h.primary_r2().map(|r| (h.head.clone(), h.n, r)))
        .collect()
}

/// Trains both arms per seed on identical splits and compares the primary
/// R² of every evaluated head on the held-out samples.
pub fn run_ablation(cfg: &AblationConfig, registry: &Registry) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    let mut test_ids = Vec::new();
    for &seed in &cfg.seeds {
        let synth = SynthConfig { seed, ..cfg.synth.clone() };
        let train = TrainConfig {
            seed,
            variant: None,
            ..cfg.train.clone()
        };
        let other = if cfg.control { Variant::SampleSynthesis } else { Variant::SampleOnly };
        let with = corpus_dataset(&synth, Variant::SampleSynthesis, seed, registry)?;
        let without = corpus_dataset(&synth, other, seed, registry)?;
        let digest = with.test_id_digest();
        if digest != without.test_id_digest() {
            return Err(Error::Config("ablation arms have different held-out samples".into()));
        }
        test_ids.push(digest);
        let score = |ds: &Dataset| -> Result<Vec<(String, usize, f64)>> {
            let out = Trainer::new(train.clone(), registry).train(ds)?;
            Ok(primary_by_head(&evaluate(&out.checkpoint, ds, Split::Test, registry)))
        };
        let a = score(&with)?;
        let b = score(&without)?;
        for (head, n, r_with) in a {
            if let Some((_, _, r_without)) = b.iter().find(|(h, _, _)| *h == head) {
                runs.push(AblationRow {
                    seed: Some(seed),
                    head,
                    n,
                    with_synthesis: r_with,
                    sample_only: *r_without,
                    delta: r_without - r_with,
                });
            }
        }
    }
    let mut heads: Vec<AblationRow> = Vec::new();
    for spec in registry.specs() {
        let rows: Vec<&AblationRow> = runs.iter().filter(|r| r.head == spec.name).collect();
        if rows.is_empty() {
            continue;
        }
        let k = rows.len() as f64;
        let with_synthesis = rows.iter().map(|r| r.with_synthesis).sum::<f64>() / k;
        let sample_only = rows.iter().map(|r| r.sample_only).sum::<f64>() / k;
        heads.push(AblationRow {
            seed: None,
            head: spec.name.clone(),
            n: rows.iter().map(|r| r.n).sum::<usize>() / rows.len(),
            with_synthesis,
            sample_only,
            delta: sample_only - with_synthesis,
        });
    }
    let mean_delta = heads.iter().map(|r| r.delta).sum::<f64>() / heads.len().max(1) as f64;
    Ok(AblationReport {
        runs,
        heads,
        mean_delta,
        test_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyRow {
    pub head: String,
    pub sigma: f64,
    pub rmse: f64,
    /// `σ_t / max σ`
    pub sigma_scaled: f64,
    /// `RMSE_t / max RMSE`
    pub rmse_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub rows: Vec<UncertaintyRow>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub calibration_ratio: f64,
    /// Spearman is within the noise band of a zero correlation.
    pub low_signal: bool,
}

impl UncertaintyReport {
    pub fn to_table(&self, config_digest: &str) -> Table {
        let mut t = Table::new(["head", "sigma", "rmse_normalized", "sigma_scaled", "rmse_scaled"]);
        for r in &self.rows {
            t.push(vec![
                r.head.clone(),
                tsv::fmt_f64(r.sigma),
                tsv::fmt_f64(r.rmse),
                tsv::fmt_f64(r.sigma_scaled),
                tsv::fmt_f64(r.rmse_scaled),
            ]);
        }
        t.footer("pearson", tsv::fmt_opt(self.pearson));
        t.footer("spearman", tsv::fmt_opt(self.spearman));
        t.footer("calibration_ratio", tsv::fmt_f64(self.calibration_ratio));
        t.footer("low_signal", self.low_signal.to_string());
        t.footer("config_digest", config_digest);
        t
    }

    pub fn write(&self, path: impl AsRef<Path>, config_digest: &str) -> Result<()> {
        let path = path.as_ref();
        self.to_table(config_digest).write(path)?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        tsv::write_file(crate::metrics::json_path(path), json + "\n")
    }
}

/// Relates each head's learned `σ_t` to its held-out RMSE in normalized
/// label space.
pub fn uncertainty_from_pairs(heads: Vec<String>, sigma: Vec<f64>, rmse: Vec<f64>) -> Result<UncertaintyReport> {
    if heads.len() < 5 {
        return Err(Error::Config(format!(
            "uncertainty report needs at least 5 evaluated heads, got {}",
            heads.len()
        )));
    }
    let max_s = sigma.iter().copied().fold(f64::MIN, f64::max);
    let max_r = rmse.iter().copied().fold(f64::MIN, f64::max);
    let (pearson, spearman) = rank_correlations(&sigma, &rmse);
    let rows = heads
        .into_iter()
        .zip(sigma.iter().zip(&rmse))
        .map(|(head, (&s, &r))| UncertaintyRow {
            head,
            sigma: s,
            rmse: r,
            sigma_scaled: s / max_s,
            rmse_scaled: r / max_r,
        })
        .collect::<Vec<_>>();
    Ok(UncertaintyReport {
        low_signal: low_signal(spearman, rows.len()),
        calibration_ratio: calibration_ratio(&rmse, &sigma),
        rows,
        pearson,
        spearman,
    })
}

pub fn run_uncertainty_report(ckpt: &Checkpoint, dataset: &Dataset, registry: &Registry) -> Result<UncertaintyReport> {
    let report = evaluate(ckpt, dataset, Split::Test, registry);
    let mut heads = Vec::new();
    let mut sigma = Vec::new();
    let mut rmse = Vec::new();
    for h in &report.heads {
        if let (Some(s), Some(r)) = (h.sigma, h.rmse_normalized) {
            heads.push(h.head.clone());
            sigma.push(s);
            rmse.push(r);
        }
    }
    uncertainty_from_pairs(heads, sigma, rmse)
}

/// Outcome of training on a corpus with known per-head noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecovery {
    pub report: UncertaintyReport,
    /// Injected noise scale per row of `report`.
    pub eta: Vec<f64>,
    pub spearman_sigma_eta: Option<f64>,
}

pub fn run_noise_recovery(synth: &SynthConfig, train: &TrainConfig, registry: &Registry) -> Result<NoiseRecovery> {
    let ds = corpus_dataset(synth, Variant::SampleSynthesis, synth.seed, registry)?;
    let out = Trainer::new(train.clone(), registry).train(&ds)?;
    let report = run_uncertainty_report(&out.checkpoint, &ds, registry)?;
    let eta: Vec<f64> = report
        .rows
        .iter()
        .map(|r| synth.noise_for(registry.by_name(&r.head).expect("registry head")))
        .collect();
    let sigma: Vec<f64> = report.rows.iter().map(|r| r.sigma).collect();
    Ok(NoiseRecovery {
        spearman_sigma_eta: spearman(&sigma, &eta),
        report,
        eta,
    })
}

/// Noise-recovery benchmark: every head gets its own injected noise scale,
/// spread geometrically between `eta_low` and `eta_high`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBenchmarkConfig {
    pub seeds: Vec<u64>,
    pub eta_low: f64,
    pub eta_high: f64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for NoiseBenchmarkConfig {
    fn default() -> Self {
        NoiseBenchmarkConfig {
            seeds: vec![0, 1, 2],
            eta_low: 0.1,
            eta_high: 1.0,
            synth: SynthConfig {
                documents: 2000,
                ..SynthConfig::default()
            },
            // Long enough for ρ to settle on the training loss.
            train: TrainConfig {
                epochs: 80,
                ..TrainConfig::default()
            },
        }
    }
}

impl NoiseBenchmarkConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<NoiseBenchmarkConfig> {
        config::load(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBenchmark {
    pub runs: Vec<NoiseRecovery>,
    pub mean_spearman_sigma_eta: f64,
    pub mean_spearman_sigma_rmse: f64,
    pub mean_calibration_ratio: f64,
}

pub fn run_noise_benchmark(cfg: &NoiseBenchmarkConfig, registry: &Registry) -> Result<NoiseBenchmark> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("noise benchmark needs at least one seed".into()));
    }
    let heads: Vec<String> = if cfg.synth.heads.is_empty() {
        registry.specs().iter().map(|s| s.name.clone()).collect()
    } else {
        cfg.synth.heads.clone()
    };
    let head_noise = spread_noise(&heads, cfg.eta_low, cfg.eta_high);
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let synth = SynthConfig {
            seed,
            heads: heads.clone(),
            head_noise: head_noise.clone(),
            ..cfg.synth.clone()
        };
        let train = TrainConfig { seed, ..cfg.train.clone() };
        runs.push(run_noise_recovery(&synth, &train, registry)?);
    }
    let k = runs.len() as f64;
    // An undefined correlation counts as zero.
    let mean = |f: &dyn Fn(&NoiseRecovery) -> f64| runs.iter().map(f).sum::<f64>() / k;
    Ok(NoiseBenchmark {
        mean_spearman_sigma_eta: mean(&|r| r.spearman_sigma_eta.unwrap_or(0.0)),
        mean_spearman_sigma_rmse: mean(&|r| r.report.spearman.unwrap_or(0.0)),
        mean_calibration_ratio: mean(&|r| r.report.calibration_ratio),
        runs,
    })
}

/// Geometric per-head noise scales from `lo` to `hi` over the given heads.
pub fn spread_noise(heads: &[String], lo: f64, hi: f64) -> std::collections::BTreeMap<String, f64> {
    let k = heads.len().max(2) - 1;
    heads
        .iter()
        .enumerate()
        .map(|(i, h)| (h.clone(), lo * (hi / lo).powf(i as f64 / k as f64)))
        .collect()
}
