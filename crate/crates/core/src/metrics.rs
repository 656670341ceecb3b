//! Regression metrics, uncertainty diagnostics and the evaluation report.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extract::{to_canonical, Canonical};
use crate::prompt::{Dataset, Split};
use crate::quantity::{parse_quantity, Magnitude};
use crate::registry::{HeadId, PropertySpec, Registry, NUM_HEADS};
use crate::trainer::Checkpoint;
use crate::tsv::{self, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Linear,
    Log10,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RSquared {
    pub value: f64,
    /// Pairs dropped because a target or prediction was not positive.
    pub excluded: usize,
}

/// `1 − SSE/SST` in linear or log10 space, SST taken about the target mean.
pub fn r_squared(targets: &[f64], preds: &[f64], space: Space) -> Result<RSquared> {
    assert_eq!(targets.len(), preds.len());
    let (y, p, excluded) = match space {
        Space::Linear => (targets.to_vec(), preds.to_vec(), 0),
        Space::Log10 => {
            let mut y = Vec::with_capacity(targets.len());
            let mut p = Vec::with_capacity(targets.len());
            for (&t, &q) in targets.iter().zip(preds) {
                if t > 0.0 && q > 0.0 {
                    y.push(t.log10());
                    p.push(q.log10());
                }
            }
            let excluded = targets.len() - y.len();
            (y, p, excluded)
        }
    };
    if y.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sse: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(RSquared {
        value: 1.0 - sse / sst,
        excluded,
    })
}

pub fn mae(targets: &[f64], preds: &[f64]) -> f64 {
    assert!(!targets.is_empty() && targets.len() == preds.len());
    targets.iter().zip(preds).map(|(a, b)| (a - b).abs()).sum::<f64>() / targets.len() as f64
}

pub fn rmse(targets: &[f64], preds: &[f64]) -> f64 {
    assert!(!targets.is_empty() && targets.len() == preds.len());
    (targets.iter().zip(preds).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / targets.len() as f64).sqrt()
}

/// Pearson correlation; `None` when either vector is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// `(Pearson, Spearman)`; both need at least three points.
pub fn rank_correlations(x: &[f64], y: &[f64]) -> (Option<f64>, Option<f64>) {
    if x.len() < 3 {
        return (None, None);
    }
    (pearson(x, y), spearman(x, y))
}

/// Mean of `rmse_t / σ_t`.
pub fn calibration_ratio(rmse: &[f64], sigma: &[f64]) -> f64 {
    assert!(!rmse.is_empty() && rmse.len() == sigma.len());
    rmse.iter().zip(sigma).map(|(r, s)| r / s).sum::<f64>() / rmse.len() as f64
}

/// A correlation is distinguishable from zero only beyond roughly two
/// standard errors of the null, `1.96/√(n−1)`.
pub fn low_signal(rho: Option<f64>, n: usize) -> bool {
    match rho {
        Some(r) if n > 1 => r.abs() < 1.96 / ((n - 1) as f64).sqrt(),
        _ => true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Parsed {
    Value(f64),
    Rejected,
}

/// Accepts a response that is exactly one number with an optional unit of
/// the head's dimension, returned in canonical units.
pub fn strict_numeric_parse(response: &str, head: &PropertySpec) -> Parsed {
    let Ok(q) = parse_quantity(response) else {
        return Parsed::Rejected;
    };
    if !matches!(q.magnitude, Magnitude::Point(_)) {
        return Parsed::Rejected;
    }
    match to_canonical(&q, head) {
        Ok(Canonical::Value(v)) => Parsed::Value(v),
        _ => Parsed::Rejected,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadReport {
    pub head: String,
    pub n: usize,
    pub r2_linear: Option<f64>,
    pub r2_log: Option<f64>,
    pub log_excluded: usize,
    pub mae: f64,
    pub rmse: f64,
    pub primary: Space,
    /// RMSE in the head's normalized label space.
    pub rmse_normalized: Option<f64>,
    /// Learned `σ_t` when scoring a checkpoint.
    pub sigma: Option<f64>,
}

impl HeadReport {
    pub fn primary_r2(&self) -> Option<f64> {
        match self.primary {
            Space::Linear => self.r2_linear,
            Space::Log10 => self.r2_log,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySummary {
    pub heads: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub calibration_ratio: f64,
    pub spearman_low_signal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub heads: Vec<HeadReport>,
    /// Heads with too few or constant targets.
    pub skipped: Vec<String>,
    pub macro_r2: Option<f64>,
    pub macro_log_r2: Option<f64>,
    pub macro_primary_r2: Option<f64>,
    pub uncertainty: Option<UncertaintySummary>,
    /// Fraction of baseline responses accepted by strict parsing.
    pub retention: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn head_report(spec: &PropertySpec, targets: &[f64], preds: &[f64]) -> Option<HeadReport> {
    let r2_linear = r_squared(targets, preds, Space::Linear).ok()?;
    let log = r_squared(targets, preds, Space::Log10).ok();
    Some(HeadReport {
        head: spec.name.clone(),
        n: targets.len(),
        r2_linear: Some(r2_linear.value),
        r2_log: log.map(|r| r.value),
        log_excluded: log.map_or(targets.len(), |r| r.excluded),
        mae: mae(targets, preds),
        rmse: rmse(targets, preds),
        primary: if spec.log_space { Space::Log10 } else { Space::Linear },
        rmse_normalized: None,
        sigma: None,
    })
}

impl EvalReport {
    fn finish(heads: Vec<HeadReport>, skipped: Vec<String>, retention: Option<f64>) -> EvalReport {
        let with_sigma: Vec<&HeadReport> = heads
            .iter()
            .filter(|h| h.sigma.is_some() && h.rmse_normalized.is_some())
            .collect();
        let uncertainty = (!with_sigma.is_empty()).then(|| {
            let s: Vec<f64> = with_sigma.iter().map(|h| h.sigma.expect("filtered")).collect();
            let r: Vec<f64> = with_sigma.iter().map(|h| h.rmse_normalized.expect("filtered")).collect();
            let (pearson, spearman) = rank_correlations(&s, &r);
            UncertaintySummary {
                heads: s.len(),
                pearson,
                spearman,
                calibration_ratio: calibration_ratio(&r, &s),
                spearman_low_signal: low_signal(spearman, s.len()),
            }
        });
        EvalReport {
            macro_r2: mean_of(heads.iter().filter_map(|h| h.r2_linear)),
            macro_log_r2: mean_of(heads.iter().filter(|h| h.primary == Space::Log10).filter_map(|h| h.r2_log)),
            macro_primary_r2: mean_of(heads.iter().filter_map(HeadReport::primary_r2)),
            heads,
            skipped,
            uncertainty,
            retention,
        }
    }

    pub fn head(&self, name: &str) -> Option<&HeadReport> {
        self.heads.iter().find(|h| h.head == name)
    }

    pub fn to_table(&self, config_digest: &str) -> Table {
        let mut t = Table::new([
            "head",
            "n",
            "r2_linear",
            "r2_log",
            "log_excluded",
            "mae",
            "rmse",
            "primary",
            "rmse_normalized",
            "sigma",
        ]);
        for h in &self.heads {
            t.push(vec![
                h.head.clone(),
                h.n.to_string(),
                tsv::fmt_opt(h.r2_linear),
                tsv::fmt_opt(h.r2_log),
                h.log_excluded.to_string(),
                tsv::fmt_f64(h.mae),
                tsv::fmt_f64(h.rmse),
                match h.primary {
                    Space::Linear => "linear".into(),
                    Space::Log10 => "log".into(),
                },
                tsv::fmt_opt(h.rmse_normalized),
                tsv::fmt_opt(h.sigma),
            ]);
        }
        t.footer("macro_r2", tsv::fmt_opt(self.macro_r2));
        t.footer("macro_log_r2", tsv::fmt_opt(self.macro_log_r2));
        t.footer("macro_primary_r2", tsv::fmt_opt(self.macro_primary_r2));
        if let Some(u) = &self.uncertainty {
            t.footer("pearson", tsv::fmt_opt(u.pearson));
            t.footer("spearman", tsv::fmt_opt(u.spearman));
            t.footer("calibration_ratio", tsv::fmt_f64(u.calibration_ratio));
        }
        if let Some(r) = self.retention {
            t.footer("retention", tsv::fmt_f64(r));
        }
        if !self.skipped.is_empty() {
            t.footer("skipped", self.skipped.join(","));
        }
        t.footer("config_digest", config_digest);
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<path>` as a table and `<path>.json` as the structured report.
    pub fn write(&self, path: impl AsRef<Path>, config_digest: &str) -> Result<()> {
        let path = path.as_ref();
        self.to_table(config_digest).write(path)?;
        tsv::write_file(json_path(path), self.to_json() + "\n")
    }
}

pub fn json_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

/// Scores a checkpoint on one split of a dataset.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, split: Split, registry: &Registry) -> EvalReport {
    let mut targets = vec![Vec::new(); NUM_HEADS];
    let mut preds = vec![Vec::new(); NUM_HEADS];
    let mut z_err = vec![Vec::new(); NUM_HEADS];
    let active = ckpt.active_heads();
    for inst in dataset.split(split) {
        if !active.iter().any(|h| inst.label_mask[h.index()]) {
            continue;
        }
        let z = ckpt.predict_normalized(&inst.text);
        for &h in &active {
            let i = h.index();
            let tf = ckpt.transform.head(h).expect("active head");
            if inst.label_mask[i] && tf.accepts(inst.labels[i]) {
                targets[i].push(inst.labels[i]);
                preds[i].push(tf.denormalize(z[i]));
                z_err[i].push(z[i] - tf.normalize(inst.labels[i]));
            }
        }
    }
    let sigma = ckpt.model.sigma();
    let mut heads = Vec::new();
    let mut skipped = Vec::new();
    for &h in &active {
        let i = h.index();
        let spec = registry.get(h);
        match head_report(spec, &targets[i], &preds[i]) {
            Some(mut r) => {
                let n = z_err[i].len() as f64;
                r.rmse_normalized = Some((z_err[i].iter().map(|e| e * e).sum::<f64>() / n).sqrt());
                r.sigma = Some(sigma[i]);
                heads.push(r);
            }
            None => skipped.push(spec.name.clone()),
        }
    }
    EvalReport::finish(heads, skipped, None)
}

/// One externally produced free-text prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub sample_id: String,
    pub head: HeadId,
    pub response: String,
}

pub fn read_baseline(path: impl AsRef<Path>, registry: &Registry) -> Result<Vec<BaselineRow>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let table = Table::read(path)?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::format(&origin, 1, format!("missing column {name}")))
    };
    let (s, h, r) = (col("sample_id")?, col("head")?, col("response")?);
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let spec = registry
                .by_name(&row[h])
                .ok_or_else(|| Error::format(&origin, i + 2, format!("unknown head {}", row[h])))?;
            Ok(BaselineRow {
                sample_id: row[s].clone(),
                head: spec.head_id,
                response: row[r].clone(),
            })
        })
        .collect()
}

/// Scores free-text baseline predictions against a split's labels. Only
/// strictly parsed responses count; retention is reported over all rows
/// whose sample and head have a label.
pub fn score_baseline(rows: &[BaselineRow], dataset: &Dataset, split: Split, registry: &Registry) -> EvalReport {
    let labels: std::collections::HashMap<&str, &crate::prompt::PromptInstance> =
        dataset.split(split).map(|i| (i.sample_id.as_str(), i)).collect();
    let mut targets = vec![Vec::new(); NUM_HEADS];
    let mut preds = vec![Vec::new(); NUM_HEADS];
    let mut scorable = 0usize;
    let mut kept = 0usize;
    for row in rows {
        let Some(inst) = labels.get(row.sample_id.as_str()) else { continue };
        let i = row.head.index();
        if !inst.label_mask[i] {
            continue;
        }
        scorable += 1;
        if let Parsed::Value(v) = strict_numeric_parse(&row.response, registry.get(row.head)) {
            kept += 1;
            targets[i].push(inst.labels[i]);
            preds[i].push(v);
        }
    }
    let mut heads = Vec::new();
    let mut skipped = Vec::new();
    for spec in registry.specs() {
        let i = spec.head_id.index();
        if targets[i].is_empty() {
            continue;
        }
        match head_report(spec, &targets[i], &preds[i]) {
            Some(r) => heads.push(r),
            None => skipped.push(spec.name.clone()),
        }
    }
    let retention = (scorable > 0).then(|| kept as f64 / scorable as f64);
    EvalReport::finish(heads, skipped, retention)
}
