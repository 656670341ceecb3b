//! Mini-batch training with masked labels, Adam and global-norm clipping,
//! plus the checkpoint that bundles a trained model with its label
//! transforms and density weights.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::config;
use crate::encoder::{bucket, tokenize, EncoderFreeze, HASH_VERSION};
use crate::error::{Error, Result};
use crate::model::{Example, GradRef, Model, ModelConfig, ModelGrads, TensorKind};
use crate::objective::{fit_transform, DensityModel, HeadTransform, LabelTransform};
use crate::prompt::{Dataset, PromptInstance, Split, Variant};
use crate::registry::{HeadId, Registry, NUM_HEADS};
use crate::tsv::{self, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub clip_norm: f64,
    /// Expected dataset variant; any variant is accepted when unset.
    pub variant: Option<Variant>,
    /// Heads to train by name; empty means every head with at least two
    /// training labels.
    pub heads: Vec<String>,
    pub freeze: EncoderFreeze,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 32,
            epochs: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_norm: 5.0,
            variant: None,
            heads: Vec::new(),
            freeze: EncoderFreeze::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        config::load(path)
    }

    pub fn to_toml(&self) -> Result<String> {
        config::to_toml(self)
    }

    pub fn digest(&self) -> Result<String> {
        config::config_digest(self)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.adam_epsilon > 0.0) {
            return bad("learning_rate, clip_norm and adam_epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moments must lie in [0, 1)");
        }
        let e = &self.model.encoder;
        if e.rank == 0 || e.rank >= e.dim || !(e.alpha > 0.0) || e.vocab_bits == 0 || e.vocab_bits > 24 {
            return bad("encoder needs 1 <= rank < dim, alpha > 0 and 1 <= vocab_bits <= 24");
        }
        if self.model.regressor.blocks == 0 || self.model.regressor.hidden == 0 {
            return bad("regressor needs at least one block and a positive width");
        }
        Ok(())
    }
}

/// A trained model plus everything needed to turn its outputs into
/// canonical-unit predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub transform: LabelTransform,
    /// Density model per active head, in normalized label space.
    pub density: Vec<Option<DensityModel>>,
}

impl Checkpoint {
    pub fn active_heads(&self) -> Vec<HeadId> {
        self.transform.active_heads().collect()
    }

    pub fn buckets(&self, text: &str) -> Vec<usize> {
        let v = self.model.encoder.config.vocab_size();
        tokenize(text).iter().map(|t| bucket(t, v)).collect()
    }

    /// Predictions in normalized space for every head.
    pub fn predict_normalized(&self, text: &str) -> Vec<f64> {
        self.model.predict(&self.buckets(text))
    }

    /// Canonical-unit predictions for the active heads.
    pub fn predict(&self, text: &str) -> [Option<f64>; NUM_HEADS] {
        let z = self.predict_normalized(text);
        let mut out = [None; NUM_HEADS];
        for h in self.transform.active_heads() {
            out[h.index()] = self.transform.head(h).map(|t| t.denormalize(z[h.index()]));
        }
        out
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::default();
        c.meta.push(("train_config".into(), self.config.to_toml()?));
        c.meta.push(("config_digest".into(), self.config.digest()?));
        c.meta.push(("hash_version".into(), HASH_VERSION.to_string()));
        for t in self.model.tensors() {
            c.tensors.push((format!("model.{}", t.name), t.data.to_vec()));
        }
        let mut log_space = vec![f64::NAN; NUM_HEADS];
        let mut mean = vec![f64::NAN; NUM_HEADS];
        let mut std = vec![f64::NAN; NUM_HEADS];
        for (i, h) in self.transform.heads.iter().enumerate() {
            if let Some(h) = h {
                log_space[i] = if h.log_space { 1.0 } else { 0.0 };
                mean[i] = h.mean;
                std[i] = h.std;
            }
        }
        c.tensors.push(("transform.log_space".into(), log_space));
        c.tensors.push(("transform.mean".into(), mean));
        c.tensors.push(("transform.std".into(), std));
        c.tensors.push((
            "transform.dropped".into(),
            self.transform.dropped.iter().map(|&d| d as f64).collect(),
        ));
        for (i, d) in self.density.iter().enumerate() {
            if let Some(d) = d {
                c.tensors.push((format!("density.{i}.labels"), d.labels.clone()));
                c.tensors.push((format!("density.{i}.weights"), d.weights.clone()));
                c.tensors.push((format!("density.{i}.scalars"), vec![d.bandwidth, d.epsilon, d.normalizer]));
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Checkpoint> {
        let config: TrainConfig = config::from_toml(c.require_meta("train_config")?)
            .map_err(|e| Error::CorruptCheckpoint(format!("train_config: {e}")))?;
        if c.require_meta("hash_version")? != HASH_VERSION.to_string() {
            return Err(Error::CorruptCheckpoint("token hashing version differs".into()));
        }
        config.validate()?;
        let mut model = Model::init(config.model, &mut ChaCha8Rng::seed_from_u64(0));
        for t in model.tensors_mut() {
            let src = c.require_tensor(&format!("model.{}", t.name), t.data.len())?;
            t.data.copy_from_slice(src);
        }
        let log_space = c.require_tensor("transform.log_space", NUM_HEADS)?;
        let mean = c.require_tensor("transform.mean", NUM_HEADS)?;
        let std = c.require_tensor("transform.std", NUM_HEADS)?;
        let dropped = c.require_tensor("transform.dropped", NUM_HEADS)?;
        let heads = (0..NUM_HEADS)
            .map(|i| {
                (!log_space[i].is_nan()).then(|| HeadTransform {
                    log_space: log_space[i] == 1.0,
                    mean: mean[i],
                    std: std[i],
                })
            })
            .collect();
        let transform = LabelTransform {
            heads,
            dropped: dropped.iter().map(|&d| d as usize).collect(),
        };
        let mut density = vec![None; NUM_HEADS];
        for (i, slot) in density.iter_mut().enumerate() {
            let Some(labels) = c.tensor(&format!("density.{i}.labels")) else {
                continue;
            };
            let weights = c.require_tensor(&format!("density.{i}.weights"), labels.len())?;
            let s = c.require_tensor(&format!("density.{i}.scalars"), 3)?;
            *slot = Some(DensityModel {
                labels: labels.to_vec(),
                bandwidth: s[0],
                epsilon: s[1],
                normalizer: s[2],
                weights: weights.to_vec(),
            });
        }
        Ok(Checkpoint {
            config,
            model,
            transform,
            density,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.encode())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_container(&Container::load(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean total objective over the epoch's batches.
    pub loss: f64,
    /// Mean per-head weighted loss over the batches where the head appeared.
    pub task_losses: [Option<f64>; NUM_HEADS],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochStats>,
}

pub fn trace_table(trace: &[EpochStats], registry: &Registry, config_digest: &str) -> Table {
    let columns = ["epoch", "loss"]
        .into_iter()
        .map(String::from)
        .chain(registry.specs().iter().map(|s| s.name.clone()));
    let mut t = Table::new(columns);
    for e in trace {
        let mut row = vec![e.epoch.to_string(), tsv::fmt_f64(e.loss)];
        row.extend(e.task_losses.iter().map(|l| tsv::fmt_opt(*l)));
        t.push(row);
    }
    t.footer("config_digest", config_digest);
    t
}

/// Adam state. Shared tensors use a global step counter; head rows, head
/// biases and `ρ_t` advance only on batches where the head is observed, and
/// embedding rows only when their bucket occurs, so absent heads and unseen
/// tokens keep their exact values.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    head_steps: [u64; NUM_HEADS],
    row_steps: BTreeMap<usize, u64>,
}

struct AdamHyper {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamHyper {
    fn update(&self, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, scale: f64) {
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        for i in 0..p.len() {
            let gi = g[i] * scale;
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
            p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
        }
    }
}

impl Adam {
    fn new(model: &Model, freeze: &EncoderFreeze) -> Adam {
        let sizes: Vec<usize> = model
            .tensors()
            .iter()
            .map(|t| if t.kind.trainable(freeze) { t.data.len() } else { 0 })
            .collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            head_steps: [0; NUM_HEADS],
            row_steps: BTreeMap::new(),
        }
    }

    fn apply(&mut self, model: &mut Model, grads: &ModelGrads, freeze: &EncoderFreeze, hyper: &AdamHyper, scale: f64) {
        self.step += 1;
        for h in 0..NUM_HEADS {
            if grads.present[h] {
                self.head_steps[h] += 1;
            }
        }
        let dim = model.encoder.config.dim;
        let g = grads.tensors();
        for (ti, t) in model.tensors_mut().into_iter().enumerate() {
            if !t.kind.trainable(freeze) {
                continue;
            }
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            match (t.kind, &g[ti]) {
                (TensorKind::Embedding, GradRef::Sparse(rows)) => {
                    for (&r, gr) in rows.iter() {
                        let step = self.row_steps.entry(r).or_insert(0);
                        *step += 1;
                        let s = r * dim..(r + 1) * dim;
                        hyper.update(&mut t.data[s.clone()], gr, &mut m[s.clone()], &mut v[s], *step, scale);
                    }
                }
                (TensorKind::HeadWeight, GradRef::Dense(gd)) => {
                    let w = t.data.len() / NUM_HEADS;
                    for h in (0..NUM_HEADS).filter(|&h| grads.present[h]) {
                        let s = h * w..(h + 1) * w;
                        hyper.update(&mut t.data[s.clone()], &gd[s.clone()], &mut m[s.clone()], &mut v[s], self.head_steps[h], scale);
                    }
                }
                (TensorKind::HeadBias | TensorKind::Rho, GradRef::Dense(gd)) => {
                    for h in (0..NUM_HEADS).filter(|&h| grads.present[h]) {
                        let s = h..h + 1;
                        hyper.update(&mut t.data[s.clone()], &gd[s.clone()], &mut m[s.clone()], &mut v[s], self.head_steps[h], scale);
                    }
                }
                (_, GradRef::Dense(gd)) => hyper.update(t.data, gd, m, v, self.step, scale),
                _ => unreachable!("gradient layout matches tensor layout"),
            }
        }
    }
}

/// Converts prompt instances into training rows for the active heads.
pub fn examples(
    instances: &[&PromptInstance],
    transform: &LabelTransform,
    density: &[Option<DensityModel>],
    vocab_size: usize,
) -> Vec<Example> {
    instances
        .iter()
        .map(|inst| {
            let mut ex = Example {
                buckets: tokenize(&inst.text).iter().map(|t| bucket(t, vocab_size)).collect(),
                targets: [0.0; NUM_HEADS],
                mask: [false; NUM_HEADS],
                weights: [0.0; NUM_HEADS],
            };
            for h in transform.active_heads() {
                let i = h.index();
                let tf = transform.head(h).expect("active head");
                if !inst.label_mask[i] || !tf.accepts(inst.labels[i]) {
                    continue;
                }
                let z = tf.normalize(inst.labels[i]);
                ex.targets[i] = z;
                ex.mask[i] = true;
                ex.weights[i] = density[i].as_ref().map_or(1.0, |d| d.weight_for(z));
            }
            ex
        })
        .collect()
}

pub struct Trainer<'r> {
    config: TrainConfig,
    registry: &'r Registry,
    transform: Option<LabelTransform>,
}

impl<'r> Trainer<'r> {
    pub fn new(config: TrainConfig, registry: &'r Registry) -> Trainer<'r> {
        Trainer {
            config,
            registry,
            transform: None,
        }
    }

    /// Uses a pre-fitted label transform instead of fitting one on the
    /// training split; its active heads define the trained heads.
    pub fn with_label_transform(mut self, transform: LabelTransform) -> Trainer<'r> {
        self.transform = Some(transform);
        self
    }

    fn selected_heads(&self, counts: &[usize; NUM_HEADS]) -> Result<Vec<bool>> {
        let mut selected = vec![false; NUM_HEADS];
        if self.config.heads.is_empty() {
            for t in 0..NUM_HEADS {
                selected[t] = counts[t] >= 2;
            }
        } else {
            for name in &self.config.heads {
                let spec = self
                    .registry
                    .by_name(name)
                    .ok_or_else(|| Error::Config(format!("unknown head {name:?}")))?;
                if counts[spec.head_id.index()] == 0 {
                    return Err(Error::DegenerateHead {
                        head: spec.name.clone(),
                        reason: "no training labels".into(),
                    });
                }
                selected[spec.head_id.index()] = true;
            }
        }
        Ok(selected)
    }

    pub fn train(&self, dataset: &Dataset) -> Result<TrainOutcome> {
        let cfg = &self.config;
        cfg.validate()?;
        if let Some(v) = cfg.variant {
            if v != dataset.options.variant {
                return Err(Error::Config(format!(
                    "config expects variant {v} but the dataset is {}",
                    dataset.options.variant
                )));
            }
        }
        let train: Vec<&PromptInstance> = dataset.split(Split::Train).collect();
        let transform = match &self.transform {
            Some(t) => t.clone(),
            None => {
                let selected = self.selected_heads(&dataset.label_counts(Split::Train))?;
                let mut labels = vec![Vec::new(); NUM_HEADS];
                for inst in &train {
                    for t in (0..NUM_HEADS).filter(|&t| selected[t] && inst.label_mask[t]) {
                        labels[t].push(inst.labels[t]);
                    }
                }
                fit_transform(&labels, self.registry)?
            }
        };
        let mut density = vec![None; NUM_HEADS];
        for h in transform.active_heads() {
            let tf = transform.head(h).expect("active head");
            let z: Vec<f64> = train
                .iter()
                .filter(|i| i.label_mask[h.index()] && tf.accepts(i.labels[h.index()]))
                .map(|i| tf.normalize(i.labels[h.index()]))
                .collect();
            if !z.is_empty() {
                density[h.index()] = Some(DensityModel::fit(&z));
            }
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = Model::init(cfg.model, &mut init_rng);
        let data = examples(&train, &transform, &density, cfg.model.encoder.vocab_size());
        let data: Vec<Example> = data.into_iter().filter(|e| e.mask.iter().any(|&m| m)).collect();

        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(1);
        let hyper = AdamHyper {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_epsilon,
        };
        let mut adam = Adam::new(&model, &cfg.freeze);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            let mut task_sum = [0.0; NUM_HEADS];
            let mut task_n = [0usize; NUM_HEADS];
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
                let (loss, grads) = model.batch_gradient(&batch, &cfg.freeze);
                if !loss.total.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                let norm = grads.global_norm(&model, &cfg.freeze);
                if !norm.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                let scale = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 };
                adam.apply(&mut model, &grads, &cfg.freeze, &hyper, scale);
                loss_sum += loss.total;
                batches += 1;
                for (t, l) in loss.task_losses.iter().enumerate() {
                    if let Some(l) = l {
                        task_sum[t] += l;
                        task_n[t] += 1;
                    }
                }
            }
            let mut task_losses = [None; NUM_HEADS];
            for t in 0..NUM_HEADS {
                if task_n[t] > 0 {
                    task_losses[t] = Some(task_sum[t] / task_n[t] as f64);
                }
            }
            trace.push(EpochStats {
                epoch,
                loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
                task_losses,
            });
        }
        Ok(TrainOutcome {
            checkpoint: Checkpoint {
                config: cfg.clone(),
                model,
                transform,
                density,
            },
            trace,
        })
    }
}
