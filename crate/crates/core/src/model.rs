//! The full model state (encoder, regressor, per-head log-variances) and the
//! batch objective with its exact gradient.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodeCache, EncoderConfig, EncoderFreeze, EncoderGrads, EncoderParams};
use crate::objective::rho_gradient;
use crate::registry::NUM_HEADS;
use crate::regressor::{Regressor, RegressorConfig, RegressorGrads, TrunkCache};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub regressor: RegressorConfig,
}

/// One training row: hashed prompt tokens plus normalized labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub buckets: Vec<usize>,
    /// Normalized targets; only entries with `mask[t]` are read.
    pub targets: [f64; NUM_HEADS],
    pub mask: [bool; NUM_HEADS],
    /// Frozen density weights for the observed heads.
    pub weights: [f64; NUM_HEADS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embedding,
    BaseProjection,
    Lora,
    Query,
    Trunk,
    HeadWeight,
    HeadBias,
    Rho,
}

impl TensorKind {
    pub fn trainable(self, freeze: &EncoderFreeze) -> bool {
        match self {
            TensorKind::Embedding => !freeze.embedding,
            TensorKind::BaseProjection => false,
            TensorKind::Lora => !freeze.lora,
            TensorKind::Query => !freeze.query,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub regressor: Regressor,
    /// `ρ_t = log σ_t²`, one per head.
    pub rho: Vec<f64>,
}

pub struct TensorRef<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub data: &'a mut [f64],
}

macro_rules! tensor_list {
    ($self:expr, $wrap:ident, $($borrow:tt)+) => {{
        let m = $self;
        let mut out = Vec::new();
        out.push($wrap { name: "encoder.embedding".into(), kind: TensorKind::Embedding, data: $($borrow)+ m.encoder.embedding.data[..] });
        out.push($wrap { name: "encoder.w0".into(), kind: TensorKind::BaseProjection, data: $($borrow)+ m.encoder.w0.data[..] });
        out.push($wrap { name: "encoder.lora_a".into(), kind: TensorKind::Lora, data: $($borrow)+ m.encoder.lora_a.data[..] });
        out.push($wrap { name: "encoder.lora_b".into(), kind: TensorKind::Lora, data: $($borrow)+ m.encoder.lora_b.data[..] });
        out.push($wrap { name: "encoder.query".into(), kind: TensorKind::Query, data: $($borrow)+ m.encoder.query[..] });
        let t = $($borrow)+ m.regressor.trunk;
        out.push($wrap { name: "trunk.in_weight".into(), kind: TensorKind::Trunk, data: $($borrow)+ t.in_weight.data[..] });
        out.push($wrap { name: "trunk.in_bias".into(), kind: TensorKind::Trunk, data: $($borrow)+ t.in_bias[..] });
        for (k, b) in ($($borrow)+ t.blocks).into_iter().enumerate() {
            out.push($wrap { name: format!("trunk.block{k}.ln_gain"), kind: TensorKind::Trunk, data: $($borrow)+ b.ln_gain[..] });
            out.push($wrap { name: format!("trunk.block{k}.ln_bias"), kind: TensorKind::Trunk, data: $($borrow)+ b.ln_bias[..] });
            out.push($wrap { name: format!("trunk.block{k}.weight"), kind: TensorKind::Trunk, data: $($borrow)+ b.weight.data[..] });
            out.push($wrap { name: format!("trunk.block{k}.bias"), kind: TensorKind::Trunk, data: $($borrow)+ b.bias[..] });
        }
        out.push($wrap { name: "trunk.out_weight".into(), kind: TensorKind::Trunk, data: $($borrow)+ t.out_weight.data[..] });
        out.push($wrap { name: "trunk.out_bias".into(), kind: TensorKind::Trunk, data: $($borrow)+ t.out_bias[..] });
        out.push($wrap { name: "heads.weight".into(), kind: TensorKind::HeadWeight, data: $($borrow)+ m.regressor.heads.weight.data[..] });
        out.push($wrap { name: "heads.bias".into(), kind: TensorKind::HeadBias, data: $($borrow)+ m.regressor.heads.bias[..] });
        out.push($wrap { name: "rho".into(), kind: TensorKind::Rho, data: $($borrow)+ m.rho[..] });
        out
    }};
}

/// Per-example forward state kept for the backward pass.
pub struct ForwardCache {
    encode: EncodeCache,
    trunk: TrunkCache,
    pub preds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub task_losses: [Option<f64>; NUM_HEADS],
}

impl Model {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Model {
        let encoder = EncoderParams::init(config.encoder, rng);
        let regressor = Regressor::init(config.regressor, config.encoder.dim, rng);
        Model {
            encoder,
            regressor,
            rho: vec![0.0; NUM_HEADS],
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.config,
            regressor: self.regressor.config,
        }
    }

    /// All parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        tensor_list!(self, TensorRef, &)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        tensor_list!(self, TensorMut, &mut)
    }

    pub fn parameter_counts(&self, freeze: &EncoderFreeze) -> (usize, usize) {
        self.tensors().iter().fold((0, 0), |(trainable, total), t| {
            let n = t.data.len();
            (trainable + if t.kind.trainable(freeze) { n } else { 0 }, total + n)
        })
    }

    pub fn trainable_fraction(&self, freeze: &EncoderFreeze) -> f64 {
        let (trainable, total) = self.parameter_counts(freeze);
        trainable as f64 / total as f64
    }

    pub fn forward(&self, buckets: &[usize]) -> ForwardCache {
        let (pooled, encode) = self.encoder.encode(buckets);
        let (preds, trunk) = self.regressor.forward(&pooled);
        ForwardCache { encode, trunk, preds }
    }

    /// Normalized predictions for all heads.
    pub fn predict(&self, buckets: &[usize]) -> Vec<f64> {
        self.forward(buckets).preds
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| crate::objective::sigma(r)).collect()
    }

    fn batch_losses(batch: &[Example], caches: &[ForwardCache], rho: &[f64]) -> (BatchLoss, [usize; NUM_HEADS]) {
        let mut sums = [0.0; NUM_HEADS];
        let mut counts = [0usize; NUM_HEADS];
        for (ex, c) in batch.iter().zip(caches) {
            for t in 0..NUM_HEADS {
                if ex.mask[t] {
                    let r = c.preds[t] - ex.targets[t];
                    sums[t] += ex.weights[t] * r * r;
                    counts[t] += 1;
                }
            }
        }
        let mut task_losses = [None; NUM_HEADS];
        let mut total = 0.0;
        for t in 0..NUM_HEADS {
            if counts[t] > 0 {
                let l = sums[t] / counts[t] as f64;
                task_losses[t] = Some(l);
                total += 0.5 * l * (-rho[t]).exp() + 0.5 * rho[t];
            }
        }
        (BatchLoss { total, task_losses }, counts)
    }

    /// Objective value of a batch without gradients.
    pub fn batch_loss(&self, batch: &[Example]) -> BatchLoss {
        let caches: Vec<ForwardCache> = batch.iter().map(|ex| self.forward(&ex.buckets)).collect();
        Self::batch_losses(batch, &caches, &self.rho).0
    }

    /// Objective value and exact gradient of a batch. Examples are processed
    /// in order, so the accumulation is deterministic.
    pub fn batch_gradient(&self, batch: &[Example], freeze: &EncoderFreeze) -> (BatchLoss, ModelGrads) {
        let caches: Vec<ForwardCache> = batch.iter().map(|ex| self.forward(&ex.buckets)).collect();
        let (loss, counts) = Self::batch_losses(batch, &caches, &self.rho);
        let mut grads = ModelGrads::zeros(self);
        let scale: Vec<f64> = (0..NUM_HEADS)
            .map(|t| if counts[t] > 0 { (-self.rho[t]).exp() / counts[t] as f64 } else { 0.0 })
            .collect();
        for (ex, c) in batch.iter().zip(&caches) {
            let mut g_pred = vec![0.0; NUM_HEADS];
            let mut any = false;
            for t in 0..NUM_HEADS {
                if ex.mask[t] {
                    g_pred[t] = scale[t] * ex.weights[t] * (c.preds[t] - ex.targets[t]);
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let g_pooled = self.regressor.backward(&c.trunk, &g_pred, &mut grads.regressor);
            self.encoder.backward(&c.encode, &g_pooled, &mut grads.encoder, freeze);
        }
        for t in 0..NUM_HEADS {
            if let Some(l) = loss.task_losses[t] {
                grads.rho[t] = rho_gradient(l, self.rho[t]);
                grads.present[t] = true;
            }
        }
        (loss, grads)
    }
}

/// Gradient of one tensor in [`Model::tensors`] order.
pub enum GradRef<'a> {
    Dense(&'a [f64]),
    /// Embedding rows keyed by bucket.
    Sparse(&'a BTreeMap<usize, Vec<f64>>),
    None,
}

impl GradRef<'_> {
    /// Gradient at a flat coordinate; `row_len` resolves sparse rows.
    pub fn at(&self, index: usize, row_len: usize) -> f64 {
        match self {
            GradRef::Dense(d) => d[index],
            GradRef::Sparse(rows) => rows.get(&(index / row_len)).map_or(0.0, |r| r[index % row_len]),
            GradRef::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub regressor: RegressorGrads,
    pub rho: Vec<f64>,
    /// Heads with at least one observed label in the batch.
    pub present: [bool; NUM_HEADS],
}

impl ModelGrads {
    pub fn zeros(model: &Model) -> ModelGrads {
        ModelGrads {
            encoder: EncoderGrads::zeros(&model.encoder.config),
            regressor: RegressorGrads::zeros(&model.regressor),
            rho: vec![0.0; NUM_HEADS],
            present: [false; NUM_HEADS],
        }
    }

    /// Gradients aligned with [`Model::tensors`].
    pub fn tensors(&self) -> Vec<GradRef<'_>> {
        let t = &self.regressor.trunk;
        let mut out = vec![
            GradRef::Sparse(&self.encoder.embedding),
            GradRef::None,
            GradRef::Dense(&self.encoder.lora_a.data),
            GradRef::Dense(&self.encoder.lora_b.data),
            GradRef::Dense(&self.encoder.query),
            GradRef::Dense(&t.in_weight.data),
            GradRef::Dense(&t.in_bias),
        ];
        for b in &t.blocks {
            out.push(GradRef::Dense(&b.ln_gain));
            out.push(GradRef::Dense(&b.ln_bias));
            out.push(GradRef::Dense(&b.weight.data));
            out.push(GradRef::Dense(&b.bias));
        }
        out.push(GradRef::Dense(&t.out_weight.data));
        out.push(GradRef::Dense(&t.out_bias));
        out.push(GradRef::Dense(&self.regressor.heads.weight.data));
        out.push(GradRef::Dense(&self.regressor.heads.bias));
        out.push(GradRef::Dense(&self.rho));
        out
    }

    /// Euclidean norm over every gradient entry of trainable tensors.
    pub fn global_norm(&self, model: &Model, freeze: &EncoderFreeze) -> f64 {
        let mut sq = 0.0;
        for (p, g) in model.tensors().iter().zip(self.tensors()) {
            if !p.kind.trainable(freeze) {
                continue;
            }
            match g {
                GradRef::Dense(d) => sq += d.iter().map(|x| x * x).sum::<f64>(),
                GradRef::Sparse(rows) => sq += rows.values().flatten().map(|x| x * x).sum::<f64>(),
                GradRef::None => {}
            }
        }
        sq.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Pooling;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config(pooling: Pooling) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_bits: 5,
                dim: 6,
                rank: 2,
                alpha: 4.0,
                pooling,
            },
            regressor: RegressorConfig { hidden: 8, blocks: 2 },
        }
    }

    fn random_model(seed: u64, pooling: Pooling) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Model::init(tiny_config(pooling), &mut rng);
        // Move off the zero-initialized adapter and query so every path carries gradient.
        for t in m.tensors_mut() {
            if matches!(t.kind, TensorKind::Lora | TensorKind::Query | TensorKind::Rho) {
                for x in t.data.iter_mut() {
                    *x += rng.random_range(-0.5..0.5);
                }
            }
        }
        m
    }

    fn random_batch(seed: u64, n: usize, vocab: usize) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..7);
                let mut ex = Example {
                    buckets: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
                    targets: [0.0; NUM_HEADS],
                    mask: [false; NUM_HEADS],
                    weights: [0.0; NUM_HEADS],
                };
                for t in 0..NUM_HEADS {
                    if rng.random_bool(0.3) {
                        ex.mask[t] = true;
                        ex.targets[t] = rng.random_range(-2.0..2.0);
                        ex.weights[t] = rng.random_range(0.2..2.0);
                    } else {
                        ex.targets[t] = f64::NAN;
                    }
                }
                ex
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let freeze = EncoderFreeze::default();
        for (seed, pooling) in [(1, Pooling::Attention), (2, Pooling::Mean)] {
            let model = random_model(seed, pooling);
            let batch = random_batch(seed + 100, 5, model.encoder.config.vocab_size());
            let (_, grads) = model.batch_gradient(&batch, &freeze);
            let dim = model.encoder.config.dim;
            let g = grads.tensors();
            let names: Vec<(String, TensorKind, usize)> =
                model.tensors().iter().map(|t| (t.name.clone(), t.kind, t.data.len())).collect();
            for (ti, (name, kind, len)) in names.iter().enumerate() {
                if !kind.trainable(&freeze) {
                    continue;
                }
                for i in (0..*len).step_by((*len / 12).max(1)) {
                    let analytic = g[ti].at(i, dim);
                    let mut plus = model.clone();
                    plus.tensors_mut()[ti].data[i] += 1e-5;
                    let mut minus = model.clone();
                    minus.tensors_mut()[ti].data[i] -= 1e-5;
                    let fd = (plus.batch_loss(&batch).total - minus.batch_loss(&batch).total) / 2e-5;
                    let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                    assert!(err < 1e-5, "{name}[{i}]: analytic {analytic}, fd {fd}");
                }
            }
        }
    }

    #[test]
    fn base_projection_gets_no_gradient() {
        let model = random_model(3, Pooling::Attention);
        let batch = random_batch(4, 4, model.encoder.config.vocab_size());
        let (_, grads) = model.batch_gradient(&batch, &EncoderFreeze::default());
        assert!(matches!(grads.tensors()[1], GradRef::None));
        assert_eq!(model.tensors()[1].name, "encoder.w0");
    }

    #[test]
    fn missing_slots_carry_no_gradient() {
        let model = random_model(5, Pooling::Attention);
        let batch = random_batch(6, 6, model.encoder.config.vocab_size());
        let (l1, g1) = model.batch_gradient(&batch, &EncoderFreeze::default());
        let mut zeroed = batch.clone();
        for ex in &mut zeroed {
            for t in 0..NUM_HEADS {
                if !ex.mask[t] {
                    ex.targets[t] = 0.0;
                    ex.weights[t] = 123.0;
                }
            }
        }
        let (l2, g2) = model.batch_gradient(&zeroed, &EncoderFreeze::default());
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn absent_heads_are_untouched() {
        let model = random_model(7, Pooling::Attention);
        let mut batch = random_batch(8, 6, model.encoder.config.vocab_size());
        for ex in &mut batch {
            ex.mask[4] = false;
        }
        let (loss, grads) = model.batch_gradient(&batch, &EncoderFreeze::default());
        assert!(loss.task_losses[4].is_none());
        assert!(!grads.present[4] && !grads.regressor.touched_heads[4]);
        assert_eq!(grads.rho[4], 0.0);
        assert!(grads.regressor.heads.weight.row(4).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn frozen_embedding_budget_is_below_two_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::init(ModelConfig::default(), &mut rng);
        let frozen = EncoderFreeze {
            embedding: true,
            ..EncoderFreeze::default()
        };
        let f = model.trainable_fraction(&frozen);
        assert!(f < 0.02, "{f}");
        assert!(model.trainable_fraction(&EncoderFreeze::default()) > 0.9);
    }
}
