//! Text encoder: hashed token embeddings, a frozen base projection with a
//! trainable low-rank adapter, and mean or attention pooling.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, Matrix};

/// Version of the token hashing scheme stored in checkpoints.
pub const HASH_VERSION: u32 = 1;

pub const MASK_TOKEN: &str = "[MASKED]";
pub const SAMPLE_HEADER: &str = "[Sample]";
pub const SYNTHESIS_HEADER: &str = "[Synthesis]";
const ATOMS: [&str; 3] = [MASK_TOKEN, SAMPLE_HEADER, SYNTHESIS_HEADER];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Attention,
}

/// Lowercased word and number tokens; block headers and the mask token
/// stay atomic and keep their case.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut pos = 0;
    let bytes = text.as_bytes();
    while pos < text.len() {
        let rest = &text[pos..];
        if let Some(atom) = ATOMS.iter().find(|a| rest.starts_with(**a)) {
            tokens.push(atom.to_string());
            pos += atom.len();
            continue;
        }
        let c = rest.chars().next().expect("non-empty");
        if c.is_ascii_digit() {
            let mut end = pos;
            let mut seen_dot = false;
            while end < text.len() {
                let b = bytes[end];
                if b.is_ascii_digit() {
                    end += 1;
                } else if b == b'.' && !seen_dot && bytes.get(end + 1).is_some_and(u8::is_ascii_digit) {
                    seen_dot = true;
                    end += 1;
                } else {
                    break;
                }
            }
            tokens.push(text[pos..end].to_string());
            pos = end;
        } else if c.is_alphabetic() {
            let end = rest
                .char_indices()
                .find(|(_, ch)| !ch.is_alphanumeric())
                .map_or(text.len(), |(i, _)| pos + i);
            tokens.push(text[pos..end].to_lowercase());
            pos = end;
        } else {
            pos += c.len_utf8();
        }
    }
    tokens
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// FNV-1a followed by the murmur3 64-bit finalizer; FNV alone leaves the
/// low bits poorly mixed for short, similar tokens.
pub fn token_hash(token: &str) -> u64 {
    let mut h = fnv1a(token.as_bytes());
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

pub fn bucket(token: &str, vocab_size: usize) -> usize {
    (token_hash(token) % vocab_size as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Embedding table has `2^vocab_bits` rows.
    pub vocab_bits: u32,
    pub dim: usize,
    pub rank: usize,
    pub alpha: f64,
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_bits: 16,
            dim: 64,
            rank: 8,
            alpha: 16.0,
            pooling: Pooling::Attention,
        }
    }
}

impl EncoderConfig {
    pub fn vocab_size(&self) -> usize {
        1 << self.vocab_bits
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub embedding: Matrix,
    /// Frozen base projection, `d × d`.
    pub w0: Matrix,
    /// `r × d`
    pub lora_a: Matrix,
    /// `d × r`, zero at initialization.
    pub lora_b: Matrix,
    pub query: Vec<f64>,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> EncoderParams {
        assert!(config.rank >= 1 && config.rank < config.dim, "adapter rank must satisfy 1 <= r < d");
        assert!(config.alpha > 0.0, "alpha must be positive");
        let d = config.dim;
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        EncoderParams {
            embedding: Matrix::random(config.vocab_size(), d, 1.0, rng),
            w0: Matrix::random(d, d, inv_sqrt_d, rng),
            lora_a: Matrix::random(config.rank, d, inv_sqrt_d, rng),
            lora_b: Matrix::zeros(d, config.rank),
            query: vec![0.0; d],
            config,
        }
    }

    pub fn buckets(&self, tokens: &[String]) -> Vec<usize> {
        let v = self.config.vocab_size();
        tokens.iter().map(|t| bucket(t, v)).collect()
    }

    /// `T × d` rows of the embedding table; a single zero row when empty.
    pub fn embed(&self, tokens: &[String]) -> Matrix {
        let d = self.config.dim;
        if tokens.is_empty() {
            return Matrix::zeros(1, d);
        }
        let mut h = Matrix::zeros(tokens.len(), d);
        for (t, b) in self.buckets(tokens).into_iter().enumerate() {
            h.row_mut(t).copy_from_slice(self.embedding.row(b));
        }
        h
    }

    /// Adapted projection of one row: `W0 x + (alpha/r) B (A x)`.
    pub fn project_row(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.w0.matvec(x);
        let ax = self.lora_a.matvec(x);
        axpy(self.config.scale(), &self.lora_b.matvec(&ax), &mut out);
        out
    }

    /// Row-wise adapted projection of a `T × d` matrix.
    pub fn lora_project(&self, h: &Matrix) -> Matrix {
        assert_eq!(h.cols, self.config.dim, "lora_project shape mismatch");
        let mut out = Matrix::zeros(h.rows, h.cols);
        for t in 0..h.rows {
            out.row_mut(t).copy_from_slice(&self.project_row(h.row(t)));
        }
        out
    }

    /// Pools the unmasked rows of `h` (`mask[t] == true` keeps row `t`).
    pub fn pool(&self, h: &Matrix, mask: &[bool]) -> Vec<f64> {
        let weights = pool_weights(h, mask, self.config.pooling, &self.query);
        let mut out = vec![0.0; h.cols];
        for (t, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                axpy(*w, h.row(t), &mut out);
            }
        }
        out
    }

    /// Query direction in embedding space: `W0ᵀ q + (alpha/r) Aᵀ (Bᵀ q)`.
    fn score_direction(&self) -> (Vec<f64>, Vec<f64>) {
        let v = self.lora_b.matvec_t(&self.query);
        let mut u = self.w0.matvec_t(&self.query);
        axpy(self.config.scale(), &self.lora_a.matvec_t(&v), &mut u);
        (u, v)
    }

    /// Encodes bucket ids into the pooled, projected vector.
    ///
    /// Projection is linear, so pooling the raw embeddings first and
    /// projecting once gives the same vector as projecting every row and
    /// pooling afterwards; attention scores use the query pulled back
    /// through the projection.
    pub fn encode(&self, buckets: &[usize]) -> (Vec<f64>, EncodeCache) {
        let d = self.config.dim;
        let (u, v) = match self.config.pooling {
            Pooling::Attention => self.score_direction(),
            Pooling::Mean => (Vec::new(), Vec::new()),
        };
        let weights: Vec<f64> = if buckets.is_empty() {
            Vec::new()
        } else {
            match self.config.pooling {
                Pooling::Mean => vec![1.0 / buckets.len() as f64; buckets.len()],
                Pooling::Attention => {
                    let scores: Vec<f64> = buckets.iter().map(|&b| dot(self.embedding.row(b), &u)).collect();
                    softmax(&scores)
                }
            }
        };
        let mut pooled_embedding = vec![0.0; d];
        for (&b, &w) in buckets.iter().zip(&weights) {
            axpy(w, self.embedding.row(b), &mut pooled_embedding);
        }
        let adapter_in = self.lora_a.matvec(&pooled_embedding);
        let mut out = self.w0.matvec(&pooled_embedding);
        axpy(self.config.scale(), &self.lora_b.matvec(&adapter_in), &mut out);
        let cache = EncodeCache {
            buckets: buckets.to_vec(),
            weights,
            pooled_embedding,
            adapter_in,
            u,
            v,
        };
        (out, cache)
    }

    /// Accumulates gradients of the encoder given `∂L/∂output`.
    pub fn backward(&self, cache: &EncodeCache, grad_out: &[f64], grads: &mut EncoderGrads, freeze: &EncoderFreeze) {
        let s = self.config.scale();
        if cache.buckets.is_empty() {
            return;
        }
        // output = W0 ē + s B (A ē)
        let bt_g = self.lora_b.matvec_t(grad_out);
        if !freeze.lora {
            grads.lora_b.add_outer(s, grad_out, &cache.adapter_in);
            grads.lora_a.add_outer(s, &bt_g, &cache.pooled_embedding);
        }
        let mut g_pooled = self.w0.matvec_t(grad_out);
        axpy(s, &self.lora_a.matvec_t(&bt_g), &mut g_pooled);

        // ē = Σ α_t e_t
        let mut row_grads: Vec<Vec<f64>> = cache.weights.iter().map(|&w| g_pooled.iter().map(|g| w * g).collect()).collect();

        if self.config.pooling == Pooling::Attention {
            let g_alpha: Vec<f64> = cache.buckets.iter().map(|&b| dot(self.embedding.row(b), &g_pooled)).collect();
            let mean_g = dot(&cache.weights, &g_alpha);
            let g_scores: Vec<f64> = cache
                .weights
                .iter()
                .zip(&g_alpha)
                .map(|(a, g)| a * (g - mean_g))
                .collect();
            // scores_t = u · e_t
            let mut g_u = vec![0.0; self.config.dim];
            for ((&b, &gc), rg) in cache.buckets.iter().zip(&g_scores).zip(row_grads.iter_mut()) {
                axpy(gc, &cache.u, rg);
                axpy(gc, self.embedding.row(b), &mut g_u);
            }
            // u = W0ᵀ q + s Aᵀ v,  v = Bᵀ q
            let g_v: Vec<f64> = self.lora_a.matvec(&g_u).into_iter().map(|x| s * x).collect();
            if !freeze.lora {
                grads.lora_a.add_outer(s, &cache.v, &g_u);
                grads.lora_b.add_outer(1.0, &self.query, &g_v);
            }
            if !freeze.query {
                let mut g_q = self.w0.matvec(&g_u);
                crate::linalg::add_assign(&mut g_q, &self.lora_b.matvec(&g_v));
                crate::linalg::add_assign(&mut grads.query, &g_q);
            }
        }
        if !freeze.embedding {
            for (&b, rg) in cache.buckets.iter().zip(row_grads) {
                let slot = grads.embedding.entry(b).or_insert_with(|| vec![0.0; self.config.dim]);
                crate::linalg::add_assign(slot, &rg);
            }
        }
    }
}

/// Softmax weights over the unmasked rows of `h`; zeros elsewhere.
pub fn pool_weights(h: &Matrix, mask: &[bool], pooling: Pooling, query: &[f64]) -> Vec<f64> {
    assert_eq!(mask.len(), h.rows, "mask length must match rows");
    let kept: Vec<usize> = (0..h.rows).filter(|&t| mask[t]).collect();
    let mut weights = vec![0.0; h.rows];
    if kept.is_empty() {
        return weights;
    }
    match pooling {
        Pooling::Mean => {
            for &t in &kept {
                weights[t] = 1.0 / kept.len() as f64;
            }
        }
        Pooling::Attention => {
            let scores: Vec<f64> = kept.iter().map(|&t| dot(h.row(t), query)).collect();
            for (&t, w) in kept.iter().zip(softmax(&scores)) {
                weights[t] = w;
            }
        }
    }
    weights
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeCache {
    pub buckets: Vec<usize>,
    pub weights: Vec<f64>,
    pub pooled_embedding: Vec<f64>,
    pub adapter_in: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderFreeze {
    pub embedding: bool,
    pub lora: bool,
    pub query: bool,
}

impl Default for EncoderFreeze {
    fn default() -> Self {
        EncoderFreeze {
            embedding: false,
            lora: false,
            query: false,
        }
    }
}

/// Encoder gradients. Embedding rows are sparse: only touched buckets appear.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub embedding: BTreeMap<usize, Vec<f64>>,
    pub lora_a: Matrix,
    pub lora_b: Matrix,
    pub query: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(config: &EncoderConfig) -> EncoderGrads {
        EncoderGrads {
            embedding: BTreeMap::new(),
            lora_a: Matrix::zeros(config.rank, config.dim),
            lora_b: Matrix::zeros(config.dim, config.rank),
            query: vec![0.0; config.dim],
        }
    }
}
