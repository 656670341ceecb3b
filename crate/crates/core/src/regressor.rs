//! Shared residual MLP trunk with a 128-wide bottleneck, followed by one
//! linear head per property.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{add_assign, axpy, Matrix};
use crate::registry::NUM_HEADS;

pub const BOTTLENECK: usize = 128;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorConfig {
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig { hidden: 128, blocks: 2 }
    }
}

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Normalizes `x` to zero mean and unit variance (before gain and bias).
/// Returns the normalized vector and `1/sqrt(var + eps)`.
pub fn layer_norm(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (x.iter().map(|v| (v - mean) * rstd).collect(), rstd)
}

fn layer_norm_backward(xhat: &[f64], rstd: f64, g_xhat: &[f64]) -> Vec<f64> {
    let n = xhat.len() as f64;
    let mean_g = g_xhat.iter().sum::<f64>() / n;
    let mean_gx = g_xhat.iter().zip(xhat).map(|(g, x)| g * x).sum::<f64>() / n;
    g_xhat
        .iter()
        .zip(xhat)
        .map(|(g, x)| rstd * (g - mean_g - x * mean_gx))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrunkParams {
    pub in_weight: Matrix,
    pub in_bias: Vec<f64>,
    pub blocks: Vec<ResBlock>,
    pub out_weight: Matrix,
    pub out_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `22 × 128`, one row per head.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub config: RegressorConfig,
    pub trunk: TrunkParams,
    pub heads: HeadParams,
}

#[derive(Debug, Clone)]
struct BlockCache {
    xhat: Vec<f64>,
    rstd: f64,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrunkCache {
    input: Vec<f64>,
    /// Input of every block plus the final hidden state.
    hidden: Vec<Vec<f64>>,
    blocks: Vec<BlockCache>,
    pub bottleneck: Vec<f64>,
}

impl Regressor {
    pub fn init<R: Rng + ?Sized>(config: RegressorConfig, input_dim: usize, rng: &mut R) -> Regressor {
        assert!(config.blocks >= 1, "at least one residual block");
        let h = config.hidden;
        let std_in = 1.0 / (input_dim as f64).sqrt();
        let std_h = 1.0 / (h as f64).sqrt();
        let blocks = (0..config.blocks)
            .map(|_| ResBlock {
                ln_gain: vec![1.0; h],
                ln_bias: vec![0.0; h],
                weight: Matrix::random(h, h, std_h, rng),
                bias: vec![0.0; h],
            })
            .collect();
        Regressor {
            config,
            trunk: TrunkParams {
                in_weight: Matrix::random(h, input_dim, std_in, rng),
                in_bias: vec![0.0; h],
                blocks,
                out_weight: Matrix::random(BOTTLENECK, h, std_h, rng),
                out_bias: vec![0.0; BOTTLENECK],
            },
            heads: HeadParams {
                weight: Matrix::random(NUM_HEADS, BOTTLENECK, 0.1 / (BOTTLENECK as f64).sqrt(), rng),
                bias: vec![0.0; NUM_HEADS],
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.in_weight.cols
    }

    /// `z = Bottleneck(Block_k(… Block_1(Proj(x))))`, with
    /// `Block(x) = x + W·GELU(LayerNorm(x)) + b`.
    pub fn trunk_forward(&self, pooled: &[f64]) -> TrunkCache {
        assert!(pooled.iter().all(|v| v.is_finite()), "trunk input must be finite");
        let t = &self.trunk;
        let mut x = t.in_weight.matvec(pooled);
        add_assign(&mut x, &t.in_bias);
        let mut hidden = Vec::with_capacity(t.blocks.len() + 1);
        let mut caches = Vec::with_capacity(t.blocks.len());
        for block in &t.blocks {
            let (xhat, rstd) = layer_norm(&x);
            let pre_act: Vec<f64> = xhat
                .iter()
                .zip(&block.ln_gain)
                .zip(&block.ln_bias)
                .map(|((v, g), b)| v * g + b)
                .collect();
            let act: Vec<f64> = pre_act.iter().map(|&v| gelu(v)).collect();
            let mut next = block.weight.matvec(&act);
            add_assign(&mut next, &block.bias);
            add_assign(&mut next, &x);
            hidden.push(std::mem::replace(&mut x, next));
            caches.push(BlockCache { xhat, rstd, pre_act, act });
        }
        let mut z = t.out_weight.matvec(&x);
        add_assign(&mut z, &t.out_bias);
        hidden.push(x);
        TrunkCache {
            input: pooled.to_vec(),
            hidden,
            blocks: caches,
            bottleneck: z,
        }
    }

    /// `ŷ_t = w_tᵀ z + b_t` for all 22 heads.
    pub fn heads_forward(&self, z: &[f64]) -> Vec<f64> {
        let mut y = self.heads.weight.matvec(z);
        add_assign(&mut y, &self.heads.bias);
        y
    }

    pub fn forward(&self, pooled: &[f64]) -> (Vec<f64>, TrunkCache) {
        let cache = self.trunk_forward(pooled);
        (self.heads_forward(&cache.bottleneck), cache)
    }

    /// Accumulates parameter gradients and returns `∂L/∂pooled`.
    /// Heads with a zero entry in `grad_pred` receive no gradient.
    pub fn backward(&self, cache: &TrunkCache, grad_pred: &[f64], grads: &mut RegressorGrads) -> Vec<f64> {
        let t = &self.trunk;
        let mut g_z = vec![0.0; BOTTLENECK];
        for (head, &g) in grad_pred.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(g, &cache.bottleneck, grads.heads.weight.row_mut(head));
            axpy(g, self.heads.weight.row(head), &mut g_z);
            grads.heads.bias[head] += g;
            grads.touched_heads[head] = true;
        }
        let last = cache.hidden.last().expect("hidden states");
        grads.trunk.out_weight.add_outer(1.0, &g_z, last);
        add_assign(&mut grads.trunk.out_bias, &g_z);
        let mut g_x = t.out_weight.matvec_t(&g_z);

        for (k, block) in t.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[k];
            let gb = &mut grads.trunk.blocks[k];
            gb.weight.add_outer(1.0, &g_x, &bc.act);
            add_assign(&mut gb.bias, &g_x);
            let g_act = block.weight.matvec_t(&g_x);
            let g_pre: Vec<f64> = g_act.iter().zip(&bc.pre_act).map(|(g, &v)| g * gelu_grad(v)).collect();
            let mut g_xhat = vec![0.0; g_pre.len()];
            for i in 0..g_pre.len() {
                gb.ln_gain[i] += g_pre[i] * bc.xhat[i];
                gb.ln_bias[i] += g_pre[i];
                g_xhat[i] = g_pre[i] * block.ln_gain[i];
            }
            let g_in = layer_norm_backward(&bc.xhat, bc.rstd, &g_xhat);
            add_assign(&mut g_x, &g_in);
        }
        grads.trunk.in_weight.add_outer(1.0, &g_x, &cache.input);
        add_assign(&mut grads.trunk.in_bias, &g_x);
        t.in_weight.matvec_t(&g_x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorGrads {
    pub trunk: TrunkParams,
    pub heads: HeadParams,
    /// Heads that received any gradient in this accumulation.
    pub touched_heads: [bool; NUM_HEADS],
}

impl RegressorGrads {
    pub fn zeros(model: &Regressor) -> RegressorGrads {
        let zero_like = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        let t = &model.trunk;
        RegressorGrads {
            trunk: TrunkParams {
                in_weight: zero_like(&t.in_weight),
                in_bias: vec![0.0; t.in_bias.len()],
                blocks: t
                    .blocks
                    .iter()
                    .map(|b| ResBlock {
                        ln_gain: vec![0.0; b.ln_gain.len()],
                        ln_bias: vec![0.0; b.ln_bias.len()],
                        weight: zero_like(&b.weight),
                        bias: vec![0.0; b.bias.len()],
                    })
                    .collect(),
                out_weight: zero_like(&t.out_weight),
                out_bias: vec![0.0; t.out_bias.len()],
            },
            heads: HeadParams {
                weight: zero_like(&model.heads.weight),
                bias: vec![0.0; NUM_HEADS],
            },
            touched_heads: [false; NUM_HEADS],
        }
    }
}
