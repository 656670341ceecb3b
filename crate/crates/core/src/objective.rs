//! Label normalization, kernel-density sample weights, the weighted
//! per-task loss and the uncertainty-balanced total loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{HeadId, Registry, NUM_HEADS};

/// Per-head affine normalization, applied after `log10` on log-space heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadTransform {
    pub log_space: bool,
    pub mean: f64,
    pub std: f64,
}

impl HeadTransform {
    pub fn normalize(&self, y: f64) -> f64 {
        let v = if self.log_space { y.log10() } else { y };
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        let v = self.mean + self.std * z;
        if self.log_space {
            10f64.powf(v)
        } else {
            v
        }
    }

    /// Whether `y` is admissible as a label for this head.
    pub fn accepts(&self, y: f64) -> bool {
        y.is_finite() && (!self.log_space || y > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTransform {
    pub heads: Vec<Option<HeadTransform>>,
    /// Non-positive labels dropped from log-space heads, per head.
    pub dropped: Vec<usize>,
}

impl LabelTransform {
    pub fn head(&self, head: HeadId) -> Option<&HeadTransform> {
        self.heads[head.index()].as_ref()
    }

    pub fn active_heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        HeadId::all().filter(|h| self.heads[h.index()].is_some())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits mean/std (population) of the transformed labels of each head.
///
/// `labels[t]` holds the raw labels of head `t`; an empty list leaves the
/// head inactive. Heads with fewer than two usable labels or with zero
/// spread are rejected.
pub fn fit_transform(labels: &[Vec<f64>], registry: &Registry) -> Result<LabelTransform> {
    assert_eq!(labels.len(), NUM_HEADS, "one label list per head");
    let mut heads = vec![None; NUM_HEADS];
    let mut dropped = vec![0; NUM_HEADS];
    for (t, ys) in labels.iter().enumerate() {
        if ys.is_empty() {
            continue;
        }
        let spec = registry.get(HeadId(t));
        let log_space = spec.log_space;
        let mut values = Vec::with_capacity(ys.len());
        for &y in ys {
            if !y.is_finite() || (log_space && y <= 0.0) {
                dropped[t] += 1;
                continue;
            }
            values.push(if log_space { y.log10() } else { y });
        }
        let degenerate = |reason: String| Error::DegenerateHead {
            head: spec.name.clone(),
            reason,
        };
        if values.len() < 2 {
            return Err(degenerate(format!("{} usable labels", values.len())));
        }
        let (mean, std) = mean_std(&values);
        if !(std > 0.0) {
            return Err(degenerate("labels have zero variance".into()));
        }
        heads[t] = Some(HeadTransform { log_space, mean, std });
    }
    Ok(LabelTransform { heads, dropped })
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density estimate `(1/(n h)) Σ φ((y − y_j)/h)`.
pub fn kde_density(train: &[f64], bandwidth: f64, y: f64) -> f64 {
    assert!(bandwidth > 0.0 && !train.is_empty());
    let sum: f64 = train
        .iter()
        .map(|&yj| {
            let u = (y - yj) / bandwidth;
            (-0.5 * u * u).exp()
        })
        .sum();
    sum * INV_SQRT_2PI / (train.len() as f64 * bandwidth)
}

/// Linear-interpolation percentile (`q` in `[0, 1]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const MIN_BANDWIDTH: f64 = 1e-3;

/// Silverman's rule `0.9 min(s, IQR/1.34) n^(-1/5)`, floored.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let s = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25);
    (0.9 * s.min(iqr / 1.34) * (n as f64).powf(-0.2)).max(MIN_BANDWIDTH)
}

/// `w_i = raw_i · n / Σ raw` with `raw_i = 1 / max(p_i, ε)`.
pub fn density_weights(densities: &[f64], epsilon: f64) -> Vec<f64> {
    assert!(epsilon > 0.0);
    let raw: Vec<f64> = densities.iter().map(|&p| 1.0 / p.max(epsilon)).collect();
    let total: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    raw.into_iter().map(|r| r * n / total).collect()
}

pub const EPSILON_PERCENTILE: f64 = 0.05;

/// Inverse-density weighting for one head, fitted on normalized labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub labels: Vec<f64>,
    pub bandwidth: f64,
    pub epsilon: f64,
    /// `n / Σ raw`, so cached training weights average to one.
    pub normalizer: f64,
    pub weights: Vec<f64>,
}

impl DensityModel {
    pub fn fit(labels: &[f64]) -> DensityModel {
        assert!(!labels.is_empty(), "density model needs at least one label");
        let bandwidth = silverman_bandwidth(labels);
        let densities: Vec<f64> = labels.iter().map(|&y| kde_density(labels, bandwidth, y)).collect();
        let epsilon = percentile(&densities, EPSILON_PERCENTILE);
        let raw_total: f64 = densities.iter().map(|p| 1.0 / p.max(epsilon)).sum();
        let normalizer = labels.len() as f64 / raw_total;
        DensityModel {
            labels: labels.to_vec(),
            bandwidth,
            epsilon,
            normalizer,
            weights: density_weights(&densities, epsilon),
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        kde_density(&self.labels, self.bandwidth, y)
    }

    /// Weight of an arbitrary normalized label on the training scale.
    pub fn weight_for(&self, y: f64) -> f64 {
        self.normalizer / self.density(y).max(self.epsilon)
    }
}

/// `(1/N) Σ w_i (ŷ_i − y_i)²`, or `None` when the head has no valid sample.
pub fn task_loss(pred: &[f64], target: &[f64], weights: &[f64]) -> Option<f64> {
    assert!(pred.len() == target.len() && pred.len() == weights.len());
    if pred.is_empty() {
        return None;
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((p, y), w)| w * (p - y) * (p - y))
        .sum();
    Some(sum / pred.len() as f64)
}

/// `Σ_t [L_t e^{-ρ_t}/2 + ρ_t/2]` over heads present in the batch, where
/// `ρ_t = log σ_t²` so that the terms equal `L_t/(2σ_t²) + log σ_t`.
pub fn total_loss(task_losses: &[Option<f64>], rho: &[f64]) -> f64 {
    assert_eq!(task_losses.len(), rho.len());
    task_losses
        .iter()
        .zip(rho)
        .filter_map(|(l, &r)| l.map(|l| 0.5 * l * (-r).exp() + 0.5 * r))
        .sum()
}

/// `∂ total / ∂ρ_t` for a present head.
pub fn rho_gradient(task_loss: f64, rho: f64) -> f64 {
    -0.5 * task_loss * (-rho).exp() + 0.5
}

pub fn sigma(rho: f64) -> f64 {
    (0.5 * rho).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels_for(name: &str, ys: &[f64]) -> (Vec<Vec<f64>>, HeadId) {
        let reg = Registry::builtin();
        let h = reg.by_name(name).unwrap().head_id;
        let mut all = vec![Vec::new(); NUM_HEADS];
        all[h.index()] = ys.to_vec();
        (all, h)
    }

    #[test]
    fn linear_and_log_fit_examples() {
        let reg = Registry::builtin();
        let (labels, h) = labels_for("tg", &[0.0, 2.0]);
        let tf = fit_transform(&labels, reg).unwrap();
        let ht = tf.head(h).unwrap();
        assert_eq!((ht.mean, ht.std), (1.0, 1.0));
        assert_eq!(ht.normalize(0.0), -1.0);

        let (labels, h) = labels_for("youngs_modulus", &[10.0, 1000.0]);
        let tf = fit_transform(&labels, reg).unwrap();
        let ht = tf.head(h).unwrap();
        assert!((ht.mean - 2.0).abs() < 1e-15 && (ht.std - 1.0).abs() < 1e-15);
        assert!(ht.normalize(100.0).abs() < 1e-15);

        let (labels, h) = labels_for("youngs_modulus", &[10.0, 1000.0, -5.0, 0.0]);
        let tf = fit_transform(&labels, reg).unwrap();
        assert_eq!(tf.dropped[h.index()], 2);
        assert_eq!(tf.active_heads().collect::<Vec<_>>(), vec![h]);
    }

    #[test]
    fn degenerate_heads_are_rejected() {
        let reg = Registry::builtin();
        for ys in [vec![5.0], vec![3.0, 3.0, 3.0], vec![-1.0, 10.0]] {
            let (labels, _) = labels_for("viscosity", &ys);
            assert!(matches!(fit_transform(&labels, reg), Err(Error::DegenerateHead { .. })), "{ys:?}");
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trips(y in 1e-12f64..1e12, mean in -3.0f64..3.0, std in 0.1f64..5.0, log in any::<bool>()) {
            let t = HeadTransform { log_space: log, mean, std };
            let y = if log { y } else { y - 5e11 };
            let back = t.denormalize(t.normalize(y));
            prop_assert!((back - y).abs() <= 1e-9 * y.abs().max(1.0));
        }

        #[test]
        fn log_denormalization_is_positive(z in -50.0f64..50.0) {
            let t = HeadTransform { log_space: true, mean: 0.0, std: 3.0 };
            prop_assert!(t.denormalize(z) > 0.0);
        }
    }

    #[test]
    fn kde_examples() {
        let h = 0.7;
        assert!((kde_density(&[0.0], h, 0.0) - 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-15);
        let a = 1.3;
        let sym = kde_density(&[-a, a], h, 0.0);
        let single = kde_density(&[a], h, 0.0);
        assert!((sym - single).abs() < 1e-15);
    }

    fn brute_force_density(train: &[f64], h: f64, y: f64) -> f64 {
        let mut acc = 0.0;
        for &t in train {
            let u = (y - t) / h;
            acc += (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        }
        acc / (train.len() as f64 * h)
    }

    #[test]
    fn kde_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let train: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let h = rng.random_range(0.05..2.0);
            let y = rng.random_range(-4.0..4.0);
            let a = kde_density(&train, h, y);
            let b = brute_force_density(&train, h, y);
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(density_weights(&[0.3, 0.3, 0.3], 0.1), vec![1.0, 1.0, 1.0]);
        let w = density_weights(&[1.0, 0.25], 0.1);
        assert!((w[0] - 0.4).abs() < 1e-15 && (w[1] - 1.6).abs() < 1e-15, "{w:?}");
        // Clamped: raw (1, 10) rather than (1, 100).
        let w = density_weights(&[1.0, 0.01], 0.1);
        assert!((w[0] - 2.0 / 11.0).abs() < 1e-15 && (w[1] - 20.0 / 11.0).abs() < 1e-15);
    }

    fn skewed(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (rng.random::<f64>() * 2.0).exp() - 1.0).collect()
    }

    #[test]
    fn density_model_contracts() {
        for seed in 0..20 {
            let ys = skewed(seed, 50 + 37 * seed as usize);
            let m = DensityModel::fit(&ys);
            let n = ys.len() as f64;
            let mean = m.weights.iter().sum::<f64>() / n;
            assert!((mean - 1.0).abs() <= 1e-9);
            assert!(m.weights.iter().all(|&w| w > 0.0));
            let below = ys.iter().filter(|&&y| m.density(y) < m.epsilon).count() as f64;
            assert!(below / n <= 0.05 + 1.0 / n);
            for (y, w) in ys.iter().zip(&m.weights) {
                assert!((m.weight_for(*y) - w).abs() <= 1e-12 * w);
            }
        }
    }

    #[test]
    fn raising_epsilon_never_widens_weight_spread() {
        let ys = skewed(99, 300);
        let h = silverman_bandwidth(&ys);
        let p: Vec<f64> = ys.iter().map(|&y| kde_density(&ys, h, y)).collect();
        let spread = |eps: f64| {
            let w = density_weights(&p, eps);
            let max = w.iter().copied().fold(f64::MIN, f64::max);
            let min = w.iter().copied().fold(f64::MAX, f64::min);
            max / min
        };
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let eps = 1e-4 * 1.3f64.powi(k);
            let s = spread(eps);
            assert!(s <= prev * (1.0 + 1e-12));
            prev = s;
        }
    }

    #[test]
    fn task_loss_examples() {
        assert_eq!(task_loss(&[1.0, 2.0], &[1.0, 2.0], &[0.3, 1.7]), Some(0.0));
        assert_eq!(task_loss(&[1.0, 3.0], &[0.0, 0.0], &[1.0, 1.0]), Some(5.0));
        let l = task_loss(&[1.0, 0.0], &[0.0, 0.0], &[0.4, 1.6]).unwrap();
        assert!((l - 0.2).abs() < 1e-15);
        assert_eq!(task_loss(&[], &[], &[]), None);
    }

    #[test]
    fn total_loss_examples() {
        let l = [Some(1.0), Some(3.0), None];
        assert_eq!(total_loss(&l, &[0.0, 0.0, 5.0]), 2.0);
        let two = total_loss(&[Some(1.0), Some(4.0)], &[0.0, 4f64.ln()]);
        assert!((two - (1.0 + 2f64.ln())).abs() < 1e-15);
        assert_eq!(rho_gradient(1.0, 0.0), 0.0);
        // Stationary in σ at σ² = L for the log σ form.
        let big_l = 2.7f64;
        let f = |s: f64| big_l / (2.0 * s * s) + s.ln();
        let s = big_l.sqrt();
        let fd = (f(s + 1e-6) - f(s - 1e-6)) / 2e-6;
        assert!(fd.abs() < 1e-8);
    }
}
