//! Density-based loss weights on a long-tailed label sample.

use polylm::objective::{task_loss, DensityModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dist = LogNormal::new(0.0, 0.6).expect("valid lognormal");
    let labels: Vec<f64> = (0..2000).map(|_| dist.sample(&mut rng)).collect();
    let model = DensityModel::fit(&labels);
    println!("bandwidth {:.4}, density floor {:.4}", model.bandwidth, model.epsilon);

    let mean = model.weights.iter().sum::<f64>() / model.weights.len() as f64;
    let clamped = labels.iter().filter(|&&y| model.density(y) <= model.epsilon).count();
    println!("mean weight {mean:.12}, clamped {clamped}/{}", labels.len());

    let mut sorted = labels.clone();
    sorted.sort_by(f64::total_cmp);
    for q in [0.01, 0.25, 0.5, 0.75, 0.95, 0.99] {
        let y = sorted[((sorted.len() - 1) as f64 * q) as usize];
        println!("q{:<4} y={y:>7.3}  p(y)={:.4}  w={:.3}", q, model.density(y), model.weight_for(y));
    }

    // Same residuals, uniform vs density weights: the tail counts for more.
    let preds: Vec<f64> = vec![1.0; labels.len()];
    let uniform = vec![1.0; labels.len()];
    println!(
        "loss against a constant 1.0: uniform {:.4}, weighted {:.4}",
        task_loss(&preds, &labels, &uniform).unwrap(),
        task_loss(&preds, &labels, &model.weights).unwrap()
    );
}
