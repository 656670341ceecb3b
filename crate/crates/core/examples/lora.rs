//! The low-rank adapter: zero-initialized B leaves the frozen projection
//! untouched, and freezing the embedding table keeps the trainable share
//! of parameters small.

use polylm::encoder::{tokenize, EncoderFreeze};
use polylm::model::{Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::init(ModelConfig::default(), &mut rng);
    let enc = &model.encoder;
    let tokens = tokenize("[Sample] PLA film [Synthesis] annealed at [MASKED] °C");
    let h = enc.embed(&tokens);
    let adapted = enc.lora_project(&h);
    let frozen: Vec<Vec<f64>> = (0..h.rows).map(|i| enc.project_row(h.row(i))).collect();
    let identical = (0..h.rows).all(|i| adapted.row(i) == frozen[i].as_slice());
    println!("{} tokens; adapted == frozen projection with B = 0: {identical}", tokens.len());

    for (name, freeze) in [
        ("all encoder tensors trainable", EncoderFreeze::default()),
        (
            "frozen embeddings",
            EncoderFreeze {
                embedding: true,
                ..EncoderFreeze::default()
            },
        ),
    ] {
        let (trainable, total) = model.parameter_counts(&freeze);
        println!(
            "{name:<32} {trainable:>9} / {total} trainable ({:.3}%)",
            100.0 * model.trainable_fraction(&freeze)
        );
    }

    for t in model.tensors_mut() {
        if t.name == "encoder.lora_b" {
            t.data.iter_mut().for_each(|v| *v = 0.01);
        }
    }
    let moved = model.encoder.lora_project(&h);
    let shift = (0..h.rows)
        .flat_map(|i| moved.row(i).iter().zip(&frozen[i]).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    println!("after setting B = 0.01 the projection shifts by up to {shift:.4}");
}
