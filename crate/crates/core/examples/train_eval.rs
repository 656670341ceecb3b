//! End to end: synthetic corpus, extraction, masked dataset, training,
//! evaluation and a checkpoint round trip.
//!
//! ```text
//! cargo run --release --example train_eval -- [epochs]
//! ```

use polylm::experiments::corpus_dataset;
use polylm::metrics::evaluate;
use polylm::prompt::{Split, Variant};
use polylm::synth::SynthConfig;
use polylm::trainer::{Checkpoint, TrainConfig, Trainer};
use polylm::Registry;

fn main() -> polylm::Result<()> {
    let reg = Registry::builtin();
    let epochs = std::env::args().nth(1).map_or(15, |e| e.parse().expect("epochs"));
    let synth = SynthConfig {
        documents: 1500,
        noise: 0.15,
        ..SynthConfig::default()
    };
    let ds = corpus_dataset(&synth, Variant::SampleSynthesis, 0, reg)?;
    println!(
        "{} prompts, {} held out",
        ds.instances.len(),
        ds.split(Split::Test).count()
    );

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let out = Trainer::new(cfg, reg).train(&ds)?;
    for e in &out.trace {
        println!("epoch {:>3}  loss {:+.4}", e.epoch, e.loss);
    }

    let report = evaluate(&out.checkpoint, &ds, Split::Test, reg);
    println!("\n{:<24} {:>5} {:>8} {:>8}", "head", "n", "R2", "sigma");
    for h in &report.heads {
        println!(
            "{:<24} {:>5} {:>8.3} {:>8.3}",
            h.head,
            h.n,
            h.primary_r2().unwrap_or(f64::NAN),
            h.sigma.unwrap_or(f64::NAN)
        );
    }
    println!("macro primary R2 {:.3}", report.macro_primary_r2.unwrap_or(f64::NAN));

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.ckpt");
    out.checkpoint.save(&path)?;
    let restored = Checkpoint::load(&path)?;
    let text = &ds.instances[0].text;
    assert_eq!(restored.predict(text), out.checkpoint.predict(text));
    println!("checkpoint round trip ok ({} bytes)", std::fs::metadata(&path).map_or(0, |m| m.len()));
    Ok(())
}
