//! Trains `sample_synthesis` and `sample_only` models on a synthetic corpus
//! and prints the per-head change in primary R².
//!
//! `cargo run --release --example ablation -- [gamma] [seeds] [epochs]`

use std::time::Instant;

use polylm::experiments::{run_ablation, AblationConfig};
use polylm::Registry;

fn main() -> polylm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let mut cfg = AblationConfig::default();
    if let Some(g) = arg(0) {
        cfg.synth.gamma = g.parse().expect("gamma");
    }
    if let Some(n) = arg(1) {
        cfg.seeds = (0..n.parse().expect("seed count")).collect();
    }
    if let Some(e) = arg(2) {
        cfg.train.epochs = e.parse().expect("epochs");
    }
    let start = Instant::now();
    let report = run_ablation(&cfg, Registry::builtin())?;
    println!("{:<22} {:>6} {:>9} {:>9} {:>8}", "head", "n", "with", "without", "delta");
    for r in &report.heads {
        println!(
            "{:<22} {:>6} {:>9.4} {:>9.4} {:>8.4}",
            r.head, r.n, r.with_synthesis, r.sample_only, r.delta
        );
    }
    println!("mean delta {:.4} ({:.1?})", report.mean_delta, start.elapsed());
    Ok(())
}
