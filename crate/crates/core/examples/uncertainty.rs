//! Injects per-head noise spanning 10x, trains on every head, and checks
//! whether the learned task uncertainties recover the noise ordering.
//!
//! ```text
//! cargo run --release --example uncertainty -- [seeds] [epochs] [documents]
//! ```

use std::time::Instant;

use polylm::experiments::{run_noise_benchmark, NoiseBenchmarkConfig};
use polylm::Registry;

fn main() -> polylm::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = NoiseBenchmarkConfig::default();
    if let Some(n) = args.next() {
        cfg.seeds = (0..n.parse().expect("seed count")).collect();
    }
    if let Some(e) = args.next() {
        cfg.train.epochs = e.parse().expect("epochs");
    }
    if let Some(d) = args.next() {
        cfg.synth.documents = d.parse().expect("documents");
    }
    let start = Instant::now();
    let bench = run_noise_benchmark(&cfg, Registry::builtin())?;
    for (seed, run) in cfg.seeds.iter().zip(&bench.runs) {
        println!("seed {seed}");
        println!("  {:<26} {:>6} {:>8} {:>8}", "head", "eta", "sigma", "rmse");
        for (row, eta) in run.report.rows.iter().zip(&run.eta) {
            println!("  {:<26} {:>6.3} {:>8.4} {:>8.4}", row.head, eta, row.sigma, row.rmse);
        }
        println!(
            "  spearman(sigma, eta) {:.3}  spearman(sigma, rmse) {:.3}  rmse/sigma {:.3}",
            run.spearman_sigma_eta.unwrap_or(f64::NAN),
            run.report.spearman.unwrap_or(f64::NAN),
            run.report.calibration_ratio
        );
    }
    println!(
        "mean spearman(sigma, eta) {:.3}, spearman(sigma, rmse) {:.3}, rmse/sigma {:.3} ({:.1}s)",
        bench.mean_spearman_sigma_eta,
        bench.mean_spearman_sigma_rmse,
        bench.mean_calibration_ratio,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
