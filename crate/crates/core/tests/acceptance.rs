//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.
//!
//! The two training-heavy criteria (ablation, noise recovery) run on their
//! own threads while the cheap ones run on the main thread.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use polylm::audit::{audit, read_gold};
use polylm::encoder::{tokenize, EncoderFreeze};
use polylm::experiments::{run_ablation, run_noise_benchmark, AblationConfig, NoiseBenchmarkConfig};
use polylm::extract::{extract_document, read_observations};
use polylm::linalg::Matrix;
use polylm::metrics::{evaluate, r_squared, Space};
use polylm::model::{Example, Model, ModelConfig, TensorKind};
use polylm::objective::{kde_density, rho_gradient, silverman_bandwidth, DensityModel};
use polylm::prompt::{
    build_dataset, leakage_hits, read_dataset, sample_targets, scan_leakage, DatasetOptions, Split, Variant,
};
use polylm::synth::{gen_corpus, SynthConfig};
use polylm::trainer::{TrainConfig, Trainer};
use polylm::{Registry, NUM_HEADS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

// 1 ------------------------------------------------------------------------

fn random_batch(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..20);
            let mut ex = Example {
                buckets: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
                targets: [f64::NAN; NUM_HEADS],
                mask: [false; NUM_HEADS],
                weights: [0.0; NUM_HEADS],
            };
            for t in 0..NUM_HEADS {
                if rng.random_bool(0.4) {
                    ex.mask[t] = true;
                    ex.targets[t] = rng.random_range(-2.5..2.5);
                    ex.weights[t] = rng.random_range(0.2..3.0);
                }
            }
            ex
        })
        .collect()
}

/// Relative error with a denominator floor, so coordinates whose true
/// gradient is (numerically) zero compare on an absolute 1e-10 scale.
const REL_FLOOR: f64 = 1e-6;

fn gradient_check() -> Outcome {
    let freeze = EncoderFreeze::default();
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut model = Model::init(ModelConfig::default(), &mut rng);
        // Leave the zero initialization of B, q and ρ so every path is live.
        for t in model.tensors_mut() {
            if matches!(t.kind, TensorKind::Lora | TensorKind::Query | TensorKind::Rho) {
                t.data.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
            }
        }
        let batch = random_batch(&mut rng, 8, model.encoder.config.vocab_size());
        let used: Vec<usize> = batch.iter().flat_map(|e| e.buckets.iter().copied()).collect();
        let (_, grads) = model.batch_gradient(&batch, &freeze);
        let dim = model.encoder.config.dim;
        let g = grads.tensors();
        let meta: Vec<(String, TensorKind, usize)> =
            model.tensors().iter().map(|t| (t.name.clone(), t.kind, t.data.len())).collect();
        let trainable: Vec<usize> = (0..meta.len()).filter(|&i| meta[i].1.trainable(&freeze)).collect();
        for _ in 0..200 {
            let ti = trainable[rng.random_range(0..trainable.len())];
            let (name, kind, len) = &meta[ti];
            // Embedding rows outside the batch have an exactly zero gradient;
            // sample rows the batch actually reads.
            let i = if *kind == TensorKind::Embedding {
                used[rng.random_range(0..used.len())] * dim + rng.random_range(0..dim)
            } else {
                rng.random_range(0..*len)
            };
            let analytic = g[ti].at(i, dim);
            let h = 1e-4;
            let orig = model.tensors()[ti].data[i];
            model.tensors_mut()[ti].data[i] = orig + h;
            let up = model.batch_loss(&batch).total;
            model.tensors_mut()[ti].data[i] = orig - h;
            let down = model.batch_loss(&batch).total;
            model.tensors_mut()[ti].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(REL_FLOOR);
            checked += 1;
            if err > worst {
                worst = err;
                worst_at = format!("{name}[{i}] seed {seed}: analytic {analytic:.6e}, fd {fd:.6e}");
            }
        }
    }
    check(
        worst <= 1e-4,
        format!("{checked} coordinates, max relative error {worst:.2e} ({worst_at})"),
    )
}

// 2 ------------------------------------------------------------------------

fn rho_stationarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let losses: Vec<f64> = (0..NUM_HEADS).map(|_| 10f64.powf(rng.random_range(-3.0..2.0))).collect();
        let mut rho = vec![0.0; NUM_HEADS];
        for _ in 0..500 {
            for (r, &l) in rho.iter_mut().zip(&losses) {
                *r -= rho_gradient(l, *r);
            }
        }
        for (r, &l) in rho.iter().zip(&losses) {
            worst = worst.max((r.exp() - l).abs() / l);
        }
    }
    check(worst <= 1e-6, format!("max |σ² − L|/L = {worst:.2e} over 10 loss vectors"))
}

// 3 ------------------------------------------------------------------------

fn kde_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_mean = 0.0f64;
    let mut worst_kde = 0.0f64;
    let mut clamp_excess = f64::MIN;
    for _ in 0..100 {
        let n = rng.random_range(2..300);
        let skew = rng.random_range(0.0..1.5);
        let labels: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (skew * z).exp_m1() / skew.max(1e-9) + rng.random_range(-0.1..0.1)
            })
            .collect();
        let m = DensityModel::fit(&labels);
        let mean = m.weights.iter().sum::<f64>() / n as f64;
        worst_mean = worst_mean.max((mean - 1.0).abs());
        let clamped = labels.iter().filter(|&&y| m.density(y) < m.epsilon).count();
        clamp_excess = clamp_excess.max(clamped as f64 / n as f64 - (0.05 + 1.0 / n as f64));

        let h = silverman_bandwidth(&labels);
        let y = rng.random_range(-3.0..6.0);
        let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        let oracle: f64 = labels.iter().map(|&yj| norm * (-(y - yj).powi(2) / (2.0 * h * h)).exp()).sum();
        let got = kde_density(&labels, h, y);
        worst_kde = worst_kde.max((got - oracle).abs() / oracle.max(f64::MIN_POSITIVE));
    }
    check(
        worst_mean <= 1e-9 && clamp_excess <= 0.0 && worst_kde <= 1e-12,
        format!(
            "max |mean w − 1| {worst_mean:.1e}, clamp fraction − (5% + 1/n) ≤ {clamp_excess:.2e}, kde vs sum {worst_kde:.1e}"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn extraction_audit() -> Outcome {
    let reg = Registry::builtin();
    let dir = fixtures().join("audit");
    let ex = read_observations(dir.join("extracted.tsv"), reg).map_err(|e| e.to_string())?;
    let gold = read_gold(dir.join("gold.tsv")).map_err(|e| e.to_string())?;
    let r = audit(&ex.observations, &gold, reg).map_err(|e| e.to_string())?;
    let got = [
        r.sample_association.correct,
        r.property_mapping.correct,
        r.value.correct,
        r.unit.correct,
        r.strict.correct,
    ];
    check(
        r.n == 120 && got == [120, 109, 113, 113, 101] && format!("{:.3}", r.strict_precision()) == "0.842",
        format!(
            "sample {}/120, property {}/120, value {}/120, unit {}/120, strict {}/120 = {:.3}",
            got[0],
            got[1],
            got[2],
            got[3],
            got[4],
            r.strict_precision()
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn ablation() -> Outcome {
    let reg = Registry::builtin();
    let start = Instant::now();
    let mut cfg = AblationConfig::default();
    cfg.synth.gamma = 0.5;
    let with_effect = run_ablation(&cfg, reg).map_err(|e| e.to_string())?;
    cfg.synth.gamma = 0.0;
    let null = run_ablation(&cfg, reg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst_head = with_effect.heads.iter().map(|r| r.delta).fold(f64::MIN, f64::max);
    let deltas_exact = with_effect
        .runs
        .iter()
        .chain(&null.runs)
        .all(|r| r.delta == r.sample_only - r.with_synthesis);
    check(
        with_effect.heads.len() == 8
            && with_effect.mean_delta <= -0.03
            && worst_head <= 0.0
            && null.mean_delta.abs() <= 0.02
            && deltas_exact
            && secs <= 20.0 * 60.0,
        format!(
            "γ=0.5 mean Δ {:+.4} (largest head Δ {:+.4}); γ=0 mean Δ {:+.4}; 3 seeds, {secs:.0}s",
            with_effect.mean_delta, worst_head, null.mean_delta
        ),
    )
}

// 6, 7 --------------------------------------------------------------------

fn uncertainty() -> (Outcome, Outcome) {
    let reg = Registry::builtin();
    let start = Instant::now();
    let bench = match run_noise_benchmark(&NoiseBenchmarkConfig::default(), reg) {
        Ok(b) => b,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let secs = start.elapsed().as_secs_f64();
    let heads = bench.runs[0].report.rows.len();
    let ranking = check(
        bench.mean_spearman_sigma_eta > 0.5 && bench.mean_spearman_sigma_rmse > 0.3,
        format!(
            "Spearman(σ, η) {:.3}, Spearman(σ, RMSE) {:.3}; {heads} heads, η 0.1–1.0, 3 seeds, {secs:.0}s",
            bench.mean_spearman_sigma_eta, bench.mean_spearman_sigma_rmse
        ),
    );
    let calibration = check(
        bench.mean_calibration_ratio > 1.0,
        format!("mean RMSE/σ {:.3}", bench.mean_calibration_ratio),
    );
    (ranking, calibration)
}

// 8 ------------------------------------------------------------------------

fn leakage() -> Outcome {
    let reg = Registry::builtin();
    let mut docs = vec![std::fs::read_to_string(fixtures().join("audit/source.txt")).map_err(|e| e.to_string())?];
    for seed in 0..3 {
        let cfg = SynthConfig {
            seed,
            documents: 1000,
            alt_unit_fraction: 0.6,
            ..SynthConfig::default()
        };
        docs.push(gen_corpus(&cfg, reg).map_err(|e| e.to_string())?.document);
    }
    let mut datasets = 0;
    let mut prompts = 0;
    let mut hits = 0;
    let mut raw_hits = 0;
    for doc in &docs {
        let ex = extract_document(doc, reg).map_err(|e| e.to_string())?;
        let targets = sample_targets(&ex, reg);
        for variant in [Variant::SampleSynthesis, Variant::SampleOnly] {
            let ds = build_dataset(&ex, reg, DatasetOptions { variant, ..DatasetOptions::default() })
                .map_err(|e| e.to_string())?;
            datasets += 1;
            prompts += ds.instances.len();
            hits += leakage_hits(&ds, &targets, reg);
        }
        // The scanner is not vacuous: raw statements do contain the targets.
        for s in &ex.samples {
            let t = targets.get(&s.sample_id).map(Vec::as_slice).unwrap_or(&[]);
            let raw: String = ex
                .observations
                .iter()
                .filter(|o| o.sample_id == s.sample_id)
                .map(|o| &doc[o.source_span.clone()])
                .collect::<Vec<_>>()
                .join(" ");
            raw_hits += scan_leakage(&raw, t, reg).len();
        }
    }
    check(
        hits == 0 && raw_hits > 0,
        format!("{hits} hits in {prompts} prompts over {datasets} datasets (unmasked statements: {raw_hits} hits)"),
    )
}

// 9 ------------------------------------------------------------------------

fn lora() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = Model::init(ModelConfig::default(), &mut rng);
    let enc = &model.encoder;
    let h = enc.embed(&tokenize("[Sample] PLA/PBS blend (75/25 w/w) film annealed at [MASKED] °C"));
    let adapted = enc.lora_project(&h);
    let bitwise = (0..h.rows).all(|t| adapted.row(t) == enc.w0.matvec(h.row(t)).as_slice());

    let frozen = EncoderFreeze {
        embedding: true,
        ..EncoderFreeze::default()
    };
    let fraction = model.trainable_fraction(&frozen);

    let mut enc = enc.clone();
    let d = enc.config.dim;
    enc.lora_b = Matrix::random(d, enc.config.rank, 0.5, &mut rng);
    let mut dense = enc.lora_b.matmul(&enc.lora_a);
    dense.data.iter_mut().for_each(|x| *x *= enc.config.scale());
    dense.data.iter_mut().zip(&enc.w0.data).for_each(|(x, w)| *x += w);
    let x = Matrix::random(16, d, 1.0, &mut rng);
    let lowrank = enc.lora_project(&x);
    let mut worst = 0.0f64;
    for t in 0..x.rows {
        for (a, b) in lowrank.row(t).iter().zip(dense.matvec(x.row(t))) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        bitwise && fraction < 0.02 && worst <= 1e-12,
        format!(
            "B=0 bitwise identical: {bitwise}; trainable fraction {:.3}% with frozen embeddings; low-rank vs dense {worst:.1e}",
            100.0 * fraction
        ),
    )
}

// 10 -----------------------------------------------------------------------

fn determinism() -> Outcome {
    let reg = Registry::builtin();
    let ds = read_dataset(fixtures().join("smoke/dataset.tsv"), reg).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || -> Result<(Vec<u8>, String, String), String> {
        let out = Trainer::new(cfg.clone(), reg).train(&ds).map_err(|e| e.to_string())?;
        let report = evaluate(&out.checkpoint, &ds, Split::Test, reg);
        Ok((
            out.checkpoint.to_bytes().map_err(|e| e.to_string())?,
            report.to_table("x").render(),
            report.to_json(),
        ))
    };
    let a = run()?;
    let b = run()?;
    check(
        a == b,
        format!("two runs: checkpoints {} bytes, identical: {}", a.0.len(), a == b),
    )
}

// 11 -----------------------------------------------------------------------

fn metric_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_zero = 0.0f64;
    let mut max_offset = f64::MIN;
    for _ in 0..200 {
        let n = rng.random_range(2..200);
        let targets: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-2.0..4.0))).collect();
        for space in [Space::Linear, Space::Log10] {
            let tv: Vec<f64> = match space {
                Space::Linear => targets.clone(),
                Space::Log10 => targets.iter().map(|y| y.log10()).collect(),
            };
            let mean = tv.iter().sum::<f64>() / n as f64;
            let c = |v: f64| match space {
                Space::Linear => v,
                Space::Log10 => 10f64.powf(v),
            };
            let at_mean = vec![c(mean); n];
            let off = vec![c(mean + rng.random_range(0.1..3.0)); n];
            let Ok(r0) = r_squared(&targets, &at_mean, space) else { continue };
            let r1 = r_squared(&targets, &off, space).map_err(|e| e.to_string())?;
            worst_zero = worst_zero.max(r0.value.abs());
            max_offset = max_offset.max(r1.value);
        }
    }
    check(
        worst_zero <= 1e-12 && max_offset < 0.0,
        format!("constant mean |R²| ≤ {worst_zero:.1e}; offset constant R² ≤ {max_offset:.2e}"),
    )
}

fn main() -> ExitCode {
    let heavy_ablation = std::thread::spawn(|| timed(ablation));
    let heavy_uncertainty = std::thread::spawn(|| {
        let start = Instant::now();
        let (a, b) = uncertainty();
        (a, b, start.elapsed().as_secs_f64())
    });

    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let cheap: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "gradient correctness", gradient_check),
        (2, "ρ stationarity", rho_stationarity),
        (3, "KDE and weight contracts", kde_contracts),
        (4, "extraction audit", extraction_audit),
        (8, "leakage guard", leakage),
        (9, "LoRA contracts", lora),
        (10, "determinism", determinism),
        (11, "metric sanity", metric_sanity),
    ];
    for (id, name, f) in cheap {
        let (outcome, secs) = timed(f);
        results.push((id, name, outcome, secs));
    }
    let (outcome, secs) = heavy_ablation.join().unwrap_or_else(|_| (Err("panicked".into()), 0.0));
    results.push((5, "ablation directionality", outcome, secs));
    let (ranking, calibration, secs) = heavy_uncertainty
        .join()
        .unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into()), 0.0));
    results.push((6, "uncertainty ranking", ranking, secs));
    results.push((7, "calibration under-dispersion", calibration, secs));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, outcome, secs) in &results {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {id:>2} {name}: {detail} [{secs:.1}s]");
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn timed(f: fn() -> Outcome) -> (Outcome, f64) {
    let start = Instant::now();
    let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
    (out, start.elapsed().as_secs_f64())
}
