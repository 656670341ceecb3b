use proptest::prelude::*;

use polylm::extract::{extract_document, to_canonical, Canonical};
use polylm::metrics::{r_squared, Space};
use polylm::objective::{sigma, DensityModel};
use polylm::prompt::{assign_split, build_dataset, leakage_hits, sample_targets, DatasetOptions, Split, Variant};
use polylm::quantity::{parse_quantity, Magnitude};
use polylm::synth::{gen_corpus, SynthConfig};
use polylm::Registry;

fn corpus_extraction(seed: u64, documents: usize) -> polylm::extract::Extraction {
    let cfg = SynthConfig {
        seed,
        documents,
        ..SynthConfig::default()
    };
    let corpus = gen_corpus(&cfg, Registry::builtin()).unwrap();
    extract_document(&corpus.document, Registry::builtin()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parsed_ranges_are_ordered(a in 0.0f64..1e4, b in 0.0f64..1e4, unit in prop::sample::select(vec!["MPa", "°C", "%", ""])) {
        let text = format!("{a}-{b} {unit}");
        match parse_quantity(text.trim()) {
            Ok(q) => match q.magnitude {
                Magnitude::Range { lo, hi } => prop_assert!(lo < hi && lo.is_finite() && hi.is_finite()),
                other => prop_assert!(false, "{text} parsed as {other:?}"),
            },
            Err(_) => prop_assert!(a >= b, "{text} rejected"),
        }
    }

    #[test]
    fn points_are_finite(x in -1e9f64..1e9) {
        let q = parse_quantity(&format!("{x} GPa")).unwrap();
        match q.magnitude {
            Magnitude::Point(v) => prop_assert!(v.is_finite()),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn canonical_value_iff_point_or_range(seed in 0u64..40) {
        let reg = Registry::builtin();
        let ex = corpus_extraction(seed, 30);
        prop_assert!(!ex.observations.is_empty());
        for obs in &ex.observations {
            let labelled = !matches!(obs.quantity.magnitude, Magnitude::Limit { .. });
            prop_assert_eq!(obs.canonical_value.is_some(), labelled);
            let direct = to_canonical(&obs.quantity, reg.get(obs.head)).unwrap();
            prop_assert_eq!(matches!(direct, Canonical::Value(_)), labelled);
        }
    }

    #[test]
    fn labels_are_finite_exactly_where_masked(seed in 0u64..40, only in any::<bool>()) {
        let reg = Registry::builtin();
        let ex = corpus_extraction(seed, 30);
        let variant = if only { Variant::SampleOnly } else { Variant::SampleSynthesis };
        let options = DatasetOptions { variant, seed, ..DatasetOptions::default() };
        let ds = build_dataset(&ex, reg, options).unwrap();
        for inst in &ds.instances {
            for (y, m) in inst.labels.iter().zip(&inst.label_mask) {
                prop_assert_eq!(y.is_finite(), *m);
            }
        }
        prop_assert_eq!(leakage_hits(&ds, &sample_targets(&ex, reg), reg), 0);
    }

    #[test]
    fn density_weights_are_positive_with_unit_mean(labels in prop::collection::vec(-4.0f64..4.0, 2..80)) {
        let model = DensityModel::fit(&labels);
        prop_assert!(model.weights.iter().all(|w| *w > 0.0 && w.is_finite()));
        let mean = model.weights.iter().sum::<f64>() / model.weights.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-9, "{mean}");
    }

    #[test]
    fn sigma_is_positive(rho in -1000.0f64..1000.0) {
        let s = sigma(rho);
        prop_assert!(s > 0.0 && !s.is_nan());
    }

    #[test]
    fn r_squared_is_one_only_for_exact_predictions(
        targets in prop::collection::vec(-100.0f64..100.0, 3..30),
        bump in prop::option::of((0usize..30, 1e-3f64..10.0)),
    ) {
        let mut preds = targets.clone();
        if let Some((i, d)) = bump {
            preds[i % targets.len()] += d;
        }
        match r_squared(&targets, &preds, Space::Linear) {
            Ok(r) => {
                prop_assert!(r.value <= 1.0);
                prop_assert_eq!(r.value == 1.0, bump.is_none());
            }
            Err(_) => prop_assert!(targets.iter().all(|t| *t == targets[0])),
        }
    }

    #[test]
    fn split_depends_only_on_id_and_seed(id in "[A-Za-z0-9_-]{1,16}", seed in any::<u64>(), frac in 0.0f64..1.0) {
        let s = assign_split(&id, seed, frac);
        prop_assert_eq!(s, assign_split(&id, seed, frac));
        prop_assert_eq!(assign_split(&id, seed, 0.0), Split::Train);
        prop_assert_eq!(assign_split(&id, seed, 1.0), Split::Test);
        // Growing the test fraction only moves samples into the test split.
        if s == Split::Test {
            prop_assert_eq!(assign_split(&id, seed, (frac + 0.1).min(1.0)), Split::Test);
        }
    }
}

#[test]
fn both_variants_share_samples_and_splits() {
    let reg = Registry::builtin();
    let ex = corpus_extraction(9, 120);
    let build = |variant| {
        build_dataset(&ex, reg, DatasetOptions { variant, ..DatasetOptions::default() }).unwrap()
    };
    let full = build(Variant::SampleSynthesis);
    let only = build(Variant::SampleOnly);
    assert_eq!(full.instances.len(), only.instances.len());
    assert_eq!(full.test_id_digest(), only.test_id_digest());
    for (a, b) in full.instances.iter().zip(&only.instances) {
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.split, b.split);
        assert!(a.text.starts_with(&b.text));
        assert_eq!(a.label_mask, b.label_mask);
    }
}
