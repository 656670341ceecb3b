//! Generate a synthetic corpus with known labels and look at what came out.
//!
//! ```text
//! cargo run --example gen_corpus -- [out.txt]
//! ```

use polylm::extract::extract_document;
use polylm::synth::{gen_corpus, skewness, write_corpus, Reported, SynthConfig};
use polylm::Registry;

fn main() -> polylm::Result<()> {
    let reg = Registry::builtin();
    let cfg = SynthConfig {
        documents: 500,
        seed: 42,
        ..SynthConfig::default()
    };
    let corpus = gen_corpus(&cfg, reg)?;
    for line in corpus.document.lines().take(12) {
        println!("{line}");
    }

    let count = |kind| corpus.truth.iter().filter(|t| t.reported == kind).count();
    let ex = extract_document(&corpus.document, reg)?;
    println!(
        "\n{} truth records ({} points, {} ranges, {} limits), {} extracted, {} parse failures",
        corpus.truth.len(),
        count(Reported::Point),
        count(Reported::Range),
        count(Reported::Limit),
        ex.observations.len(),
        ex.parse_failures
    );
    for spec in reg.specs().iter().take(6) {
        let values: Vec<f64> = corpus
            .truth
            .iter()
            .filter(|t| t.head == spec.head_id)
            .map(|t| if spec.log_space { t.value.log10() } else { t.value })
            .collect();
        println!("{:<20} n={:<4} skewness {:+.2}", spec.name, values.len(), skewness(&values));
    }

    if let Some(path) = std::env::args().nth(1) {
        write_corpus(&corpus, &cfg, reg, &path)?;
        println!("wrote {path} and its truth table");
    }
    Ok(())
}
