//! Pull property observations out of a sample-delimited document.
//!
//! ```text
//! cargo run --example extract -- [document]
//! ```
//! Without an argument a small inline document is used.

use polylm::extract::{extract_document, to_canonical, Canonical};
use polylm::quantity::parse_quantity;
use polylm::Registry;

const DOC: &str = "\
== SAMPLE pla-1 ==
Sample: PLA film, 100 µm
Synthesis: annealed 2 h at 80 °C
Tg = 61.5 °C; Tm: 171 °C
tensile strength was 52-58 MPa
Young's modulus = 3.4 GPa
elongation at break: > 5 %
Mw = 1.2 × 10^5 g/mol
The samples were stored in a desiccator.
== END SAMPLE ==
== SAMPLE pcl-1 ==
Sample: PCL foam
Synthesis:
melting point = 333 K
density = 0.91 g/cm3
zero-shear viscosity = 2400 cP
== END SAMPLE ==
";

fn main() -> polylm::Result<()> {
    let reg = Registry::builtin();
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).map_err(|e| polylm::Error::Config(format!("{path}: {e}")))?,
        None => DOC.to_string(),
    };
    let ex = extract_document(&text, reg)?;
    println!("{:<8} {:<8} {:<22} {:<7} {:>14}  stated", "record", "sample", "head", "kind", "canonical");
    for obs in &ex.observations {
        let spec = reg.get(obs.head);
        let canonical = obs
            .canonical_value
            .map_or("-".to_string(), |v| format!("{v:.6} {}", spec.canonical_unit.symbol));
        println!(
            "{:<8} {:<8} {:<22} {:<7} {:>14}  {}",
            obs.record_id,
            obs.sample_id,
            spec.name,
            obs.quantity.kind(),
            canonical,
            &text[obs.source_span.clone()]
        );
    }
    println!(
        "{} samples, {} unmapped labels, {} parse failures",
        ex.samples.len(),
        ex.unmapped,
        ex.parse_failures
    );

    // The quantity grammar on its own.
    let tm = reg.by_name("tm").expect("tm head");
    for s in ["450 K", "150-160 °C", "< 200 °C", "300 °F"] {
        let q = parse_quantity(s)?;
        match to_canonical(&q, tm)? {
            Canonical::Value(v) => println!("{s:>12} -> {v:.2} °C"),
            Canonical::Rejected => println!("{s:>12} -> limit, no label"),
        }
    }
    Ok(())
}
