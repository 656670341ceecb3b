//! Build masked prompts and both ablation variants from extracted records.

use polylm::extract::extract_document;
use polylm::prompt::{build_dataset, build_prompt, leakage_hits, sample_targets, DatasetOptions, Split, Variant};
use polylm::Registry;

const DOC: &str = "\
== SAMPLE s1 ==
Sample: PLA film whose Tg of 61 °C (334 K) was measured by DSC
Synthesis: annealed at 80 °C for 2 h, then tested at 23 °C
Tg = 61 °C
tensile strength = 55 MPa
== END SAMPLE ==
== SAMPLE s2 ==
Sample: PBS bar with 0.05 GPa strength
Synthesis:
tensile strength = 50 MPa
== END SAMPLE ==
";

fn main() -> polylm::Result<()> {
    let reg = Registry::builtin();
    println!("{}\n", build_prompt("PLA film", "annealed 2 h at 80 °C", Variant::SampleSynthesis)?);
    println!("{}\n", build_prompt("PLA film", "annealed 2 h at 80 °C", Variant::SampleOnly)?);

    let ex = extract_document(DOC, reg)?;
    for variant in [Variant::SampleSynthesis, Variant::SampleOnly] {
        let ds = build_dataset(
            &ex,
            reg,
            DatasetOptions {
                variant,
                test_fraction: 0.5,
                ..DatasetOptions::default()
            },
        )?;
        println!("--- {variant}");
        for inst in &ds.instances {
            let labels: Vec<String> = reg
                .specs()
                .iter()
                .filter(|s| inst.label_mask[s.head_id.index()])
                .map(|s| format!("{}={}", s.name, inst.labels[s.head_id.index()]))
                .collect();
            println!("[{}] {} ({})\n{}\n", inst.split.as_str(), inst.sample_id, labels.join(", "), inst.text);
        }
        let hits = leakage_hits(&ds, &sample_targets(&ex, reg), reg);
        println!(
            "train {} / test {}; leakage hits {hits}\n",
            ds.split(Split::Train).count(),
            ds.split(Split::Test).count()
        );
    }
    Ok(())
}
