//! Score the bundled 120-record extraction against its gold annotations.

use std::path::Path;

use polylm::audit::{audit, read_gold};
use polylm::extract::read_observations;
use polylm::Registry;

fn main() -> polylm::Result<()> {
    let reg = Registry::builtin();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/audit");
    let extracted = read_observations(dir.join("extracted.tsv"), reg)?;
    let gold = read_gold(dir.join("gold.tsv"))?;
    let report = audit(&extracted.observations, &gold, reg)?;
    print!("{}", report.to_table().render());
    println!("records with at least one wrong field: {}", report.erroneous_records.join(" "));
    Ok(())
}
