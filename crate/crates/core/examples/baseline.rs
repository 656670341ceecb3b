//! Score free-text responses from an external model. Only answers that are
//! a single number (with an optional unit) count; everything else lowers
//! retention instead of the metrics.

use polylm::metrics::{r_squared, strict_numeric_parse, Parsed, Space};
use polylm::Registry;

fn main() -> polylm::Result<()> {
    let reg = Registry::builtin();
    let tg = reg.by_name("tg").expect("tg head");
    let responses = [
        ("65 °C", 61.0),
        ("about 60-70 °C", 58.0),
        ("340 K", 70.0),
        ("The Tg is likely near 55 °C or 60 °C", 49.0),
        ("45", 44.0),
        ("unknown", 80.0),
        ("-20 °C", -15.0),
    ];
    let mut targets = Vec::new();
    let mut preds = Vec::new();
    for (text, truth) in responses {
        match strict_numeric_parse(text, tg) {
            Parsed::Value(v) => {
                println!("{text:<40} -> {v:>8.2} °C (truth {truth})");
                targets.push(truth);
                preds.push(v);
            }
            Parsed::Rejected => println!("{text:<40} -> rejected"),
        }
    }
    println!("retention {}/{}", preds.len(), responses.len());
    println!("R2 on kept answers {:.3}", r_squared(&targets, &preds, Space::Linear)?.value);

    // Why zero-shot macro R2 can go far below zero: a confident constant.
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let at_mean = vec![mean; targets.len()];
    let off = vec![mean + 40.0; targets.len()];
    println!(
        "constant at the mean: R2 {:.3}; constant 40 °C off: R2 {:.3}",
        r_squared(&targets, &at_mean, Space::Linear)?.value,
        r_squared(&targets, &off, Space::Linear)?.value
    );
    Ok(())
}
