//! Per-length accuracy and error attribution for a saved detector.
//!
//! cargo run --release --example evaluate_model -- <model> [count]

use std::path::Path;

use numstr::data::{generate_split, DigitSet, Split, SynthConfig};
use numstr::detector::Detector;
use numstr::eval::evaluate;
use numstr::inference::Thresholds;

fn main() -> numstr::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(model) = args.next() else {
        eprintln!("usage: evaluate_model <model> [count]");
        std::process::exit(1);
    };
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(600);
    let detector = Detector::load(Path::new(&model))?;

    let cfg = SynthConfig {
        min_len: 2,
        max_len: 3,
        seed: 3,
        ..SynthConfig::default()
    };
    let test = generate_split(&cfg, &DigitSet::bundled()?, Split::Test, count)?;
    let report = evaluate(&detector, &test.samples, &Thresholds::default())?;
    println!("{report}");
    print!("{}", report.to_tsv());
    Ok(())
}
