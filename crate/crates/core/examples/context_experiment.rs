//! Trains one detector on isolated digits and one on digit strings, then
//! reads the same string test set with both.
//!
//! cargo run --release --example context_experiment -- [count]

use numstr::anchors::kmeans_anchors;
use numstr::data::{generate_dataset, DigitSet, SynthConfig};
use numstr::detector::{train, TrainConfig};
use numstr::eval::evaluate;
use numstr::inference::{reference_box_dims, Thresholds};

fn main() -> numstr::Result<()> {
    let count = std::env::args()
        .nth(1)
        .and_then(|c| c.parse().ok())
        .unwrap_or(3000);
    let source = DigitSet::bundled()?;
    let strings = SynthConfig {
        count,
        min_len: 2,
        max_len: 3,
        seed: 0,
        ..SynthConfig::default()
    };
    let isolated = SynthConfig {
        min_len: 1,
        max_len: 1,
        ..strings.clone()
    };
    let cfg = TrainConfig {
        epochs_max: 10,
        ..TrainConfig::desk()
    };
    let (_, _, test) = generate_dataset(&strings, &source)?;

    let mut accuracy = Vec::new();
    for (name, synth) in [("isolated digits", &isolated), ("strings", &strings)] {
        let (tr, va, _) = generate_dataset(synth, &source)?;
        let (anchors, _) = kmeans_anchors(&reference_box_dims(&tr.samples)?, 3, 0)?;
        let (model, history) = train(&tr.samples, &va.samples, &anchors, &cfg)?;
        let report = evaluate(&model, &test.samples, &Thresholds::default())?;
        println!("trained on {name}, best epoch {}", history.best_epoch);
        println!("{report}");
        accuracy.push(report.overall.accuracy());
    }
    println!(
        "string accuracy {:.1}% vs {:.1}%, gap {:.1} points",
        accuracy[0],
        accuracy[1],
        accuracy[1] - accuracy[0]
    );
    Ok(())
}
