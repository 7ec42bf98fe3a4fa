//! Trains a detector on synthetic two- and three-digit strings and saves the
//! checkpoint.
//!
//! cargo run --release --example train_detector -- [count] [model_path]

use std::path::PathBuf;
use std::time::Instant;

use numstr::anchors::kmeans_anchors;
use numstr::data::{generate_dataset, DigitSet, SynthConfig};
use numstr::detector::{train, validate_split, TrainConfig};
use numstr::inference::{reference_box_dims, Thresholds};

fn main() -> numstr::Result<()> {
    let mut args = std::env::args().skip(1);
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(4000);
    let path = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("numstr-model.nsrm"), PathBuf::from);

    let synth = SynthConfig {
        count,
        min_len: 2,
        max_len: 3,
        seed: 0,
        ..SynthConfig::default()
    };
    let (tr, va, te) = generate_dataset(&synth, &DigitSet::bundled()?)?;
    let (anchors, miou) = kmeans_anchors(&reference_box_dims(&tr.samples)?, 3, 0)?;
    println!("{} training strings, anchor mean IoU {miou:.3}", tr.len());

    let cfg = TrainConfig {
        epochs_max: 12,
        ..TrainConfig::desk()
    };
    let start = Instant::now();
    let (model, history) = train(&tr.samples, &va.samples, &anchors, &cfg)?;
    for e in &history.epochs {
        println!(
            "epoch {:>2}  lr {:.5}  train {:.3}  val loss {:.3}  val acc {:.1}%",
            e.epoch,
            e.learning_rate,
            e.train_loss,
            e.val_loss,
            100.0 * e.val_accuracy
        );
    }
    println!("best epoch {} after {:.0}s", history.best_epoch, start.elapsed().as_secs_f64());

    let (acc, _) = validate_split(&model, &te.samples, &Thresholds::default())?;
    println!("test string accuracy {:.1}%", 100.0 * acc);
    model.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
