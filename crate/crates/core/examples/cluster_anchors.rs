//! k-means anchors over ground-truth boxes measured at the test-time input
//! size, for k = 1..=5.
//!
//! cargo run --example cluster_anchors

use numstr::anchors::cluster_anchors;
use numstr::data::{generate_dataset, DigitSet, SynthConfig};
use numstr::inference::reference_box_dims;

fn main() -> numstr::Result<()> {
    let cfg = SynthConfig {
        count: 2000,
        min_len: 2,
        max_len: 6,
        seed: 1,
        ..SynthConfig::default()
    };
    let (train, _, _) = generate_dataset(&cfg, &DigitSet::bundled()?)?;
    let dims = reference_box_dims(&train.samples)?;
    println!("{} boxes", dims.len());
    for k in 1..=5 {
        let c = cluster_anchors(&dims, k, 0)?;
        let shapes: Vec<String> = c
            .anchors
            .iter()
            .map(|a| format!("{:.1}x{:.1}", a.width, a.height))
            .collect();
        println!("k={k}  mean IoU {:.3}  ({} iterations)  {}", c.mean_iou, c.iterations, shapes.join(" "));
    }
    Ok(())
}
