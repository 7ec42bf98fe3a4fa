//! Reads numeral strings with a saved detector and writes box overlays.
//!
//! cargo run --release --example read_strings -- <model> [count] [overlay_dir]
//!
//! Train a model first, e.g. with the `train_detector` example.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use numstr::data::{generate_split, DigitSet, Split, SynthConfig};
use numstr::detector::Detector;
use numstr::inference::{predict_string, render_overlay, Thresholds};

fn main() -> numstr::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(model) = args.next() else {
        eprintln!("usage: read_strings <model> [count] [overlay_dir]");
        std::process::exit(1);
    };
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(10);
    let overlays = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("numstr-overlays"), PathBuf::from);
    std::fs::create_dir_all(&overlays)?;

    let detector = Detector::load(Path::new(&model))?;
    let cfg = SynthConfig {
        min_len: 2,
        max_len: 3,
        seed: 7,
        ..SynthConfig::default()
    };
    let strings = generate_split(&cfg, &DigitSet::bundled()?, Split::Test, count)?;
    let thresholds = Thresholds::default();

    let mut hits = 0;
    for (i, s) in strings.samples.iter().enumerate() {
        let reading = predict_string(&detector, s.image(), &thresholds)?;
        let ok = reading.text == s.label();
        hits += usize::from(ok);
        let digits: Vec<String> = reading
            .detections
            .iter()
            .map(|d| format!("{}@{:.0}..{:.0}:{:.2}", d.class, d.bbox.x_min(), d.bbox.x_max(), d.posterior()))
            .collect();
        println!(
            "{:>4} {:>6} -> {:<6} p={:.3} {} {}",
            i,
            s.label(),
            reading.text,
            reading.probability,
            if ok { "ok " } else { "ERR" },
            digits.join(" ")
        );
        let out = BufWriter::new(File::create(overlays.join(format!("{i:04}.pgm")))?);
        render_overlay(s.image(), &reading).write_pgm(out)?;
    }
    println!("{hits}/{count} read correctly; overlays in {}", overlays.display());
    Ok(())
}
