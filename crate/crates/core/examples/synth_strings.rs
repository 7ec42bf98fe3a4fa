//! Composes numeral strings from the bundled digits and writes them as a
//! dataset directory.
//!
//! cargo run --example synth_strings -- [out_dir] [count]

use std::path::PathBuf;

use numstr::data::{generate_dataset, load_dataset, save_dataset, DigitSet, SynthConfig};

fn main() -> numstr::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("numstr-synth"), PathBuf::from);
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(20);

    let source = DigitSet::bundled()?;
    let cfg = SynthConfig {
        count,
        min_len: 2,
        max_len: 5,
        seed: 42,
        ..SynthConfig::default()
    };
    let (train, val, test) = generate_dataset(&cfg, &source)?;
    for ds in [&train, &val, &test] {
        save_dataset(ds, &out.join(ds.split.as_str()))?;
    }
    println!("{} / {} / {} samples under {}", train.len(), val.len(), test.len(), out.display());

    for s in train.samples.iter().take(5) {
        let boxes: Vec<String> = s
            .annotations()
            .iter()
            .map(|a| format!("{}:[{}..{}]", a.class, a.bbox.x_min(), a.bbox.x_max()))
            .collect();
        println!("{:>6}  {}x{}  {}", s.label(), s.image().width(), s.image().height(), boxes.join(" "));
    }

    let back = load_dataset(&out.join("train"))?;
    assert_eq!(back, train);
    Ok(())
}
