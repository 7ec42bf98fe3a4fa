//! Command-line front end: `synth`, `anchors`, `train`, `predict`, `eval` and
//! `context-exp`.
//!
//! Settings come from built-in defaults, then an optional `--config` file of
//! `key=value` lines, then flags. A `preset=desk` line swaps in
//! [`TrainConfig::desk`] before the lines after it apply. Exit codes: 0 success, 1 usage, 2 data or
//! format problems, 3 training or numeric failures. `NUMSTR_THREADS` caps the
//! worker pool.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::anchors::{cluster_anchors, format_anchors, parse_anchors, Anchor, DEFAULT_K};
use crate::data::{
    generate_dataset, generate_split, load_dataset, save_dataset, DigitSet, Split, SynthConfig,
};
use crate::detector::{train, Detector, History, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::inference::{predict_string, reference_box_dims, render_overlay, Thresholds};
use crate::raster::GrayImage;
use crate::StringSample;

#[derive(Debug, Parser)]
#[command(name = "numstr", version, about = "Handwritten numeral strings read by a grid digit detector")]
struct Cli {
    /// File of `key=value` settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize numeral strings from isolated digits.
    Synth(SynthArgs),
    /// Cluster ground-truth box shapes into anchors.
    Anchors(AnchorArgs),
    /// Train a detector.
    Train(TrainArgs),
    /// Read the numeral string in one or more images.
    Predict(PredictArgs),
    /// Accuracy and error attribution per string length.
    Eval(EvalArgs),
    /// Compare a model trained on isolated digits with one trained on strings.
    ContextExp(ContextArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// IDX image archive of isolated digits (the bundled set when omitted).
    #[arg(long, requires = "digits_labels")]
    digits_images: Option<PathBuf>,
    #[arg(long, requires = "digits_images")]
    digits_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    gap_min: Option<i32>,
    #[arg(long, allow_hyphen_values = true)]
    gap_max: Option<i32>,
    #[arg(long)]
    border: Option<usize>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write `count` samples of this split straight into `--out` instead of
    /// `train/`, `val/` and `test/` subdirectories.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Debug, Args)]
struct AnchorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the anchors to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated `HxW` input sizes, e.g. `96x128,128x160`.
    #[arg(long)]
    scales: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct ThresholdFlags {
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long)]
    nms: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    image: Vec<PathBuf>,
    /// PGM with the detected boxes drawn in (single image only).
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[command(flatten)]
    thresholds: ThresholdFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report as TSV.
    #[arg(long)]
    tsv: Option<PathBuf>,
    #[command(flatten)]
    thresholds: ThresholdFlags,
}

#[derive(Debug, Args)]
struct ContextArgs {
    /// Dataset root of single-digit samples with `train/` and `val/`.
    #[arg(long)]
    isolated: PathBuf,
    /// Dataset root of strings with `train/`, `val/` and `test/`.
    #[arg(long)]
    strings: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[command(flatten)]
    flags: TrainFlags,
}

/// Defaults overlaid with the config file.
#[derive(Debug, Clone, Default)]
struct RunConfig {
    synth: SynthConfig,
    train: TrainConfig,
    thresholds: Thresholds,
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        match key {
            "confidence" => self.thresholds.confidence = value.parse().map_err(|_| bad())?,
            "nms_iou" => self.thresholds.nms_iou = value.parse().map_err(|_| bad())?,
            "preset" => {
                let seed = self.train.seed;
                self.train = match value {
                    "desk" => TrainConfig::desk(),
                    "default" => TrainConfig::default(),
                    _ => return Err(bad()),
                };
                self.train.seed = seed;
            }
            "seed" => {
                self.synth.set(key, value)?;
                self.train.set(key, value)?;
            }
            _ => {
                if !self.synth.set(key, value)? {
                    self.train.set(key, value)?;
                }
            }
        }
        Ok(())
    }

    fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        let Some(path) = path else { return Ok(cfg) };
        require_file(path)?;
        let text = fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(p.to_path_buf()))
    }
}

fn require_dataset(p: &Path) -> Result<()> {
    require_file(&p.join(crate::data::ANNOTATIONS_FILE))
}

/// The parent directory of an output file must already exist.
fn require_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(Error::MissingFile(d.to_path_buf())),
        _ => Ok(()),
    }
}

fn apply_train_flags(cfg: &mut TrainConfig, f: &TrainFlags) -> Result<()> {
    if let Some(v) = f.epochs {
        cfg.epochs_max = v;
    }
    if let Some(v) = f.patience {
        cfg.patience = v;
    }
    if let Some(v) = f.seed {
        cfg.seed = v;
    }
    if let Some(v) = f.learning_rate {
        cfg.sgd.learning_rate = v;
        cfg.sgd.final_rate = cfg.sgd.final_rate.min(v);
    }
    if let Some(v) = f.batch_size {
        cfg.sgd.batch_size = v;
    }
    if let Some(v) = &f.scales {
        cfg.set("scales", v)?;
    }
    cfg.validate()
}

fn apply_thresholds(t: &mut Thresholds, f: &ThresholdFlags) -> Result<()> {
    if let Some(v) = f.conf {
        t.confidence = v;
    }
    if let Some(v) = f.nms {
        t.nms_iou = v;
    }
    t.validate()
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Argument(_) | Error::Config(_) => 1,
        Error::Diverged { .. } | Error::Numeric(_) => 3,
        _ => 2,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match std::env::var("NUMSTR_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("error: NUMSTR_THREADS must be a positive integer, got {v:?}");
                return 1;
            }
        },
        Err(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli, &mut std::io::stdout().lock())) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => synth_cmd(cfg, a, out),
        Command::Anchors(a) => anchors_cmd(a, out),
        Command::Train(a) => train_cmd(cfg, a, out),
        Command::Predict(a) => predict_cmd(cfg, a, out),
        Command::Eval(a) => eval_cmd(cfg, a, out),
        Command::ContextExp(a) => context_cmd(cfg, a, out),
    }
}

fn synth_cmd(mut cfg: RunConfig, a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let s = &mut cfg.synth;
    if let Some(v) = a.count {
        s.count = v;
    }
    if let Some(v) = a.min_len {
        s.min_len = v;
    }
    if let Some(v) = a.max_len {
        s.max_len = v;
    }
    if let Some(v) = a.gap_min {
        s.gap_min = v;
    }
    if let Some(v) = a.gap_max {
        s.gap_max = v;
    }
    if let Some(v) = a.border {
        s.border = v;
    }
    if let Some(v) = a.jitter {
        s.jitter = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    s.validate()?;
    let split: Option<Split> = a
        .split
        .as_deref()
        .map(|v| v.parse().map_err(|_| Error::Usage(format!("unknown split {v:?}"))))
        .transpose()?;
    if a.out.is_file() {
        return Err(Error::Usage(format!("{} is a file", a.out.display())));
    }
    let source = match (&a.digits_images, &a.digits_labels) {
        (Some(i), Some(l)) => {
            require_file(i)?;
            require_file(l)?;
            DigitSet::from_idx_files(i, l)?
        }
        _ => DigitSet::bundled()?,
    };

    let sets = match split {
        Some(sp) => vec![(None, generate_split(s, &source, sp, s.count)?)],
        None => {
            let (tr, va, te) = generate_dataset(s, &source)?;
            vec![(Some("train"), tr), (Some("val"), va), (Some("test"), te)]
        }
    };
    for (sub, ds) in &sets {
        let dir = sub.map_or(a.out.clone(), |d| a.out.join(d));
        save_dataset(ds, &dir)?;
        writeln!(out, "{}\t{} samples", dir.display(), ds.len())?;
    }
    Ok(())
}

fn anchors_cmd(a: AnchorArgs, out: &mut dyn Write) -> Result<()> {
    require_dataset(&a.data)?;
    if let Some(p) = &a.out {
        require_parent(p)?;
    }
    let ds = load_dataset(&a.data)?;
    let dims = reference_box_dims(&ds.samples)?;
    let c = cluster_anchors(&dims, a.k, a.seed)?;
    let text = format_anchors(&c.anchors);
    write!(out, "{text}")?;
    eprintln!("mean IoU {:.4} after {} iterations", c.mean_iou, c.iterations);
    if let Some(p) = &a.out {
        fs::write(p, text)?;
    }
    Ok(())
}

fn print_history(h: &History, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "epoch\tlr\ttrain_loss\tval_accuracy\tval_loss\tcollisions")?;
    for e in &h.epochs {
        writeln!(
            out,
            "{}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{}",
            e.epoch, e.learning_rate, e.train_loss, e.val_accuracy, e.val_loss, e.collisions
        )?;
    }
    writeln!(out, "best epoch {}{}", h.best_epoch, if h.stopped_early { " (early stop)" } else { "" })?;
    Ok(())
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    apply_train_flags(&mut cfg.train, &a.flags)?;
    require_dataset(&a.train)?;
    require_dataset(&a.val)?;
    require_file(&a.anchors)?;
    require_parent(&a.out)?;
    let anchors = parse_anchors(&fs::read_to_string(&a.anchors)?)?;
    let tr = load_dataset(&a.train)?;
    let va = load_dataset(&a.val)?;
    let (model, history) = train(&tr.samples, &va.samples, &anchors, &cfg.train)?;
    print_history(&history, out)?;
    model.save(&a.out)?;
    writeln!(out, "saved {}", a.out.display())?;
    Ok(())
}

fn read_image(p: &Path) -> Result<GrayImage> {
    require_file(p)?;
    GrayImage::read_pgm(BufReader::new(fs::File::open(p)?))
}

fn predict_cmd(mut cfg: RunConfig, a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    apply_thresholds(&mut cfg.thresholds, &a.thresholds)?;
    if a.overlay.is_some() && a.image.len() != 1 {
        return Err(Error::Usage("--overlay needs exactly one --image".into()));
    }
    for p in &a.image {
        require_file(p)?;
    }
    if let Some(p) = &a.overlay {
        require_parent(p)?;
    }
    let model = Detector::load(&a.model)?;
    for p in &a.image {
        let img = read_image(p)?;
        let r = predict_string(&model, &img, &cfg.thresholds)?;
        let boxes: Vec<String> = r
            .detections
            .iter()
            .map(|d| {
                format!(
                    "{}@{:.1},{:.1},{:.1},{:.1}:{:.4}",
                    d.class,
                    d.bbox.x_min(),
                    d.bbox.y_min(),
                    d.bbox.x_max(),
                    d.bbox.y_max(),
                    d.posterior()
                )
            })
            .collect();
        let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        writeln!(out, "{name}\t{}\t{:.6}\t{}", r.text, r.probability, boxes.join(" "))?;
        if let Some(o) = &a.overlay {
            let mut w = BufWriter::new(fs::File::create(o)?);
            render_overlay(&img, &r).write_pgm(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn eval_cmd(mut cfg: RunConfig, a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    apply_thresholds(&mut cfg.thresholds, &a.thresholds)?;
    require_dataset(&a.data)?;
    if let Some(p) = &a.tsv {
        require_parent(p)?;
    }
    let model = Detector::load(&a.model)?;
    let ds = load_dataset(&a.data)?;
    let report = evaluate(&model, &ds.samples, &cfg.thresholds)?;
    writeln!(out, "{report}")?;
    if let Some(p) = &a.tsv {
        fs::write(p, report.to_tsv())?;
    }
    Ok(())
}

/// Anchors clustered from the training samples at the test-time input size.
pub fn anchors_for(samples: &[StringSample], k: usize, seed: u64) -> Result<Vec<Anchor>> {
    Ok(cluster_anchors(&reference_box_dims(samples)?, k, seed)?.anchors)
}

fn context_cmd(mut cfg: RunConfig, a: ContextArgs, out: &mut dyn Write) -> Result<()> {
    apply_train_flags(&mut cfg.train, &a.flags)?;
    for root in [&a.isolated, &a.strings] {
        require_dataset(&root.join("train"))?;
        require_dataset(&root.join("val"))?;
    }
    require_dataset(&a.strings.join("test"))?;
    let test = load_dataset(&a.strings.join("test"))?;
    let mut accuracy = Vec::new();
    for (name, root) in [("isolated", &a.isolated), ("strings", &a.strings)] {
        let tr = load_dataset(&root.join("train"))?;
        let va = load_dataset(&root.join("val"))?;
        let anchors = anchors_for(&tr.samples, a.k, cfg.train.seed)?;
        let (model, history) = train(&tr.samples, &va.samples, &anchors, &cfg.train)?;
        let report = evaluate(&model, &test.samples, &cfg.thresholds)?;
        writeln!(out, "== trained on {name} ({} samples, best epoch {})", tr.len(), history.best_epoch)?;
        writeln!(out, "{report}")?;
        accuracy.push(report.overall.accuracy());
    }
    writeln!(
        out,
        "string accuracy: isolated-trained {:.2}%, string-trained {:.2}%, gap {:.2} points",
        accuracy[0],
        accuracy[1],
        accuracy[1] - accuracy[0]
    )?;
    Ok(())
}
