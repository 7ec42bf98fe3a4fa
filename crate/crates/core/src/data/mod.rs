//! Digit sources, string synthesis and the on-disk dataset layout.
//!
//! A dataset directory holds `images/NNNNNN.pgm` (binary PGM) and an
//! `annotations.tsv` with a `#format=1` header line followed by one row per
//! digit:
//!
//! ```text
//! filename  label_string  digit_index  class  x_min  y_min  x_max  y_max
//! ```
//!
//! Fields are tab-separated, coordinates are decimal reals, lines end in LF.

mod idx;
mod synth;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

pub use idx::{load_idx, maybe_gunzip, DigitSet, IMAGE_MAGIC, LABEL_MAGIC};
pub use synth::{
    compose_string, generate_dataset, generate_split, partition_sources, synth_string, SynthConfig,
};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, DigitAnnotation, DigitClass, StringSample};
use crate::raster::GrayImage;

pub const ANNOTATIONS_FILE: &str = "annotations.tsv";
pub const IMAGES_DIR: &str = "images";
const FORMAT_HEADER: &str = "#format=1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<StringSample>,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<StringSample>, split: Split) -> Self {
        Self { samples, split }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(width, height)` of every ground-truth box.
    pub fn box_dims(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .flat_map(|s| s.annotations().iter().map(|a| (a.bbox.width(), a.bbox.height())))
            .collect()
    }
}

fn image_name(index: usize) -> String {
    format!("{index:06}.pgm")
}

/// Writes `ds` under `root`, creating `root/images/`.
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    if let Some(i) = ds.samples.iter().position(StringSample::is_empty) {
        return Err(Error::Validation(format!(
            "sample {i} has no digits and cannot be represented in {ANNOTATIONS_FILE}"
        )));
    }
    let images = root.join(IMAGES_DIR);
    fs::create_dir_all(&images)?;
    let mut tsv = BufWriter::new(fs::File::create(root.join(ANNOTATIONS_FILE))?);
    writeln!(tsv, "{FORMAT_HEADER}\tsplit={}", ds.split)?;
    for (i, sample) in ds.samples.iter().enumerate() {
        let name = image_name(i);
        let mut pgm = BufWriter::new(fs::File::create(images.join(&name))?);
        sample.image().write_pgm(&mut pgm)?;
        pgm.flush()?;
        for (k, a) in sample.annotations().iter().enumerate() {
            let b = &a.bbox;
            writeln!(
                tsv,
                "{name}\t{}\t{k}\t{}\t{}\t{}\t{}\t{}",
                sample.label(),
                a.class,
                b.x_min(),
                b.y_min(),
                b.x_max(),
                b.y_max()
            )?;
        }
    }
    tsv.flush()?;
    Ok(())
}

struct Row {
    name: String,
    label: String,
    index: usize,
    class: DigitClass,
    bbox: BoundingBox,
}

fn parse_row(line: &str, line_no: usize) -> Result<Row> {
    let parse_err = |message: String| Error::Parse {
        file: ANNOTATIONS_FILE.into(),
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return Err(parse_err(format!("expected 8 tab-separated fields, found {}", fields.len())));
    }
    let index = fields[2]
        .parse::<usize>()
        .map_err(|_| parse_err(format!("bad digit index {:?}", fields[2])))?;
    let class = fields[3]
        .parse::<u8>()
        .ok()
        .and_then(|v| DigitClass::new(v).ok())
        .ok_or_else(|| parse_err(format!("bad class {:?}", fields[3])))?;
    let mut coords = [0.0f64; 4];
    for (c, f) in coords.iter_mut().zip(&fields[4..]) {
        *c = f
            .parse::<f64>()
            .map_err(|_| parse_err(format!("bad coordinate {f:?}")))?;
    }
    let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| {
        Error::Validation(format!("{ANNOTATIONS_FILE}:{line_no}: {e}"))
    })?;
    if fields[1].is_empty() || !fields[1].chars().all(|c| c.is_ascii_digit()) {
        return Err(parse_err(format!("bad label {:?}", fields[1])));
    }
    Ok(Row {
        name: fields[0].to_string(),
        label: fields[1].to_string(),
        index,
        class,
        bbox,
    })
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let tsv_path = root.join(ANNOTATIONS_FILE);
    if !tsv_path.exists() {
        return Err(Error::MissingFile(tsv_path));
    }
    let text = fs::read_to_string(&tsv_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        file: ANNOTATIONS_FILE.into(),
        line: 1,
        message: "empty annotation file".into(),
    })?;
    if !header.starts_with(FORMAT_HEADER) {
        return Err(Error::Parse {
            file: ANNOTATIONS_FILE.into(),
            line: 1,
            message: format!("missing {FORMAT_HEADER} header"),
        });
    }
    let split = header
        .split('\t')
        .find_map(|f| f.strip_prefix("split="))
        .map(Split::from_str)
        .transpose()?
        .unwrap_or(Split::Test);

    // rows grouped by image, in order of first appearance
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (String, Vec<(usize, Row)>)> = HashMap::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = parse_row(line, line_no)?;
        let entry = groups.entry(row.name.clone()).or_insert_with(|| {
            order.push(row.name.clone());
            (row.label.clone(), Vec::new())
        });
        if entry.0 != row.label {
            return Err(Error::Parse {
                file: ANNOTATIONS_FILE.into(),
                line: line_no,
                message: format!("label {:?} disagrees with {:?}", row.label, entry.0),
            });
        }
        entry.1.push((line_no, row));
    }

    let mut samples = Vec::with_capacity(order.len());
    for name in order {
        let (label, mut rows) = groups.remove(&name).expect("grouped above");
        rows.sort_by_key(|(_, r)| r.index);
        let first_line = rows[0].0;
        let consistent = rows.len() == label.len()
            && rows.iter().enumerate().all(|(k, (_, r))| {
                r.index == k && label.as_bytes()[k] == r.class.to_char() as u8
            });
        if !consistent {
            return Err(Error::Parse {
                file: ANNOTATIONS_FILE.into(),
                line: first_line,
                message: format!("rows for {name} do not spell label {label:?}"),
            });
        }
        let path = root.join(IMAGES_DIR).join(&name);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let image = GrayImage::read_pgm(BufReader::new(fs::File::open(&path)?))?;
        let annotations = rows
            .into_iter()
            .map(|(_, r)| DigitAnnotation {
                class: r.class,
                bbox: r.bbox,
            })
            .collect();
        let sample = StringSample::new(image, annotations)?;
        if sample.label() != label {
            return Err(Error::Validation(format!(
                "{name}: boxes order to {:?}, file says {label:?}",
                sample.label()
            )));
        }
        samples.push(sample);
    }
    Ok(Dataset::new(samples, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dataset() -> Dataset {
        let source = DigitSet::bundled().unwrap().subset(&(0..5000).step_by(50).collect::<Vec<_>>());
        let cfg = SynthConfig {
            count: 12,
            seed: 3,
            ..SynthConfig::default()
        };
        generate_dataset(&cfg, &source).unwrap().0
    }

    #[test]
    fn save_load_roundtrip() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let text = fs::read_to_string(dir.path().join(ANNOTATIONS_FILE)).unwrap();
        assert!(text.starts_with("#format=1"));
        assert!(!text.contains('\r'));
    }

    fn write_tsv(dir: &Path, body: &str) {
        fs::write(dir.join(ANNOTATIONS_FILE), format!("#format=1\n{body}")).unwrap();
    }

    #[test]
    fn short_row_is_a_parse_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        write_tsv(dir.path(), "000000.pgm\t1\t0\n");
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inverted_box_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        write_tsv(dir.path(), "000000.pgm\t1\t0\t1\t9\t0\t4\t10\n");
        assert!(matches!(load_dataset(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_tsv(dir.path(), "000000.pgm\t1\t0\t1\t0\t0\t4\t10\n");
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn missing_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(ANNOTATIONS_FILE), "000000.pgm\t1\t0\t1\t0\t0\t4\t10\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line: 1, .. })));
    }
}
