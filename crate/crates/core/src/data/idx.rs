//! IDX digit archives (the MNIST container format).
//!
//! Images: big-endian `u32` magic `0x00000803`, count, rows, cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, count,
//! then `count` bytes.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::geometry::DigitClass;
use crate::raster::{GrayImage, WHITE};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Isolated digits, each trimmed to its ink and stored dark-on-white.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitSet {
    pub images: Vec<GrayImage>,
    pub labels: Vec<DigitClass>,
    pub source_ids: Vec<u64>,
}

impl DigitSet {
    pub fn new(images: Vec<GrayImage>, labels: Vec<DigitClass>, source_ids: Vec<u64>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != source_ids.len() {
            return Err(Error::Consistency(format!(
                "{} images, {} labels, {} source ids",
                images.len(),
                labels.len(),
                source_ids.len()
            )));
        }
        Ok(Self {
            images,
            labels,
            source_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source_ids: indices.iter().map(|&i| self.source_ids[i]).collect(),
        }
    }

    /// Reads an image/label archive pair from disk; `.gz` compression is
    /// detected from the stream itself.
    pub fn from_idx_files(images: &Path, labels: &Path) -> Result<Self> {
        let read = |p: &Path| -> Result<Vec<u8>> {
            if !p.exists() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
            maybe_gunzip(std::fs::read(p)?)
        };
        load_idx(&read(images)?, &read(labels)?)
    }

    /// The 5,000-digit archive shipped with the crate (500 per class, drawn
    /// from the public MNIST collection).
    pub fn bundled() -> Result<Self> {
        let images = maybe_gunzip(BUNDLED_IMAGES.to_vec())?;
        let labels = maybe_gunzip(BUNDLED_LABELS.to_vec())?;
        load_idx(&images, &labels)
    }
}

static BUNDLED_IMAGES: &[u8] = include_bytes!("../../data/digits5k-images-idx3-ubyte.gz");
static BUNDLED_LABELS: &[u8] = include_bytes!("../../data/digits5k-labels-idx1-ubyte.gz");

pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn header(bytes: &[u8], words: usize, what: &str) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::Format(format!("{what} stream is missing its IDX header")));
    }
    Ok(bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn truncated(what: &str, need: usize, have: usize) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::UnexpectedEof,
        format!("{what} stream truncated: need {need} payload bytes, have {have}"),
    ))
}

/// Parses an image archive and its label archive into a [`DigitSet`].
/// Light-on-dark rasters are inverted, then every raster is trimmed to its ink.
pub fn load_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<DigitSet> {
    let ih = header(image_bytes, 4, "image")?;
    if ih[0] != IMAGE_MAGIC {
        return Err(Error::Format(format!("image magic {:#010x}", ih[0])));
    }
    let lh = header(label_bytes, 2, "label")?;
    if lh[0] != LABEL_MAGIC {
        return Err(Error::Format(format!("label magic {:#010x}", lh[0])));
    }
    let (count, rows, cols) = (ih[1] as usize, ih[2] as usize, ih[3] as usize);
    if count != lh[1] as usize {
        return Err(Error::Consistency(format!(
            "image archive declares {count} records, label archive {}",
            lh[1]
        )));
    }
    if count > 0 && (rows == 0 || cols == 0) {
        return Err(Error::Format(format!("zero-sized {rows}x{cols} rasters")));
    }
    let pixels = &image_bytes[16..];
    let need = count * rows * cols;
    if pixels.len() < need {
        return Err(truncated("image", need, pixels.len()));
    }
    let labels = &label_bytes[8..];
    if labels.len() < count {
        return Err(truncated("label", count, labels.len()));
    }

    let mut images = Vec::with_capacity(count);
    let mut classes = Vec::with_capacity(count);
    for i in 0..count {
        let raw = pixels[i * rows * cols..(i + 1) * rows * cols].to_vec();
        let img = GrayImage::from_pixels(cols, rows, raw)?;
        images.push(normalize_polarity(img).trim_to_ink());
        classes.push(DigitClass::new(labels[i])?);
    }
    DigitSet::new(images, classes, (0..count as u64).collect())
}

/// Inverts rasters whose border is predominantly dark.
fn normalize_polarity(img: GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut sum = 0u64;
    let mut n = 0u64;
    for x in 0..w {
        sum += img.get(x, 0) as u64 + img.get(x, h - 1) as u64;
        n += 2;
    }
    for y in 0..h {
        sum += img.get(0, y) as u64 + img.get(w - 1, y) as u64;
        n += 2;
    }
    if sum < n * (WHITE as u64 / 2) {
        img.invert()
    } else {
        img
    }
}
