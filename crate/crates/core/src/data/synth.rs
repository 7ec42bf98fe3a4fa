//! Numeral-string synthesis by gap-controlled horizontal concatenation of
//! isolated digits.
//!
//! Digit `k + 1` starts `gap_k` pixels after digit `k` ends; a negative gap
//! slides it over its left neighbour so the strokes touch or overlap. Overlapping
//! ink keeps the darker pixel. Digits share a vertical midline, each shifted by
//! its own random jitter, and the canvas is the tight hull of all placed digits
//! plus a white border.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::idx::DigitSet;
use super::Dataset;
use super::Split;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, DigitAnnotation, DigitClass, StringSample};
use crate::raster::{GrayImage, WHITE};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub min_len: usize,
    pub max_len: usize,
    /// Inclusive range for inter-digit gaps in pixels; negatives overlap.
    pub gap_min: i32,
    pub gap_max: i32,
    pub border: usize,
    /// Maximum vertical shift as a fraction of each digit's height.
    pub jitter: f64,
    /// Horizontal rescale applied to every digit before placement.
    pub width_scale: f64,
    pub seed: u64,
    pub count: usize,
    /// `(train, val, test)`, summing to 1.
    pub split_fractions: (f64, f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_len: 2,
            max_len: 6,
            gap_min: -6,
            gap_max: 12,
            border: 5,
            jitter: 0.15,
            width_scale: 1.0,
            seed: 0,
            count: 1000,
            split_fractions: (0.7, 0.15, 0.15),
        }
    }
}

impl SynthConfig {
    /// Strings of length one are accepted only when `min_len` asks for them.
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_fractions;
        let err = |m: String| Err(Error::Config(m));
        if self.min_len == 0 || self.min_len > self.max_len {
            return err(format!("lengths {}..={}", self.min_len, self.max_len));
        }
        if self.count == 0 {
            return err("count must be positive".into());
        }
        if self.gap_min > self.gap_max {
            return err(format!("gap range {}..={}", self.gap_min, self.gap_max));
        }
        if !(0.0..=1.0).contains(&self.jitter) || !(self.width_scale > 0.0) {
            return err(format!("jitter {} / width scale {}", self.jitter, self.width_scale));
        }
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return err(format!("split fractions {:?} must be in [0,1] and sum to 1", self.split_fractions));
        }
        Ok(())
    }

    /// Sets one field from its `key=value` name; `Ok(false)` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        match key {
            "count" => self.count = value.parse().map_err(|_| bad())?,
            "min_len" => self.min_len = value.parse().map_err(|_| bad())?,
            "max_len" => self.max_len = value.parse().map_err(|_| bad())?,
            "gap_min" => self.gap_min = value.parse().map_err(|_| bad())?,
            "gap_max" => self.gap_max = value.parse().map_err(|_| bad())?,
            "border" => self.border = value.parse().map_err(|_| bad())?,
            "jitter" => self.jitter = value.parse().map_err(|_| bad())?,
            "width_scale" => self.width_scale = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "split_fractions" => {
                let v: Vec<f64> = value
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                let [a, b, c] = v[..] else { return Err(bad()) };
                self.split_fractions = (a, b, c);
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Per-split sample counts; rounding leftovers go to the training split.
    pub fn split_counts(&self) -> [usize; 3] {
        let val = (self.count as f64 * self.split_fractions.1).round() as usize;
        let test = (self.count as f64 * self.split_fractions.2).round() as usize;
        let val = val.min(self.count);
        let test = test.min(self.count - val);
        [self.count - val - test, val, test]
    }
}

/// Places `digits` left to right with the given gaps and vertical offsets.
///
/// `offsets[k]` shifts digit `k` down from the common midline. Each gap must
/// be at least `1 - min(w_k, w_{k+1})` so that neighbours never fully cover
/// each other.
pub fn compose_string(
    digits: &[(GrayImage, DigitClass)],
    gaps: &[i32],
    offsets: &[i32],
    border: usize,
) -> Result<StringSample> {
    if digits.is_empty() {
        return Err(Error::Argument("no digits to compose".into()));
    }
    if gaps.len() + 1 != digits.len() || offsets.len() != digits.len() {
        return Err(Error::Argument(format!(
            "{} digits need {} gaps and {} offsets, got {} and {}",
            digits.len(),
            digits.len() - 1,
            digits.len(),
            gaps.len(),
            offsets.len()
        )));
    }
    if let Some((img, _)) = digits.iter().find(|(img, _)| img.width() == 0 || img.height() == 0) {
        return Err(Error::Argument(format!("empty digit raster {img:?}")));
    }
    for (k, &gap) in gaps.iter().enumerate() {
        let narrow = digits[k].0.width().min(digits[k + 1].0.width()) as i64;
        if (gap as i64) < 1 - narrow {
            return Err(Error::Argument(format!(
                "gap {gap} between digits {k} and {} must be at least {}",
                k + 1,
                1 - narrow
            )));
        }
    }

    // Positions in a frame where digit 0 starts at x = 0 and the midline is y = 0.
    let mut placed = Vec::with_capacity(digits.len());
    let mut x = 0i64;
    for (k, (img, _)) in digits.iter().enumerate() {
        if k > 0 {
            x += digits[k - 1].0.width() as i64 + gaps[k - 1] as i64;
        }
        let top = offsets[k] as i64 - (img.height() as i64) / 2;
        placed.push((x, top));
    }
    let left = placed.iter().map(|p| p.0).min().expect("non-empty");
    let right = placed
        .iter()
        .zip(digits)
        .map(|(p, (img, _))| p.0 + img.width() as i64)
        .max()
        .expect("non-empty");
    let top = placed.iter().map(|p| p.1).min().expect("non-empty");
    let bottom = placed
        .iter()
        .zip(digits)
        .map(|(p, (img, _))| p.1 + img.height() as i64)
        .max()
        .expect("non-empty");

    let b = border as i64;
    let width = (right - left + 2 * b) as usize;
    let height = (bottom - top + 2 * b) as usize;
    let mut canvas = GrayImage::new(width, height, WHITE);
    let mut annotations = Vec::with_capacity(digits.len());
    for ((px, py), (img, class)) in placed.iter().zip(digits) {
        let cx = (px - left + b) as usize;
        let cy = (py - top + b) as usize;
        canvas.blit_darkest(img, cx, cy);
        annotations.push(DigitAnnotation {
            class: *class,
            bbox: BoundingBox::new(
                cx as f64,
                cy as f64,
                (cx + img.width()) as f64,
                (cy + img.height()) as f64,
            )?,
        });
    }
    StringSample::new(canvas, annotations)
}

/// Composes a string with vertical jitter drawn from `rng`: digit `k` is
/// shifted by an integer in `[-jitter * h_k, jitter * h_k]`.
pub fn synth_string<R: Rng>(
    digits: &[(GrayImage, DigitClass)],
    gaps: &[i32],
    border: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<StringSample> {
    let offsets: Vec<i32> = digits
        .iter()
        .map(|(img, _)| {
            let span = (jitter * img.height() as f64).floor() as i32;
            if span > 0 {
                rng.random_range(-span..=span)
            } else {
                0
            }
        })
        .collect();
    compose_string(digits, gaps, &offsets, border)
}

fn scale_width(img: &GrayImage, factor: f64) -> GrayImage {
    if factor == 1.0 {
        return img.clone();
    }
    let w = ((img.width() as f64 * factor).round() as usize).max(1);
    img.resize_bilinear(w, img.height()).trim_to_ink()
}

const PARTITION_STREAM: u64 = u64::MAX;

/// Disjoint source-record pools for the train, validation and test splits.
pub fn partition_sources(config: &SynthConfig, source: &DigitSet) -> [Vec<usize>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(PARTITION_STREAM);
    let mut order: Vec<usize> = (0..source.len()).collect();
    // Fisher-Yates; kept explicit so the permutation is pinned to this RNG.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n = source.len() as f64;
    let n_train = (n * config.split_fractions.0).round() as usize;
    let n_val = ((n * config.split_fractions.1).round() as usize).min(source.len() - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    [order, val, test]
}

/// Synthesizes the train, validation and test datasets.
///
/// Source records are partitioned into disjoint pools before composition and
/// each split draws digits from its own pool only. Sample `i` (numbered
/// across splits) uses its own ChaCha stream, so the output depends only on
/// `(config, source)`.
pub fn generate_dataset(config: &SynthConfig, source: &DigitSet) -> Result<(Dataset, Dataset, Dataset)> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Config("empty digit source".into()));
    }
    let pools = partition_sources(config, source);
    let counts = config.split_counts();
    let digits: Vec<GrayImage> = source
        .images
        .iter()
        .map(|img| scale_width(img, config.width_scale))
        .collect();

    let mut first_index = 0u64;
    let mut out = Vec::with_capacity(3);
    for ((pool, &count), split) in pools.iter().zip(&counts).zip(Split::ALL) {
        if count > 0 && pool.is_empty() {
            return Err(Error::Config(format!(
                "{split} pool is empty but {count} samples were requested"
            )));
        }
        let samples = (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(first_index + i);
                sample_string(config, &digits, source, pool, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        first_index += count as u64;
        out.push(Dataset::new(samples, split));
    }
    let test = out.pop().expect("three splits");
    let val = out.pop().expect("three splits");
    let train = out.pop().expect("three splits");
    Ok((train, val, test))
}

/// Streams of [`generate_split`] start here, clear of those used by
/// [`generate_dataset`].
const SPLIT_STREAM_BASE: u64 = 1 << 48;

/// Synthesizes `count` samples for one split only, drawing digits from the
/// same pool [`generate_dataset`] would use for it.
pub fn generate_split(config: &SynthConfig, source: &DigitSet, split: Split, count: usize) -> Result<Dataset> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Config("empty digit source".into()));
    }
    let k = Split::ALL.iter().position(|&s| s == split).expect("listed");
    let pool = &partition_sources(config, source)[k];
    if count > 0 && pool.is_empty() {
        return Err(Error::Config(format!("{split} pool is empty")));
    }
    let digits: Vec<GrayImage> = source
        .images
        .iter()
        .map(|img| scale_width(img, config.width_scale))
        .collect();
    let base = SPLIT_STREAM_BASE * (k as u64 + 1);
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(base + i);
            sample_string(config, &digits, source, pool, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples, split))
}

fn sample_string(
    config: &SynthConfig,
    digits: &[GrayImage],
    source: &DigitSet,
    pool: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<StringSample> {
    let len = rng.random_range(config.min_len..=config.max_len);
    let picked: Vec<(GrayImage, DigitClass)> = (0..len)
        .map(|_| {
            let i = pool[rng.random_range(0..pool.len())];
            (digits[i].clone(), source.labels[i])
        })
        .collect();
    let gaps: Vec<i32> = picked
        .windows(2)
        .map(|pair| {
            let floor = 1 - pair[0].0.width().min(pair[1].0.width()) as i32;
            rng.random_range(config.gap_min..=config.gap_max).max(floor)
        })
        .collect();
    synth_string(&picked, &gaps, config.border, config.jitter, rng)
}
