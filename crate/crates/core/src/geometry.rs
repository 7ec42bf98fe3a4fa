//! Boxes, digit classes, annotated samples and non-maximum suppression.
//!
//! Coordinates are real-valued pixels in the image frame with the origin at
//! the top-left corner. Nothing here snaps to integers; that only happens
//! when a box is rendered.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// Axis-aligned box with `x_min < x_max` and `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::Validation(format!(
                "degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box of the given size centred on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Applies `x -> x * scale_x + offset_x` and likewise for y.
    pub fn affine(&self, scale_x: f64, scale_y: f64, offset_x: f64, offset_y: f64) -> Result<Self> {
        Self::new(
            self.x_min * scale_x + offset_x,
            self.y_min * scale_y + offset_y,
            self.x_max * scale_x + offset_x,
            self.y_max * scale_y + offset_y,
        )
    }

    pub fn contained_in(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One of the ten digit classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DigitClass(u8);

impl DigitClass {
    pub const COUNT: usize = 10;

    pub fn new(value: u8) -> Result<Self> {
        if value > 9 {
            return Err(Error::Validation(format!("digit class {value} out of range")));
        }
        Ok(Self(value))
    }

    pub fn from_char(c: char) -> Result<Self> {
        c.to_digit(10)
            .map(|d| Self(d as u8))
            .ok_or_else(|| Error::Validation(format!("{c:?} is not a digit")))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn to_char(self) -> char {
        char::from(b'0' + self.0)
    }
}

impl fmt::Display for DigitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A located, classified digit candidate with its posterior `P(class | box)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class: DigitClass,
    posterior: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, class: DigitClass, posterior: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&posterior) {
            return Err(Error::Validation(format!("posterior {posterior} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            class,
            posterior,
        })
    }

    pub fn posterior(&self) -> f64 {
        self.posterior
    }
}

/// Ground-truth digit inside a [`StringSample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitAnnotation {
    pub class: DigitClass,
    pub bbox: BoundingBox,
}

/// A grayscale string image with its ordered per-digit ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StringSample {
    image: GrayImage,
    annotations: Vec<DigitAnnotation>,
    label: String,
}

impl StringSample {
    /// Builds a sample, ordering annotations by box x-centre and deriving the
    /// label from them.
    pub fn new(image: GrayImage, mut annotations: Vec<DigitAnnotation>) -> Result<Self> {
        let (w, h) = (image.width() as f64, image.height() as f64);
        if let Some(a) = annotations.iter().find(|a| !a.bbox.contained_in(w, h)) {
            return Err(Error::Validation(format!(
                "annotation {:?} outside {}x{} image",
                a.bbox,
                image.width(),
                image.height()
            )));
        }
        annotations.sort_by(|a, b| a.bbox.center().0.total_cmp(&b.bbox.center().0));
        let label = annotations.iter().map(|a| a.class.to_char()).collect();
        Ok(Self {
            image,
            annotations,
            label,
        })
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    pub fn annotations(&self) -> &[DigitAnnotation] {
        &self.annotations
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }
}

/// Orders by posterior descending, then smaller `x_min`, then smaller class.
fn nms_order(a: &Detection, b: &Detection) -> Ordering {
    b.posterior
        .total_cmp(&a.posterior)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.class.cmp(&b.class))
}

/// Greedy class-wise non-maximum suppression.
///
/// A detection is kept iff its IoU with every already kept detection of the
/// same class is below `iou_threshold`. Detections of different classes never
/// suppress each other. The result is in keep order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(nms_order);

    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for det in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class == det.class && iou(&k.bbox, &det.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}
