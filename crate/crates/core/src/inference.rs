//! Test-time pipeline: input sizing from the string width, letterboxing, grid
//! decoding, suppression and left-to-right string assembly.

use crate::anchors::Anchor;
use crate::detector::{slot_channel, Detector, Field, SLOT_LEN};
use crate::error::{Error, Result};
use crate::geometry::{nms, BoundingBox, Detection, DigitClass};
use crate::net::{Real, Tensor};
use crate::raster::{GrayImage, WHITE};

/// Network input height used at test time.
pub const INPUT_HEIGHT: usize = 128;
pub const NETWORK_STRIDE: usize = 32;

/// Network input width for a test image `string_width` pixels wide: 128 up to
/// 75 pixels, otherwise `1.7 * string_width` rounded to the nearest multiple
/// of 32 (halves round up).
pub fn target_input_width(string_width: usize) -> usize {
    if string_width <= 75 {
        return 128;
    }
    // 1.7 * w / 32 == 17 * w / 320, rounded half up in integer arithmetic
    let cells = (17 * string_width + 160) / 320;
    cells * NETWORK_STRIDE
}

/// `(height, width)` of the network input for an image.
pub fn target_input_dims(image: &GrayImage) -> (usize, usize) {
    (INPUT_HEIGHT, target_input_width(image.width()))
}

/// Maps between original image pixels and the letterboxed network input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub scale_x: f64,
    pub scale_y: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub input_width: usize,
    pub input_height: usize,
}

impl Letterbox {
    /// Aspect-preserving fit of a `width x height` image into the target,
    /// centred. Per-axis scales account for rounding of the resized extent.
    pub fn fit(width: usize, height: usize, target_height: usize, target_width: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("zero-area image".into()));
        }
        if target_width == 0 || target_height == 0 {
            return Err(Error::Argument("zero-area target".into()));
        }
        let s = (target_width as f64 / width as f64).min(target_height as f64 / height as f64);
        let new_w = ((width as f64 * s).round() as usize).clamp(1, target_width);
        let new_h = ((height as f64 * s).round() as usize).clamp(1, target_height);
        Ok(Self {
            scale_x: new_w as f64 / width as f64,
            scale_y: new_h as f64 / height as f64,
            pad_x: ((target_width - new_w) / 2) as f64,
            pad_y: ((target_height - new_h) / 2) as f64,
            input_width: target_width,
            input_height: target_height,
        })
    }

    pub fn resized_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (
            (width as f64 * self.scale_x).round() as usize,
            (height as f64 * self.scale_y).round() as usize,
        )
    }

    pub fn to_network(&self, b: &BoundingBox) -> Result<BoundingBox> {
        b.affine(self.scale_x, self.scale_y, self.pad_x, self.pad_y)
    }

    pub fn to_image(&self, b: &BoundingBox) -> Result<BoundingBox> {
        b.affine(
            1.0 / self.scale_x,
            1.0 / self.scale_y,
            -self.pad_x / self.scale_x,
            -self.pad_y / self.scale_y,
        )
    }
}

/// Letterboxes `image` into `(target_height, target_width)` on white and
/// converts it to a `(1, H, W)` tensor of ink intensity `(255 - v) / 255`, so
/// background and padding are 0.
pub fn prepare_image<T: Real>(
    image: &GrayImage,
    target_height: usize,
    target_width: usize,
) -> Result<(Tensor<T>, Letterbox)> {
    if target_height % NETWORK_STRIDE != 0 || target_width % NETWORK_STRIDE != 0 {
        return Err(Error::Argument(format!(
            "target {target_height}x{target_width} is not a multiple of {NETWORK_STRIDE}"
        )));
    }
    let lb = Letterbox::fit(image.width(), image.height(), target_height, target_width)?;
    let (new_w, new_h) = lb.resized_dims(image.width(), image.height());
    let resized = image.resize_bilinear(new_w, new_h);
    let mut canvas = GrayImage::new(target_width, target_height, WHITE);
    canvas.blit_darkest(&resized, lb.pad_x as usize, lb.pad_y as usize);
    let inv = 1.0 / 255.0;
    let data = canvas
        .pixels()
        .iter()
        .map(|&p| T::of((WHITE - p) as f64 * inv))
        .collect();
    Ok((Tensor::from_vec(&[1, target_height, target_width], data)?, lb))
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Raw decoded slot: box in network pixels, objectness and class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecode {
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
    pub center: (f64, f64),
    pub size: (f64, f64),
    pub objectness: f64,
    pub class_probs: Vec<f64>,
}

/// Decodes one `(cell, anchor)` slot of a grid prediction.
pub fn decode_slot<T: Real>(
    pred: &Tensor<T>,
    anchors: &[Anchor],
    stride: usize,
    row: usize,
    col: usize,
    anchor: usize,
) -> SlotDecode {
    let [_, rows, cols] = <[usize; 3]>::try_from(pred.shape()).expect("grid prediction is 3-D");
    let plane = rows * cols;
    let at = |field: usize| pred.data()[slot_channel(anchor, field) * plane + row * cols + col].as_f64();
    let s = stride as f64;
    let cx = (logistic(at(Field::X as usize)) + col as f64) * s;
    let cy = (logistic(at(Field::Y as usize)) + row as f64) * s;
    let w = anchors[anchor].width * at(Field::W as usize).exp();
    let h = anchors[anchor].height * at(Field::H as usize).exp();
    let scores: Vec<f64> = (0..DigitClass::COUNT)
        .map(|c| at(Field::Class as usize + c))
        .collect();
    SlotDecode {
        row,
        col,
        anchor,
        center: (cx, cy),
        size: (w, h),
        objectness: logistic(at(Field::Obj as usize)),
        class_probs: softmax(&scores),
    }
}

/// Decodes every slot whose posterior (objectness times best class
/// probability) reaches `conf_threshold`. Boxes are in network pixels; slots
/// whose box degenerates numerically are skipped.
pub fn decode_grid<T: Real>(
    pred: &Tensor<T>,
    anchors: &[Anchor],
    stride: usize,
    conf_threshold: f64,
) -> Result<Vec<Detection>> {
    let shape = pred.shape();
    if shape.len() != 3 || shape[0] != anchors.len() * SLOT_LEN {
        return Err(Error::Shape(format!(
            "prediction {shape:?} does not hold {} anchors x {SLOT_LEN} channels",
            anchors.len()
        )));
    }
    let (rows, cols) = (shape[1], shape[2]);
    let mut out = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            for a in 0..anchors.len() {
                let slot = decode_slot(pred, anchors, stride, row, col, a);
                let (best, p) = slot
                    .class_probs
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                let posterior = (slot.objectness * p).clamp(0.0, 1.0);
                if posterior < conf_threshold {
                    continue;
                }
                let Ok(bbox) = BoundingBox::from_center(slot.center.0, slot.center.1, slot.size.0, slot.size.1)
                else {
                    continue;
                };
                out.push(Detection::new(bbox, DigitClass::new(best as u8)?, posterior)?);
            }
        }
    }
    Ok(out)
}

/// A recognized string: digits in reading order and `P(M | I)`, the product
/// of their posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct StringReading {
    pub text: String,
    pub probability: f64,
    pub detections: Vec<Detection>,
}

impl StringReading {
    /// No digits were found; the probability is 1 by convention.
    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Orders detections left to right by box centre and multiplies posteriors.
pub fn assemble_string(detections: &[Detection]) -> StringReading {
    let mut dets = detections.to_vec();
    dets.sort_by(|a, b| {
        a.bbox
            .center()
            .0
            .total_cmp(&b.bbox.center().0)
            .then(a.bbox.x_min().total_cmp(&b.bbox.x_min()))
            .then(a.class.cmp(&b.class))
            .then(a.posterior().total_cmp(&b.posterior()))
            .then(a.bbox.y_min().total_cmp(&b.bbox.y_min()))
    });
    let text = dets.iter().map(|d| d.class.to_char()).collect();
    let probability = dets.iter().map(Detection::posterior).product::<f64>().clamp(0.0, 1.0);
    StringReading {
        text,
        probability,
        detections: dets,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub confidence: f64,
    pub nms_iou: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            confidence: 0.25,
            nms_iou: 0.45,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.confidence) || !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Config(format!("invalid thresholds {self:?}")));
        }
        Ok(())
    }
}

/// Decodes, suppresses and maps detections of one grid prediction back to
/// original image coordinates.
pub fn detections_from_prediction<T: Real>(
    pred: &Tensor<T>,
    anchors: &[Anchor],
    stride: usize,
    letterbox: &Letterbox,
    thresholds: &Thresholds,
) -> Result<Vec<Detection>> {
    let raw = decode_grid(pred, anchors, stride, thresholds.confidence)?;
    nms(&raw, thresholds.nms_iou)
        .into_iter()
        .map(|d| Detection::new(letterbox.to_image(&d.bbox)?, d.class, d.posterior()))
        .collect()
}

/// Full pipeline for one image: input sizing, letterbox, forward pass,
/// decoding, suppression and assembly.
pub fn predict_string(model: &Detector, image: &GrayImage, thresholds: &Thresholds) -> Result<StringReading> {
    thresholds.validate()?;
    let (h, w) = target_input_dims(image);
    let (input, lb) = prepare_image::<f32>(image, h, w)?;
    let pred = model.network.predict(&input)?;
    let dets = detections_from_prediction(&pred, &model.anchors, model.network.spec().stride(), &lb, thresholds)?;
    Ok(assemble_string(&dets))
}

/// Box shapes of `samples` expressed in network pixels at the test-time input
/// size, the frame anchors live in.
pub fn reference_box_dims(samples: &[crate::geometry::StringSample]) -> Result<Vec<(f64, f64)>> {
    let mut dims = Vec::new();
    for s in samples {
        let (h, w) = target_input_dims(s.image());
        let lb = Letterbox::fit(s.image().width(), s.image().height(), h, w)?;
        for a in s.annotations() {
            dims.push((a.bbox.width() * lb.scale_x, a.bbox.height() * lb.scale_y));
        }
    }
    Ok(dims)
}

/// Draws detection boxes onto a copy of `image` (black, 1 px outlines).
pub fn render_overlay(image: &GrayImage, reading: &StringReading) -> GrayImage {
    let mut out = image.clone();
    let (w, h) = (image.width() as i64, image.height() as i64);
    for d in &reading.detections {
        let x0 = (d.bbox.x_min().round() as i64).clamp(0, w - 1);
        let x1 = (d.bbox.x_max().round() as i64 - 1).clamp(0, w - 1);
        let y0 = (d.bbox.y_min().round() as i64).clamp(0, h - 1);
        let y1 = (d.bbox.y_max().round() as i64 - 1).clamp(0, h - 1);
        for x in x0..=x1 {
            out.set(x as usize, y0 as usize, 0);
            out.set(x as usize, y1 as usize, 0);
        }
        for y in y0..=y1 {
            out.set(x0 as usize, y as usize, 0);
            out.set(x1 as usize, y as usize, 0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_width_table() {
        for (sw, iw) in [(75, 128), (228, 384), (381, 640), (524, 896), (750, 1280), (76, 128), (1, 128)] {
            assert_eq!(target_input_width(sw), iw, "S_w = {sw}");
        }
    }

    #[test]
    fn input_width_monotone_and_aligned() {
        let mut prev = 0;
        for sw in 1..3000 {
            let iw = target_input_width(sw);
            assert!(iw >= prev && iw % 32 == 0 && iw >= 128);
            prev = iw;
        }
    }

    #[test]
    fn identity_letterbox() {
        let img = GrayImage::from_pixels(64, 32, (0..2048).map(|i| (i % 256) as u8).collect()).unwrap();
        let (t, lb) = prepare_image::<f64>(&img, 32, 64).unwrap();
        assert_eq!((lb.scale_x, lb.scale_y, lb.pad_x, lb.pad_y), (1.0, 1.0, 0.0, 0.0));
        assert_eq!(t.data()[5], (255.0 - 5.0) / 255.0);
    }

    #[test]
    fn exact_ratio_letterbox() {
        let img = GrayImage::new(128, 64, 0);
        let (t, lb) = prepare_image::<f32>(&img, 128, 256).unwrap();
        assert_eq!((lb.scale_x, lb.scale_y, lb.pad_x, lb.pad_y), (2.0, 2.0, 0.0, 0.0));
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn letterbox_pads_with_background() {
        let img = GrayImage::new(40, 40, 0);
        let (t, lb) = prepare_image::<f32>(&img, 64, 128).unwrap();
        assert_eq!((lb.scale_x, lb.pad_x, lb.pad_y), (1.6, 32.0, 0.0));
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[64], 1.0);
        assert!(prepare_image::<f32>(&img, 60, 128).is_err());
        assert!(prepare_image::<f32>(&GrayImage::new(0, 5, 0), 64, 128).is_err());
    }

    fn zero_grid(anchors: usize, rows: usize, cols: usize) -> Tensor<f64> {
        Tensor::zeros(&[anchors * SLOT_LEN, rows, cols])
    }

    #[test]
    fn identity_offsets_decode() {
        let anchors = [Anchor::new(16.0, 24.0).unwrap()];
        let pred = zero_grid(1, 1, 2);
        let slot = decode_slot(&pred, &anchors, 32, 0, 1, 0);
        assert_eq!(slot.center, (48.0, 16.0));
        assert_eq!(slot.size, (16.0, 24.0));
        assert_eq!(slot.objectness, 0.5);
        assert!(slot.class_probs.iter().all(|&p| (p - 0.1).abs() < 1e-15));
        let dets = decode_grid(&pred, &anchors, 32, 0.0).unwrap();
        let d = dets.iter().find(|d| d.bbox.center().0 == 48.0).unwrap();
        assert_eq!((d.bbox.x_min(), d.bbox.x_max(), d.bbox.y_min(), d.bbox.y_max()), (40.0, 56.0, 4.0, 28.0));
        assert!((d.posterior() - 0.05).abs() < 1e-12);
        assert!(decode_grid(&pred, &anchors, 32, 0.25).unwrap().is_empty());
    }

    #[test]
    fn assemble_orders_and_multiplies() {
        let det = |x: f64, c: u8, p: f64| {
            Detection::new(
                BoundingBox::from_center(x, 10.0, 8.0, 16.0).unwrap(),
                DigitClass::new(c).unwrap(),
                p,
            )
            .unwrap()
        };
        let r = assemble_string(&[det(30.0, 2, 1.0), det(10.0, 1, 1.0), det(50.0, 3, 1.0)]);
        assert_eq!(r.text, "123");
        assert_eq!(r.probability, 1.0);
        let r = assemble_string(&[det(10.0, 4, 0.9), det(30.0, 4, 0.8)]);
        assert!((r.probability - 0.72).abs() < 1e-15);
        let empty = assemble_string(&[]);
        assert!(empty.is_empty() && empty.text.is_empty() && empty.probability == 1.0);
    }

    #[test]
    fn letterbox_roundtrip() {
        let lb = Letterbox::fit(77, 39, 128, 160).unwrap();
        let b = BoundingBox::new(3.25, 4.5, 20.0, 33.75).unwrap();
        let back = lb.to_image(&lb.to_network(&b).unwrap()).unwrap();
        for (u, v) in [
            (b.x_min(), back.x_min()),
            (b.y_min(), back.y_min()),
            (b.x_max(), back.x_max()),
            (b.y_max(), back.y_max()),
        ] {
            assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0));
        }
    }
}
