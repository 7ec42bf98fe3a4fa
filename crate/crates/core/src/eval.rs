//! Matching predictions to ground truth and string-level error attribution.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, Detection, StringSample};
use crate::inference::{predict_string, StringReading, Thresholds};

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(gt index, detection index, IoU)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_det: Vec<usize>,
}

/// Detection indices by descending posterior; ties fall back to geometry and
/// class so the order does not depend on input order.
fn posterior_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.posterior()
            .total_cmp(&da.posterior())
            .then(da.bbox.x_min().total_cmp(&db.bbox.x_min()))
            .then(da.bbox.y_min().total_cmp(&db.bbox.y_min()))
            .then(da.bbox.x_max().total_cmp(&db.bbox.x_max()))
            .then(da.bbox.y_max().total_cmp(&db.bbox.y_max()))
            .then(da.class.cmp(&db.class))
    });
    order
}

/// Greedy class-agnostic matching: detections in descending posterior each
/// take the unmatched ground truth of highest IoU, if it reaches the threshold.
pub fn match_detections(dets: &[Detection], gts: &[BoundingBox], iou_threshold: f64) -> MatchResult {
    let mut gt_taken = vec![false; gts.len()];
    let mut det_taken = vec![false; dets.len()];
    let mut pairs = Vec::new();
    for d in posterior_order(dets) {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !gt_taken[*g])
            .map(|(g, b)| (g, iou(&dets[d].bbox, b)))
            .fold(None::<(usize, f64)>, |acc, x| match acc {
                Some(a) if a.1 >= x.1 => Some(a),
                _ => Some(x),
            });
        if let Some((g, v)) = best {
            if v >= iou_threshold {
                gt_taken[g] = true;
                det_taken[d] = true;
                pairs.push((g, d, v));
            }
        }
    }
    MatchResult {
        pairs,
        unmatched_gt: (0..gts.len()).filter(|&g| !gt_taken[g]).collect(),
        unmatched_det: (0..dets.len()).filter(|&d| !det_taken[d]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Correct,
    ClassificationError,
    DetectionError,
}

/// Single cause per string: correct iff the text equals the label; otherwise
/// a detection error when any digit or detection is left unmatched, else a
/// classification error.
pub fn attribute_errors(reading: &StringReading, sample: &StringSample, iou_threshold: f64) -> Verdict {
    if reading.text == sample.label() {
        return Verdict::Correct;
    }
    let gts: Vec<BoundingBox> = sample.annotations().iter().map(|a| a.bbox).collect();
    let m = match_detections(&reading.detections, &gts, iou_threshold);
    if m.unmatched_gt.is_empty() && m.unmatched_det.is_empty() {
        Verdict::ClassificationError
    } else {
        Verdict::DetectionError
    }
}

/// Counts for one label length (or all lengths).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub samples: usize,
    pub correct: usize,
    pub classification: usize,
    pub detection: usize,
    pub digits: usize,
    pub digits_found: usize,
}

impl Tally {
    fn record(&mut self, verdict: Verdict, digits: usize, found: usize) {
        self.samples += 1;
        match verdict {
            Verdict::Correct => self.correct += 1,
            Verdict::ClassificationError => self.classification += 1,
            Verdict::DetectionError => self.detection += 1,
        }
        self.digits += digits;
        self.digits_found += found;
    }

    fn pct(&self, n: usize) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.samples as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.pct(self.correct)
    }

    pub fn classification_error(&self) -> f64 {
        self.pct(self.classification)
    }

    pub fn detection_error(&self) -> f64 {
        self.pct(self.detection)
    }

    /// Fraction of ground-truth digits matched by some detection.
    pub fn digit_recall(&self) -> f64 {
        if self.digits == 0 {
            0.0
        } else {
            self.digits_found as f64 / self.digits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub by_length: BTreeMap<usize, Tally>,
    pub overall: Tally,
}

impl EvalReport {
    /// Aggregates per-sample readings against their ground truth.
    pub fn from_readings(readings: &[StringReading], samples: &[StringSample], iou_threshold: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("cannot evaluate an empty dataset".into()));
        }
        if readings.len() != samples.len() {
            return Err(Error::Consistency(format!(
                "{} readings for {} samples",
                readings.len(),
                samples.len()
            )));
        }
        let mut report = Self::default();
        for (r, s) in readings.iter().zip(samples) {
            let verdict = attribute_errors(r, s, iou_threshold);
            let gts: Vec<BoundingBox> = s.annotations().iter().map(|a| a.bbox).collect();
            let found = match_detections(&r.detections, &gts, iou_threshold).pairs.len();
            report.by_length.entry(s.len()).or_default().record(verdict, s.len(), found);
            report.overall.record(verdict, s.len(), found);
        }
        Ok(report)
    }

    /// Machine-readable form: header `length accuracy class_err det_err samples`,
    /// one row per length, then an `all` row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("length\taccuracy\tclass_err\tdet_err\tsamples\n");
        let rows = self.by_length.iter().map(|(l, t)| (l.to_string(), t));
        for (label, t) in rows.chain(std::iter::once(("all".to_string(), &self.overall))) {
            writeln!(
                s,
                "{label}\t{:.2}\t{:.2}\t{:.2}\t{}",
                t.accuracy(),
                t.classification_error(),
                t.detection_error(),
                t.samples
            )
            .expect("writing to a String");
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>7}  {:>7}  {:>8}  {:>14}  {:>9}",
            "Length", "Samples", "Accuracy", "Classification", "Detection"
        )?;
        let row = |f: &mut fmt::Formatter<'_>, label: &str, t: &Tally| {
            writeln!(
                f,
                "{label:>7}  {:>7}  {:>8.2}  {:>14.2}  {:>9.2}",
                t.samples,
                t.accuracy(),
                t.classification_error(),
                t.detection_error()
            )
        };
        for (l, t) in &self.by_length {
            row(f, &l.to_string(), t)?;
        }
        row(f, "Average", &self.overall)?;
        write!(f, "digit recall (IoU {MATCH_IOU}): {:.2}%", 100.0 * self.overall.digit_recall())
    }
}

/// Reads every sample with `model` and attributes the outcomes.
pub fn evaluate(model: &Detector, samples: &[StringSample], thresholds: &Thresholds) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty dataset".into()));
    }
    let readings = samples
        .par_iter()
        .map(|s| predict_string(model, s.image(), thresholds))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_readings(&readings, samples, MATCH_IOU)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DigitAnnotation, DigitClass};
    use crate::inference::assemble_string;
    use crate::raster::GrayImage;

    fn bx(x: f64) -> BoundingBox {
        BoundingBox::new(x, 2.0, x + 10.0, 22.0).unwrap()
    }

    fn sample(label: &[u8]) -> StringSample {
        let anns = label
            .iter()
            .enumerate()
            .map(|(i, &c)| DigitAnnotation {
                class: DigitClass::new(c).unwrap(),
                bbox: bx(2.0 + 12.0 * i as f64),
            })
            .collect();
        StringSample::new(GrayImage::new(60, 24, 255), anns).unwrap()
    }

    fn reading(classes: &[u8]) -> StringReading {
        let dets: Vec<Detection> = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| Detection::new(bx(2.0 + 12.0 * i as f64), DigitClass::new(c).unwrap(), 0.9).unwrap())
            .collect();
        assemble_string(&dets)
    }

    #[test]
    fn identical_box_matches() {
        let d = Detection::new(bx(0.0), DigitClass::new(1).unwrap(), 0.5).unwrap();
        let m = match_detections(&[d], &[bx(0.0)], 0.5);
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);
        let m = match_detections(&[], &[bx(0.0), bx(20.0)], 0.5);
        assert_eq!(m.unmatched_gt, vec![0, 1]);
    }

    #[test]
    fn verdicts() {
        let s = sample(&[3, 5, 7]);
        assert_eq!(attribute_errors(&reading(&[3, 5, 7]), &s, 0.5), Verdict::Correct);
        assert_eq!(attribute_errors(&reading(&[3, 6, 7]), &s, 0.5), Verdict::ClassificationError);
        assert_eq!(attribute_errors(&reading(&[3, 5]), &s, 0.5), Verdict::DetectionError);
    }

    #[test]
    fn counting_report() {
        let samples: Vec<_> = (0..4).map(|_| sample(&[1, 2])).collect();
        let readings = vec![reading(&[1, 2]), reading(&[1, 2]), reading(&[1, 2]), reading(&[1, 3])];
        let r = EvalReport::from_readings(&readings, &samples, 0.5).unwrap();
        let t = r.by_length[&2];
        assert_eq!((t.accuracy(), t.classification_error(), t.detection_error()), (75.0, 25.0, 0.0));
        assert_eq!(t.digit_recall(), 1.0);
        assert!(r.to_tsv().starts_with("length\taccuracy\tclass_err\tdet_err\tsamples\n2\t75.00\t25.00\t0.00\t4\n"));
        let table = r.to_string();
        for col in ["Length", "Samples", "Accuracy", "Classification", "Detection"] {
            assert!(table.contains(col));
        }
        assert!(EvalReport::from_readings(&[], &[], 0.5).is_err());
    }
}
