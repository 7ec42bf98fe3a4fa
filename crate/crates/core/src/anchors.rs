//! Anchor-box priors from ground-truth box shapes by k-means under the
//! `1 - IoU` distance.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 3;
pub const MAX_ITERATIONS: usize = 300;
pub const RESTARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub width: f64,
    pub height: f64,
}

impl Anchor {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::Validation(format!("anchor {width}x{height}")));
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn aspect(&self) -> f64 {
        self.width / self.height
    }
}

/// IoU of two shapes sharing a centre.
pub fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Sorted by area ascending.
    pub anchors: Vec<Anchor>,
    pub mean_iou: f64,
    /// Mean IoU after each assignment step of the winning restart.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn assign(boxes: &[(f64, f64)], centroids: &[(f64, f64)], labels: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (b, label) in boxes.iter().zip(labels.iter_mut()) {
        let (best, best_iou) = centroids
            .iter()
            .enumerate()
            .map(|(j, &c)| (j, shape_iou(*b, c)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        *label = best;
        total += best_iou;
    }
    total / boxes.len() as f64
}

fn lloyd(boxes: &[(f64, f64)], mut centroids: Vec<(f64, f64)>) -> (Vec<(f64, f64)>, Vec<f64>, usize) {
    let k = centroids.len();
    let mut labels = vec![usize::MAX; boxes.len()];
    let mut next = vec![0usize; boxes.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        history.push(assign(boxes, &centroids, &mut next));

        // an emptied cluster takes over the worst-fitting box
        for j in 0..k {
            if !next.contains(&j) {
                let worst = (0..boxes.len())
                    .min_by(|&a, &b| {
                        shape_iou(boxes[a], centroids[next[a]])
                            .total_cmp(&shape_iou(boxes[b], centroids[next[b]]))
                    })
                    .expect("non-empty");
                next[worst] = j;
                centroids[j] = boxes[worst];
            }
        }
        if next == labels {
            break;
        }
        labels.copy_from_slice(&next);
        for (j, c) in centroids.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = boxes
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == j)
                .map(|(b, _)| *b)
                .collect();
            let (mut ws, mut hs): (Vec<f64>, Vec<f64>) = members.iter().copied().unzip();
            let candidate = (median(&mut ws), median(&mut hs));
            // the median does not maximize IoU; keep it only when it does not hurt
            let fit = |c: (f64, f64)| members.iter().map(|&b| shape_iou(b, c)).sum::<f64>();
            if fit(candidate) >= fit(*c) {
                *c = candidate;
            }
        }
    }
    (centroids, history, iterations)
}

/// k-means over `(width, height)` shapes with distance `1 - IoU` and
/// per-cluster median updates (skipped when the median would lower the
/// cluster's total IoU, so the mean IoU never decreases). Runs [`RESTARTS`] seeded restarts, each from
/// `k` distinct shapes, and keeps the one with the highest mean IoU.
pub fn cluster_anchors(boxes: &[(f64, f64)], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if boxes.len() < k {
        return Err(Error::Argument(format!("{} boxes for k = {k}", boxes.len())));
    }
    if let Some(b) = boxes.iter().find(|b| !(b.0 > 0.0 && b.1 > 0.0)) {
        return Err(Error::Validation(format!("box shape {b:?}")));
    }
    let mut distinct: Vec<(f64, f64)> = boxes.to_vec();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::DegenerateCluster(format!(
            "only {} distinct shapes for k = {k}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..RESTARTS {
        let picks = rand::seq::index::sample(&mut rng, distinct.len(), k);
        let init: Vec<(f64, f64)> = picks.iter().map(|i| distinct[i]).collect();
        let (centroids, history, iterations) = lloyd(boxes, init);
        let mut labels = vec![0; boxes.len()];
        let mean_iou = assign(boxes, &centroids, &mut labels);
        if best.as_ref().is_none_or(|b| mean_iou > b.mean_iou) {
            let mut anchors = centroids
                .iter()
                .map(|&(w, h)| Anchor::new(w, h))
                .collect::<Result<Vec<_>>>()?;
            anchors.sort_by(|a, b| a.area().total_cmp(&b.area()).then(a.width.total_cmp(&b.width)));
            best = Some(Clustering {
                anchors,
                mean_iou,
                history,
                iterations,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Anchors (sorted by area) and the mean best-anchor IoU over all boxes.
pub fn kmeans_anchors(boxes: &[(f64, f64)], k: usize, seed: u64) -> Result<(Vec<Anchor>, f64)> {
    cluster_anchors(boxes, k, seed).map(|c| (c.anchors, c.mean_iou))
}

/// One `width height` row per anchor.
pub fn format_anchors(anchors: &[Anchor]) -> String {
    let mut s = String::new();
    for a in anchors {
        writeln!(s, "{} {}", a.width, a.height).expect("writing to a String");
    }
    s
}

pub fn parse_anchors(text: &str) -> Result<Vec<Anchor>> {
    let mut anchors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = || Error::Parse {
            file: "anchors".into(),
            line: i + 1,
            message: format!("expected `width height`, got {line:?}"),
        };
        let mut parts = line.split_whitespace();
        let w = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
        let h = parts.next().and_then(|v| v.parse().ok()).ok_or_else(err)?;
        if parts.next().is_some() {
            return Err(err());
        }
        anchors.push(Anchor::new(w, h)?);
    }
    if anchors.is_empty() {
        return Err(Error::Format("no anchors found".into()));
    }
    Ok(anchors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_repeated_shape() {
        let boxes = vec![(10.0, 20.0); 50];
        let (anchors, mean_iou) = kmeans_anchors(&boxes, 1, 0).unwrap();
        assert_eq!(anchors, vec![Anchor::new(10.0, 20.0).unwrap()]);
        assert_eq!(mean_iou, 1.0);
    }

    #[test]
    fn too_few_distinct_shapes() {
        let boxes = vec![(10.0, 20.0); 50];
        assert!(matches!(kmeans_anchors(&boxes, 2, 0), Err(Error::DegenerateCluster(_))));
        assert!(kmeans_anchors(&boxes, 0, 0).is_err());
        assert!(kmeans_anchors(&boxes[..1], 2, 0).is_err());
    }

    #[test]
    fn shape_iou_is_concentric() {
        assert_eq!(shape_iou((10.0, 10.0), (10.0, 10.0)), 1.0);
        assert!((shape_iou((10.0, 20.0), (20.0, 10.0)) - 100.0 / 300.0).abs() < 1e-12);
    }

    #[test]
    fn sorted_by_area_and_deterministic() {
        let boxes: Vec<(f64, f64)> = (0..200)
            .map(|i| (5.0 + (i % 17) as f64, 8.0 + (i % 23) as f64))
            .collect();
        let a = cluster_anchors(&boxes, 3, 9).unwrap();
        let b = cluster_anchors(&boxes, 3, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.anchors.windows(2).all(|w| w[0].area() <= w[1].area()));
    }

    #[test]
    fn anchor_text_roundtrip() {
        let anchors = vec![Anchor::new(16.5, 32.0).unwrap(), Anchor::new(30.0, 31.25).unwrap()];
        assert_eq!(parse_anchors(&format_anchors(&anchors)).unwrap(), anchors);
        assert!(parse_anchors("1 2 3\n").is_err());
        assert!(parse_anchors("").is_err());
        assert!(parse_anchors("0 4\n").is_err());
    }
}
