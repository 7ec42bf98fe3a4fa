//! Class-wise NMS against a brute-force reference.

use numstr::{iou, nms, BoundingBox, Detection, DigitClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rank(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.posterior()
        .total_cmp(&a.posterior())
        .then(a.bbox.x_min().total_cmp(&b.bbox.x_min()))
        .then(a.class.cmp(&b.class))
}

/// Repeatedly takes the best remaining detection and discards every
/// remaining same-class detection overlapping it at or above the threshold.
fn reference(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut remaining = dets.to_vec();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if rank(&remaining[i], &remaining[best]).is_lt() {
                best = i;
            }
        }
        let top = remaining.swap_remove(best);
        remaining.retain(|d| d.class != top.class || iou(&d.bbox, &top.bbox) < thr);
        kept.push(top);
    }
    kept
}

fn random_instance(rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let n = rng.random_range(0..=50);
    let classes = rng.random_range(1..=4u8);
    (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..80.0);
            let y = rng.random_range(0.0..30.0);
            let w = rng.random_range(2.0..25.0);
            let h = rng.random_range(2.0..25.0);
            // coarse posteriors force ties
            let p = if rng.random_bool(0.3) {
                rng.random_range(0..5) as f64 / 4.0
            } else {
                rng.random_range(0.0..=1.0)
            };
            Detection::new(
                BoundingBox::new(x, y, x + w, y + h).unwrap(),
                DigitClass::new(rng.random_range(0..classes)).unwrap(),
                p,
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn matches_reference_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let dets = random_instance(&mut rng);
        let thr = [0.3, 0.45, 0.5, 0.7][case % 4];
        assert_eq!(nms(&dets, thr), reference(&dets, thr), "case {case}");
    }
}

#[test]
fn kept_same_class_pairs_overlap_below_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let kept = nms(&random_instance(&mut rng), 0.45);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                assert!(a.class != b.class || iou(&a.bbox, &b.bbox) < 0.45);
            }
        }
    }
}
