//! Target assignment followed by grid decoding recovers the ground truth.

use numstr::anchors::Anchor;
use numstr::data::{generate_dataset, DigitSet, SynthConfig};
use numstr::detector::{assign_targets, slot_channel, Field, TargetGrid, SLOT_LEN};
use numstr::inference::{decode_grid, target_input_dims, Letterbox, NETWORK_STRIDE};
use numstr::net::Tensor;
use numstr::{BoundingBox, Detection};

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Raw prediction whose decoding reproduces every responsible slot exactly.
fn encode(grid: &TargetGrid) -> Tensor<f64> {
    let plane = grid.rows * grid.cols;
    let mut t = Tensor::zeros(&[grid.anchors * SLOT_LEN, grid.rows, grid.cols]);
    let d = t.data_mut();
    for a in 0..grid.anchors {
        for cell in 0..plane {
            let at = |f: usize| slot_channel(a, f) * plane + cell;
            match &grid.slots[a * plane + cell] {
                None => d[at(Field::Obj as usize)] = -50.0,
                Some(s) => {
                    d[at(Field::X as usize)] = logit(s.x);
                    d[at(Field::Y as usize)] = logit(s.y);
                    d[at(Field::W as usize)] = s.w;
                    d[at(Field::H as usize)] = s.h;
                    d[at(Field::Obj as usize)] = 50.0;
                    d[at(Field::Class as usize + s.class.index())] = 50.0;
                }
            }
        }
    }
    t
}

fn close(a: &BoundingBox, b: &BoundingBox, rel: f64) -> bool {
    [
        (a.x_min(), b.x_min()),
        (a.y_min(), b.y_min()),
        (a.x_max(), b.x_max()),
        (a.y_max(), b.y_max()),
    ]
    .iter()
    .all(|(u, v)| (u - v).abs() <= rel * u.abs().max(v.abs()).max(1.0))
}

#[test]
fn roundtrip_on_synthetic_samples() {
    let source = DigitSet::bundled().unwrap();
    let cfg = SynthConfig {
        count: 1000,
        min_len: 2,
        max_len: 6,
        seed: 11,
        split_fractions: (1.0, 0.0, 0.0),
        ..SynthConfig::default()
    };
    let (train, _, _) = generate_dataset(&cfg, &source).unwrap();
    assert_eq!(train.len(), 1000);
    let anchors = [
        Anchor::new(24.0, 36.0).unwrap(),
        Anchor::new(34.0, 42.0).unwrap(),
        Anchor::new(46.0, 52.0).unwrap(),
    ];
    let mut collisions = 0;
    let mut digits = 0;
    for sample in &train.samples {
        let (h, w) = target_input_dims(sample.image());
        let lb = Letterbox::fit(sample.image().width(), sample.image().height(), h, w).unwrap();
        let boxes: Vec<_> = sample
            .annotations()
            .iter()
            .map(|a| (lb.to_network(&a.bbox).unwrap(), a.class))
            .collect();
        let grid = assign_targets(&boxes, &anchors, h / NETWORK_STRIDE, w / NETWORK_STRIDE, NETWORK_STRIDE).unwrap();
        assert_eq!(grid.responsible() + grid.collisions, sample.len());
        collisions += grid.collisions;
        digits += sample.len();
        let decoded: Vec<Detection> = decode_grid(&encode(&grid), &anchors, NETWORK_STRIDE, 0.5).unwrap();
        assert_eq!(decoded.len(), grid.responsible());
        let mut recovered = 0;
        for a in sample.annotations() {
            let hit = decoded.iter().any(|d| {
                d.class == a.class && close(&lb.to_image(&d.bbox).unwrap(), &a.bbox, 1e-6)
            });
            recovered += usize::from(hit);
        }
        assert_eq!(recovered, grid.responsible(), "label {}", sample.label());
    }
    assert!(collisions * 20 < digits, "{collisions} collisions among {digits} digits");
}
