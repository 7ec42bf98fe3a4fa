//! Randomized properties of geometry, decoding and string assembly.

use numstr::anchors::Anchor;
use numstr::detector::SLOT_LEN;
use numstr::inference::{assemble_string, decode_grid, target_input_width};
use numstr::net::Tensor;
use numstr::{iou, BoundingBox, Detection, DigitClass};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0.0f64..100.0, 0.0f64..100.0, 0.1f64..50.0, 0.1f64..50.0)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn detection() -> impl Strategy<Value = Detection> {
    (bbox(), 0u8..10, 0.0f64..=1.0)
        .prop_map(|(b, c, p)| Detection::new(b, DigitClass::new(c).unwrap(), p).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn input_width_is_aligned_and_monotone(w in 1usize..5000) {
        let iw = target_input_width(w);
        prop_assert!(iw % 32 == 0 && iw >= 128);
        prop_assert!(target_input_width(w + 1) >= iw);
        // never more than half a cell away from 1.7 w once past the floor
        if w > 75 {
            prop_assert!((iw as f64 - 1.7 * w as f64).abs() <= 16.0 + 1e-9);
        }
    }

    #[test]
    fn decoded_centres_stay_in_their_cell(
        values in prop::collection::vec(-8.0f64..8.0, 2 * SLOT_LEN * 3 * 4),
    ) {
        let anchors = [Anchor::new(20.0, 30.0).unwrap(), Anchor::new(35.0, 40.0).unwrap()];
        let pred = Tensor::from_vec(&[2 * SLOT_LEN, 3, 4], values).unwrap();
        for d in decode_grid(&pred, &anchors, 32, 0.0).unwrap() {
            let (cx, cy) = d.bbox.center();
            prop_assert!((0.0..=128.0).contains(&cx) && (0.0..=96.0).contains(&cy));
        }
        let slot = numstr::inference::decode_slot(&pred, &anchors, 32, 2, 3, 1);
        prop_assert!(slot.center.0 >= 96.0 && slot.center.0 <= 128.0);
        prop_assert!(slot.center.1 >= 64.0 && slot.center.1 <= 96.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn string_probability_is_product_and_order_free(
        dets in prop::collection::vec(detection(), 0..8),
        rotate in 0usize..8,
    ) {
        let r = assemble_string(&dets);
        let product: f64 = dets.iter().map(Detection::posterior).product();
        prop_assert!((r.probability - product).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.probability));
        let min = dets.iter().map(Detection::posterior).fold(1.0, f64::min);
        prop_assert!(r.probability <= min + 1e-15);
        prop_assert_eq!(r.text.len(), dets.len());
        let mut shuffled = dets.clone();
        if !shuffled.is_empty() {
            let k = rotate % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
        }
        let r2 = assemble_string(&shuffled);
        prop_assert_eq!(&r.text, &r2.text);
        prop_assert_eq!(r.probability.to_bits(), r2.probability.to_bits());
        let centres: Vec<f64> = r.detections.iter().map(|d| d.bbox.center().0).collect();
        prop_assert!(centres.windows(2).all(|w| w[0] <= w[1]));
    }
}
