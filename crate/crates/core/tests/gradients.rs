//! Central finite-difference checks of analytic gradients in f64.

use numstr::anchors::Anchor;
use numstr::detector::{assign_targets, detection_loss, LossWeights, SLOT_LEN};
use numstr::net::{Activation, Layer, NetSpec, Network, Tensor};
use numstr::{BoundingBox, DigitClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Probes `count` random parameters and input values of `net` under the
/// scalar `loss`, whose gradient with respect to the output is `loss_grad`.
fn check_network(
    net: &Network<f64>,
    input: &Tensor<f64>,
    loss: &dyn Fn(&Tensor<f64>) -> f64,
    loss_grad: &dyn Fn(&Tensor<f64>) -> Tensor<f64>,
    count: usize,
    seed: u64,
) {
    let (out, cache) = net.forward(input).unwrap();
    let (grads, input_grad) = net.backward(&cache, &loss_grad(&out)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tensors = net.params().tensors().count();
    let mut worst: f64 = 0.0;
    for probe in 0..count {
        // alternate between parameters and inputs
        let (analytic, numeric) = if probe % 4 == 3 {
            let i = rng.random_range(0..input.len());
            let eval = |d: f64| {
                let mut x = input.clone();
                x.data_mut()[i] += d;
                loss(&net.predict(&x).unwrap())
            };
            (input_grad.data()[i], (eval(STEP) - eval(-STEP)) / (2.0 * STEP))
        } else {
            let t = rng.random_range(0..n_tensors);
            let len = net.params().tensors().nth(t).unwrap().len();
            let i = rng.random_range(0..len);
            let eval = |d: f64| {
                let mut n2 = net.clone();
                n2.params_mut().tensors_mut().nth(t).unwrap().data_mut()[i] += d;
                loss(&n2.predict(input).unwrap())
            };
            (grads.tensors().nth(t).unwrap().data()[i], (eval(STEP) - eval(-STEP)) / (2.0 * STEP))
        };
        let e = rel_err(analytic, numeric);
        worst = worst.max(e);
        assert!(e <= TOLERANCE, "probe {probe}: analytic {analytic} numeric {numeric} (rel {e})");
    }
    eprintln!("worst relative error {worst:.2e} over {count} probes");
}

fn linear_functional(shape: &[usize], seed: u64) -> Tensor<f64> {
    random_tensor(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn check_linear_readout(spec: NetSpec, h: usize, w: usize, seed: u64) {
    let net = Network::<f64>::with_seed(spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let input = random_tensor(&[1, h, w], &mut rng);
    let out_shape = net.predict(&input).unwrap().shape().to_vec();
    let c = linear_functional(&out_shape, seed + 200);
    let loss = |o: &Tensor<f64>| o.data().iter().zip(c.data()).map(|(a, b)| a * b).sum::<f64>();
    let grad = |_: &Tensor<f64>| c.clone();
    check_network(&net, &input, &loss, &grad, 120, seed);
}

#[test]
fn linear_convolution() {
    let spec = NetSpec {
        in_channels: 1,
        layers: vec![Layer::Conv {
            out_channels: 3,
            kernel: 3,
            activation: Activation::Linear,
        }],
    };
    check_linear_readout(spec, 6, 7, 1);
}

#[test]
fn leaky_convolution() {
    let spec = NetSpec {
        in_channels: 1,
        layers: vec![Layer::conv3(4), Layer::head(2)],
    };
    check_linear_readout(spec, 8, 8, 2);
}

#[test]
fn pooling_stack() {
    let spec = NetSpec {
        in_channels: 1,
        layers: vec![Layer::conv3(3), Layer::MaxPool, Layer::conv3(4), Layer::MaxPool, Layer::head(5)],
    };
    check_linear_readout(spec, 12, 16, 3);
}

#[test]
fn full_detection_loss() {
    let anchors = vec![Anchor::new(6.0, 10.0).unwrap(), Anchor::new(10.0, 9.0).unwrap()];
    let spec = NetSpec::from_widths(&[4, 6, 8], anchors.len() * SLOT_LEN);
    assert_eq!(spec.stride(), 4);
    let net = Network::<f64>::with_seed(spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = random_tensor(&[1, 16, 24], &mut rng);
    let boxes = vec![
        (BoundingBox::new(2.0, 3.0, 9.0, 13.0).unwrap(), DigitClass::new(4).unwrap()),
        (BoundingBox::new(11.0, 2.5, 20.0, 12.0).unwrap(), DigitClass::new(9).unwrap()),
    ];
    let grid = assign_targets(&boxes, &anchors, 4, 6, 4).unwrap();
    assert_eq!(grid.responsible(), 2);
    let w = LossWeights::default();
    let loss = |o: &Tensor<f64>| detection_loss(o, &grid, &w).unwrap().0.total;
    let grad = |o: &Tensor<f64>| detection_loss(o, &grid, &w).unwrap().1;
    check_network(&net, &input, &loss, &grad, 200, 6);
}

#[test]
fn detection_loss_against_raw_predictions() {
    let anchors = vec![Anchor::new(8.0, 12.0).unwrap()];
    let boxes = vec![(BoundingBox::new(1.0, 2.0, 9.0, 15.0).unwrap(), DigitClass::new(0).unwrap())];
    let grid = assign_targets(&boxes, &anchors, 2, 3, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pred = random_tensor(&[SLOT_LEN, 2, 3], &mut rng);
    let w = LossWeights {
        coord: 5.0,
        obj: 1.0,
        noobj: 0.5,
        class: 3.0,
    };
    let (_, grad) = detection_loss(&pred, &grid, &w).unwrap();
    for i in 0..pred.len() {
        let eval = |d: f64| {
            let mut p = pred.clone();
            p.data_mut()[i] += d;
            detection_loss(&p, &grid, &w).unwrap().0.total
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        assert!(rel_err(grad.data()[i], numeric) <= TOLERANCE, "entry {i}");
    }
}
