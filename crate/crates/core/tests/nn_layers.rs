mod common;

use common::oracles::{conv_case, conv_oracle_diff, random, rng};
use proptest::prelude::*;
use ser_core::nn::{conv2d_forward, dropout_train, maxpool2d_backward, maxpool2d_forward, ConvGeometry, Layer, Mode};
use ser_core::rng::{stream, Stream};
use ser_core::tensor::Tensor;

#[test]
fn conv_matches_nested_loop_reference() {
    for seed in 0..20 {
        let diff = conv_oracle_diff(seed);
        assert!(diff <= 1e-10, "seed {seed}: {diff:e}");
    }
}

#[test]
fn conv_output_size() {
    // 130 wide, 3x3, pad 1 keeps size; stride 2 halves (rounding up)
    let x = Tensor::<f64>::zeros(&[1, 1, 128, 130]);
    let w = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
    let b = Tensor::<f64>::zeros(&[2]);
    let same = conv2d_forward(&x, &w, &b, ConvGeometry { stride: 1, padding: 1 }).unwrap();
    assert_eq!(same.shape(), &[1, 2, 128, 130]);
    let half = conv2d_forward(&x, &w, &b, ConvGeometry { stride: 2, padding: 1 }).unwrap();
    assert_eq!(half.shape(), &[1, 2, 64, 65]);
}

#[test]
fn dropout_drop_rate_and_scale() {
    let x = Tensor::<f64>::full(&[100_000], 1.0);
    for &rate in &[0.25, 0.5] {
        let mut r = stream(7, Stream::Dropout);
        let (y, _) = dropout_train(&x, rate, &mut r).unwrap();
        let n = y.len() as f64;
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64;
        let sigma = (n * rate * (1.0 - rate)).sqrt();
        assert!((zeros - n * rate).abs() < 5.0 * sigma, "rate {rate}: {zeros} zeros");
        let kept = 1.0 / (1.0 - rate);
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - kept).abs() < 1e-12));
        let mean = y.data().iter().sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 5.0 * sigma / n * kept);
    }
}

#[test]
fn dropout_is_identity_in_eval() {
    let mut g = rng(3);
    let x = random(&mut g, &[4, 8]);
    let mut layer = Layer::<f64>::dropout(0.5);
    let y = layer
        .forward(x.clone(), Mode::Eval, &mut stream(0, Stream::Dropout))
        .unwrap();
    assert_eq!(y, x);
}

#[test]
fn maxpool_floors_odd_sizes() {
    let mut shape = [1usize, 1, 128, 130];
    let mut sizes = Vec::new();
    for _ in 0..4 {
        let x = Tensor::<f32>::zeros(&shape);
        let (y, _) = maxpool2d_forward(&x).unwrap();
        shape = [1, 1, y.shape()[2], y.shape()[3]];
        sizes.push((shape[2], shape[3]));
    }
    assert_eq!(sizes, vec![(64, 65), (32, 32), (16, 16), (8, 8)]);
}

#[test]
fn maxpool_tie_goes_to_first_in_row_major_order() {
    let x = Tensor::<f64>::full(&[1, 1, 2, 2], 3.0);
    let (y, arg) = maxpool2d_forward(&x).unwrap();
    assert_eq!(y.data(), &[3.0]);
    let g = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    assert_eq!(
        maxpool2d_backward(&g, &arg, x.shape()).unwrap().data(),
        &[1.0, 0.0, 0.0, 0.0]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maxpool_output_dominates_window(vals in prop::collection::vec(-100i32..100, 36)) {
        let x = Tensor::new(vec![1, 1, 6, 6], vals.iter().map(|&v| v as f64).collect()).unwrap();
        let (y, arg) = maxpool2d_forward(&x).unwrap();
        for (oi, (&v, &a)) in y.data().iter().zip(&arg).enumerate() {
            let (oy, ox) = (oi / 3, oi % 3);
            prop_assert_eq!(v, x.data()[a]);
            for dy in 0..2 {
                for dx in 0..2 {
                    prop_assert!(x.data()[(2 * oy + dy) * 6 + 2 * ox + dx] <= v);
                }
            }
        }
    }

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, a in -3.0f64..3.0) {
        let (x, w, _, geom) = conv_case(seed);
        let zero_b = Tensor::zeros(&[w.shape()[0]]);
        let y = conv2d_forward(&x, &w, &zero_b, geom).unwrap();
        let ya = conv2d_forward(&x.map(|v| a * v), &w, &zero_b, geom).unwrap();
        for (p, q) in y.data().iter().zip(ya.data()) {
            prop_assert!((a * p - q).abs() < 1e-9);
        }
    }
}
