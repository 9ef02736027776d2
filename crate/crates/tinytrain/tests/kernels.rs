//! Tensor kernels against independent naive-loop oracles, plus algebraic
//! property checks.

mod common;

use common::{max_abs_diff, naive_conv2d, naive_dense, naive_depthwise, random_tensor, rng};
use proptest::prelude::*;
use rand::Rng;
use tinytrain::tensor::{
    activation, add, conv2d, dense, depthwise_conv2d, global_average_pool, ActivationKind,
    Padding, Tensor,
};

#[test]
fn conv2d_matches_naive_oracle_on_random_shapes() {
    let mut r = rng(101);
    for case in 0..50 {
        let (n, ih, iw, ic, oc) = (
            r.random_range(1..3usize),
            r.random_range(1..8usize),
            r.random_range(1..8usize),
            r.random_range(1..4usize),
            r.random_range(1..4usize),
        );
        let kh = r.random_range(1..=ih.min(3));
        let kw = r.random_range(1..=iw.min(3));
        let stride = r.random_range(1..3usize);
        let padding = if r.random::<bool>() { Padding::Same } else { Padding::Valid };
        let input = random_tensor(&mut r, vec![n, ih, iw, ic], 1.0);
        let kernel = random_tensor(&mut r, vec![kh, kw, ic, oc], 1.0);
        let bias = random_tensor(&mut r, vec![oc], 0.5);
        let got = conv2d(&input, &kernel, &bias, stride, padding).unwrap();
        let want = naive_conv2d(&input, &kernel, &bias, stride, padding);
        let diff = max_abs_diff(&got, &want);
        assert!(diff <= 1e-5, "case {case}: diff {diff}");
    }
}

#[test]
fn conv2d_random_valid_case_from_contract() {
    let mut r = rng(7);
    let input = random_tensor(&mut r, vec![1, 6, 6, 2], 1.0);
    let kernel = random_tensor(&mut r, vec![3, 3, 2, 4], 1.0);
    let bias = random_tensor(&mut r, vec![4], 0.5);
    let got = conv2d(&input, &kernel, &bias, 1, Padding::Valid).unwrap();
    let want = naive_conv2d(&input, &kernel, &bias, 1, Padding::Valid);
    assert_eq!(got.shape(), &[1, 4, 4, 4]);
    assert!(max_abs_diff(&got, &want) <= 1e-5);
}

#[test]
fn depthwise_matches_naive_oracle_on_random_shapes() {
    let mut r = rng(202);
    for case in 0..50 {
        let (n, ih, iw, c) = (
            r.random_range(1..3usize),
            r.random_range(2..8usize),
            r.random_range(2..8usize),
            r.random_range(1..5usize),
        );
        let kh = r.random_range(1..=ih.min(3));
        let kw = r.random_range(1..=iw.min(3));
        let stride = r.random_range(1..3usize);
        let padding = if r.random::<bool>() { Padding::Same } else { Padding::Valid };
        let input = random_tensor(&mut r, vec![n, ih, iw, c], 1.0);
        let kernel = random_tensor(&mut r, vec![kh, kw, c, 1], 1.0);
        let bias = random_tensor(&mut r, vec![c], 0.5);
        let got = depthwise_conv2d(&input, &kernel, &bias, stride, padding).unwrap();
        let want = naive_depthwise(&input, &kernel, &bias, stride, padding);
        let diff = max_abs_diff(&got, &want);
        assert!(diff <= 1e-5, "case {case}: diff {diff}");
    }
}

#[test]
fn depthwise_random_5x5x3_case_from_contract() {
    let mut r = rng(5);
    let input = random_tensor(&mut r, vec![1, 5, 5, 3], 1.0);
    let kernel = random_tensor(&mut r, vec![3, 3, 3, 1], 1.0);
    let bias = Tensor::zeros(vec![3]);
    let got = depthwise_conv2d(&input, &kernel, &bias, 1, Padding::Same).unwrap();
    let want = naive_depthwise(&input, &kernel, &bias, 1, Padding::Same);
    assert!(max_abs_diff(&got, &want) <= 1e-5);
}

#[test]
fn dense_matches_naive_oracle() {
    let mut r = rng(303);
    for _ in 0..50 {
        let (n, f, k) = (
            r.random_range(1..6usize),
            r.random_range(1..9usize),
            r.random_range(1..5usize),
        );
        let input = random_tensor(&mut r, vec![n, f], 2.0);
        let weights = random_tensor(&mut r, vec![f, k], 2.0);
        let bias = random_tensor(&mut r, vec![k], 1.0);
        let got = dense(&input, &weights, &bias).unwrap();
        let want = naive_dense(&input, &weights, &bias);
        assert!(max_abs_diff(&got, &want) <= 1e-6);
    }
}

#[test]
fn dense_4x8_times_8x3_case_from_contract() {
    let mut r = rng(11);
    let input = random_tensor(&mut r, vec![4, 8], 1.0);
    let weights = random_tensor(&mut r, vec![8, 3], 1.0);
    let bias = random_tensor(&mut r, vec![3], 1.0);
    let got = dense(&input, &weights, &bias).unwrap();
    let want = naive_dense(&input, &weights, &bias);
    assert!(max_abs_diff(&got, &want) <= 1e-6);
}

fn scale_input(t: &Tensor, a: f32) -> Tensor {
    let data = t.as_f32().unwrap().iter().map(|&v| a * v).collect();
    Tensor::from_f32(t.shape().to_vec(), data).unwrap()
}

/// Largest elementwise difference relative to the tensors' overall scale
/// (per-element ratios blow up at cancellation zeros).
fn max_rel_diff(a: &Tensor, b: &Tensor) -> f32 {
    let scale = a
        .as_f32()
        .unwrap()
        .iter()
        .chain(b.as_f32().unwrap())
        .fold(0.0f32, |m, &v| m.max(v.abs()))
        .max(1e-12);
    a.as_f32()
        .unwrap()
        .iter()
        .zip(b.as_f32().unwrap())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
        / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, a in 0.25f32..4.0) {
        let mut r = rng(seed);
        let input = random_tensor(&mut r, vec![1, 5, 5, 2], 1.0);
        let kernel = random_tensor(&mut r, vec![3, 3, 2, 3], 1.0);
        let zero_bias = Tensor::zeros(vec![3]);
        let direct = conv2d(&scale_input(&input, a), &kernel, &zero_bias, 1, Padding::Same).unwrap();
        let scaled = scale_input(
            &conv2d(&input, &kernel, &zero_bias, 1, Padding::Same).unwrap(),
            a,
        );
        prop_assert!(max_rel_diff(&direct, &scaled) <= 1e-5);
    }

    #[test]
    fn dense_is_linear_in_input(seed in 0u64..1000, a in 0.25f32..4.0) {
        let mut r = rng(seed);
        let input = random_tensor(&mut r, vec![3, 6], 1.0);
        let weights = random_tensor(&mut r, vec![6, 4], 1.0);
        let zero_bias = Tensor::zeros(vec![4]);
        let direct = dense(&scale_input(&input, a), &weights, &zero_bias).unwrap();
        let scaled = scale_input(&dense(&input, &weights, &zero_bias).unwrap(), a);
        prop_assert!(max_rel_diff(&direct, &scaled) <= 1e-5);
    }

    #[test]
    fn softmax_rows_are_distributions(seed in 0u64..1000) {
        let mut r = rng(seed);
        let t = random_tensor(&mut r, vec![4, 7], 30.0);
        let out = activation(&t, ActivationKind::Softmax).unwrap();
        for row in out.as_f32().unwrap().chunks(7) {
            let sum: f32 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn gap_preserves_channel_means(seed in 0u64..1000) {
        let mut r = rng(seed);
        let t = random_tensor(&mut r, vec![2, 4, 5, 3], 2.0);
        let out = global_average_pool(&t).unwrap();
        let data = t.as_f32().unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mut mean = 0.0f64;
                for y in 0..4 {
                    for x in 0..5 {
                        mean += f64::from(data[((n * 4 + y) * 5 + x) * 3 + c]);
                    }
                }
                mean /= 20.0;
                let got = out.as_f32().unwrap()[n * 3 + c];
                prop_assert!((got - mean as f32).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn add_commutes(seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, vec![2, 3, 3, 2], 1.0);
        let b = random_tensor(&mut r, vec![2, 3, 3, 2], 1.0);
        prop_assert_eq!(add(&a, &b).unwrap(), add(&b, &a).unwrap());
    }
}
