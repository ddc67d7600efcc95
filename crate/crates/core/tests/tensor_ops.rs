use proptest::prelude::*;
use sst_core::tensor::{Tape, Tensor, TensorError};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let y = tape.matmul(eye, b).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, 6.0, 7.0, 8.0]);

    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] }
    );
    assert!(err.to_string().contains("[2, 3] and [2, 3]"));
}

#[test]
fn matmul_broadcasts_leading_dims() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t(&[2, 1], &[10.0, 100.0]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(y), &[2, 1, 1]);
    assert_eq!(tape.value(y).data(), &[210.0, 430.0]);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[4], 3.3));
    let y = tape.softmax(x, 0).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let x = tape.constant(t(&[2], &[0.0, 3f64.ln()]));
    let y = tape.softmax(x, 0).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);

    assert!(matches!(tape.softmax(x, 1), Err(TensorError::Axis { .. })));
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let ones = tape.constant(Tensor::ones(&[2]));
    let zeros = tape.constant(Tensor::zeros(&[2]));

    let x = tape.constant(Tensor::full(&[3, 2], 4.0));
    let y = tape.layer_norm(x, ones, zeros, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let x = tape.constant(t(&[1, 2], &[1.0, 3.0]));
    let y = tape.layer_norm(x, ones, zeros, 1e-14).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] + 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);

    let g0 = tape.constant(Tensor::zeros(&[2]));
    let b7 = tape.constant(Tensor::full(&[2], 7.0));
    let x = tape.constant(t(&[2, 2], &[1.0, -5.0, 0.3, 9.0]));
    let y = tape.layer_norm(x, g0, b7, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 7.0));

    assert!(matches!(tape.layer_norm(x, ones, zeros, 0.0), Err(TensorError::Param(_))));
    assert!(matches!(tape.layer_norm(x, ones, zeros, -1.0), Err(TensorError::Param(_))));
}

fn delta_kernel(c: usize) -> Tensor<f64> {
    let mut w = Tensor::zeros(&[3, 3, c, c]);
    for i in 0..c {
        w.data_mut()[((4 * c) + i) * c + i] = 1.0;
    }
    w
}

#[test]
fn conv_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(&[5, 5, 1]));
    let w = tape.constant(Tensor::ones(&[3, 3, 1, 1]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d_3x3(x, w, b).unwrap();
    let v = tape.value(y).data();
    assert_eq!(v[0], 4.0);
    assert_eq!(v[2], 6.0);
    assert_eq!(v[5 * 2 + 2], 9.0);
    assert_eq!(v[5 * 4 + 4], 4.0);
    assert_eq!(v[5 * 2], 6.0);

    let x1 = tape.constant(t(&[1, 1, 1], &[-2.5]));
    let d = tape.constant(delta_kernel(1));
    let y = tape.conv2d_3x3(x1, d, b).unwrap();
    assert_eq!(tape.value(y).data(), &[-2.5]);

    let x2 = tape.constant(Tensor::ones(&[4, 4, 2]));
    assert!(matches!(tape.conv2d_3x3(x2, w, b), Err(TensorError::Shape { .. })));
}

/// Φ(x) by composite Simpson quadrature of the standard normal density.
fn normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let lo = -12.0;
    let h = (x - lo) / n as f64;
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(lo) + pdf(x);
    for i in 1..n {
        let z = lo + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(z);
    }
    s * h / 3.0
}

#[test]
fn gelu_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3], &[0.0, 1.0, 30.0]));
    let y = tape.gelu(x);
    let v = tape.value(y).data();
    assert_eq!(v[0], 0.0);
    let oracle = 1.0 * normal_cdf(1.0);
    assert!((oracle - 0.8413).abs() < 1e-4);
    assert!((v[1] - oracle).abs() < 1e-3, "{} vs {oracle}", v[1]);
    assert!((v[1] - 0.8412).abs() < 1e-3);
    assert!(((v[2] - 30.0) / 30.0).abs() < 1e-6);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
    let unused = tape.param(t(&[2], &[5.0, 6.0]));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0]);

    tape.zero_grad();
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);

    // without reset, a second sweep accumulates
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0, 12.0]);

    assert!(matches!(tape.backward(sq), Err(TensorError::Contract(_))));
}

#[test]
fn backward_is_linear_over_summed_graphs() {
    let x0 = t(&[2, 3], &[0.2, -0.7, 1.1, 0.4, 0.9, -1.3]);
    let build_f = |tape: &mut Tape<f64>, x| {
        let s = tape.softmax(x, 1).unwrap();
        let g = tape.gelu(s);
        let y = tape.mul(g, x).unwrap();
        tape.sum(y)
    };
    let build_g = |tape: &mut Tape<f64>, x| {
        let w = tape.constant(t(&[3, 2], &[1.0, -1.0, 0.5, 2.0, -0.3, 0.7]));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.gelu(y);
        tape.mean(y)
    };

    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let f = build_f(&mut tape, x);
    let g = build_g(&mut tape, x);
    let total = tape.add(f, g).unwrap();
    tape.backward(total).unwrap();
    let joint = tape.grad(x).unwrap().clone();

    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let f = build_f(&mut tape, x);
    tape.backward(f).unwrap();
    let g = build_g(&mut tape, x);
    tape.backward(g).unwrap();
    let separate = tape.grad(x).unwrap().clone();

    assert!(joint.max_abs_diff(&separate) < 1e-12);
}

#[test]
fn permute_and_gather() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
    let y = tape.permute(x, &[1, 0]).unwrap();
    assert_eq!(tape.shape(y), &[3, 2]);
    assert_eq!(tape.value(y).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    assert!(tape.permute(x, &[0, 0]).is_err());
    assert!(tape.gather(x, vec![6], &[1]).is_err());
}

#[test]
fn mac_counter_tracks_matmul_and_conv() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::ones(&[4, 3, 5]));
    let b = tape.constant(Tensor::ones(&[5, 2]));
    tape.matmul(a, b).unwrap();
    assert_eq!(tape.mac_count(), 4 * 3 * 5 * 2);
    let x = tape.constant(Tensor::ones(&[6, 7, 3]));
    let w = tape.constant(Tensor::ones(&[3, 3, 3, 4]));
    let bias = tape.constant(Tensor::zeros(&[4]));
    tape.conv2d_3x3(x, w, bias).unwrap();
    assert_eq!(tape.mac_count(), 120 + 6 * 7 * 9 * 3 * 4);
}

fn vec_strategy(len: std::ops::Range<usize>, mag: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-mag..mag, len)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(rows in 1usize..5, v in vec_strategy(2..9, 10.0)) {
        let cols = v.len();
        let data: Vec<f64> = (0..rows * cols).map(|i| v[i % cols] * (1.0 + (i / cols) as f64 * 0.1)).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[rows, cols], &data));
        let y = tape.softmax(x, 1).unwrap();
        let shifted: Vec<f64> = data.iter().map(|v| v + 1000.0).collect();
        let xs = tape.constant(t(&[rows, cols], &shifted));
        let ys = tape.softmax(xs, 1).unwrap();
        let (yv, ysv) = (tape.value(y).data().to_vec(), tape.value(ys).data().to_vec());
        for r in 0..rows {
            let s: f64 = yv[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        for (a, b) in yv.iter().zip(&ysv) {
            prop_assert!(*a > 0.0 && *a < 1.0 || cols == 1);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes(v in vec_strategy(4..12, 100.0)) {
        let c = v.len();
        let mean = v.iter().sum::<f64>() / c as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
        prop_assume!(var > 10.0);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, c], &v));
        let g = tape.constant(Tensor::ones(&[c]));
        let b = tape.constant(Tensor::zeros(&[c]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let yv = tape.value(y).data();
        let m = yv.iter().sum::<f64>() / c as f64;
        let s2 = yv.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c as f64;
        prop_assert!(m.abs() < 1e-10);
        prop_assert!((s2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn delta_conv_is_bit_exact_identity(
        (h, w, c, data) in (1usize..7, 1usize..7, 1usize..4)
            .prop_flat_map(|(h, w, c)| (Just(h), Just(w), Just(c), vec_strategy(h * w * c..h * w * c + 1, 1e3)))
    ) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[h, w, c], &data));
        let k = tape.constant(delta_kernel(c));
        let b = tape.constant(Tensor::zeros(&[c]));
        let y = tape.conv2d_3x3(x, k, b).unwrap();
        prop_assert_eq!(tape.value(y).data(), &data[..]);
    }
}
