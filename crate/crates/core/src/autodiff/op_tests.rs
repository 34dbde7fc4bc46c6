use super::*;
use crate::error::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

type T = Tensor<f64>;

fn t2(rows: usize, cols: usize, data: &[f64]) -> T {
    Tensor::from_vec(&[rows, cols], data.to_vec()).unwrap()
}

#[test]
fn matmul_forward_example() {
    let tape = Tape::<f64>::new();
    let a = t2(1, 2, &[1., 2.]);
    let b = t2(2, 1, &[3., 4.]);
    let c = tape.matmul(&a, &b).unwrap();
    assert_eq!(c.shape(), &[1, 1]);
    assert_eq!(c.data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let tape = Tape::<f64>::new();
    let a = t2(1, 2, &[1., 2.]);
    let b = t2(1, 2, &[3., 4.]);
    assert!(matches!(tape.matmul(&a, &b), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn softmax_symmetry_example() {
    let tape = Tape::<f64>::new();
    let x = Tensor::from_vec(&[2], vec![0., 0.]).unwrap();
    let y = tape.softmax(&x, 1).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    use rand::Rng as _;
    let data: Vec<f64> = (0..35).map(|_| rng.random_range(-4.0..4.0)).collect();
    let tape = Tape::<f64>::new();
    let y = tape.softmax(&t2(5, 7, &data), 1).unwrap();
    for i in 0..5 {
        let s: f64 = y.data()[i * 7..(i + 1) * 7].iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
    }
}

#[test]
fn cosine_similarity_hand_value() {
    let tape = Tape::<f64>::new();
    let a = t2(1, 2, &[1., 1.]);
    let b = t2(1, 2, &[1., 0.]);
    let c = tape.cosine_similarity(&a, &b).unwrap();
    assert!((c.data()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
}

#[test]
fn layer_norm_standardizes_rows() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    use rand::Rng as _;
    let data: Vec<f64> = (0..48).map(|_| rng.random_range(-2.0..2.0)).collect();
    let tape = Tape::<f64>::new();
    let y = tape.layer_norm(&t2(4, 12, &data), 1e-5).unwrap();
    for i in 0..4 {
        let row = &y.data()[i * 12..(i + 1) * 12];
        let mean: f64 = row.iter().sum::<f64>() / 12.0;
        let var: f64 = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 12.0;
        assert!(mean.abs() <= 1e-10, "row {i} mean {mean}");
        // eps shifts the variance slightly below 1
        assert!((var - 1.0).abs() <= 1e-4, "row {i} var {var}");
    }
}

#[test]
fn concat_then_slice_is_identity() {
    let a = t2(2, 3, &[1., 2., 3., 4., 5., 6.]);
    let b = t2(2, 2, &[7., 8., 9., 10.]);
    let tape = Tape::<f64>::new();
    let cat = tape.concat(&[&a, &b], 1).unwrap();
    assert_eq!(tape.slice(&cat, 1, 0, 3).unwrap().data(), a.data());
    assert_eq!(tape.slice(&cat, 1, 3, 5).unwrap().data(), b.data());

    let c = t2(1, 3, &[-1., -2., -3.]);
    let cat0 = tape.concat(&[&a, &c], 0).unwrap();
    assert_eq!(tape.slice(&cat0, 0, 0, 2).unwrap().data(), a.data());
    assert_eq!(tape.slice(&cat0, 0, 2, 3).unwrap().data(), c.data());
}

#[test]
fn backward_of_sum_is_ones() {
    let tape = Tape::<f64>::new();
    let x = tape.watch(&Tensor::from_vec(&[3], vec![5., -2., 0.5]).unwrap().with_grad());
    let loss = tape.sum(&x).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.get(&x).unwrap(), vec![1., 1., 1.]);
}

#[test]
fn backward_of_square_at_three() {
    let tape = Tape::<f64>::new();
    let x = tape.watch(&Tensor::scalar_tensor(3.0).with_grad());
    let loss = tape.sum(&tape.mul(&x, &x).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.get(&x).unwrap(), vec![6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let tape = Tape::<f64>::new();
    let x = tape.watch(&t2(1, 2, &[1., 2.]).with_grad());
    let y = tape.scale(&x, 2.0).unwrap();
    assert!(matches!(tape.backward(&y), Err(Error::NotScalar(_))));
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.watch(&Tensor::scalar_tensor(1.0).with_grad());
    let unused = tape.watch(&t2(2, 2, &[1., 2., 3., 4.]).with_grad());
    let loss = tape.sum(&x).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.get(&unused).unwrap(), vec![0.0; 4]);
}

#[test]
fn gradients_accumulate_through_shared_input() {
    // y = x + x => dy/dx = 2
    let tape = Tape::<f64>::new();
    let x = tape.watch(&Tensor::scalar_tensor(1.5).with_grad());
    let loss = tape.sum(&tape.add(&x, &x).unwrap()).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.get(&x).unwrap(), vec![2.0]);
}

#[test]
fn non_finite_is_rejected() {
    let tape = Tape::<f64>::new();
    let x = t2(1, 2, &[-1.0, 2.0]);
    // log of a negative number is NaN
    assert!(matches!(tape.log(&x), Err(Error::NonFinite { .. })));
    let big = t2(1, 1, &[1e308]);
    assert!(matches!(tape.exp(&big), Err(Error::NonFinite { .. })));
}

#[test]
fn dropout_identity_paths() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let tape = Tape::<f64>::new();
    let x = t2(2, 2, &[1., 2., 3., 4.]);
    let eval = tape.dropout(&x, 0.5, false, &mut rng).unwrap();
    assert_eq!(eval.data(), x.data());
    let p0 = tape.dropout(&x, 0.0, true, &mut rng).unwrap();
    assert_eq!(p0.data(), x.data());
}

#[test]
fn dropout_scales_survivors() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let tape = Tape::<f64>::new();
    let x = Tensor::from_vec(&[1000], vec![1.0; 1000]).unwrap();
    let y = tape.dropout(&x, 0.25, true, &mut rng).unwrap();
    let kept = y.data().iter().filter(|&&v| v != 0.0).count();
    for &v in y.data() {
        assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
    }
    // 1000 Bernoulli(0.75) draws stay well inside +-5 sigma
    assert!((690..=810).contains(&kept), "kept {kept}");
}

#[test]
fn sigmoid_and_relu_values() {
    let tape = Tape::<f64>::new();
    let x = t2(1, 3, &[-1.0, 0.0, 2.0]);
    let r = tape.relu(&x).unwrap();
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
    let s = tape.sigmoid(&Tensor::scalar_tensor(0.0)).unwrap();
    assert_eq!(s.data(), &[0.5]);
}

#[test]
fn transpose_round_trip() {
    let tape = Tape::<f64>::new();
    let a = t2(2, 3, &[1., 2., 3., 4., 5., 6.]);
    let tt = tape.transpose(&tape.transpose(&a).unwrap()).unwrap();
    assert_eq!(tt.data(), a.data());
    assert_eq!(tt.shape(), a.shape());
}

#[test]
fn l2_norm_rows() {
    let tape = Tape::<f64>::new();
    let a = t2(2, 2, &[3., 4., 0., 2.]);
    let n = tape.l2_norm(&a).unwrap();
    assert_eq!(n.shape(), &[2, 1]);
    assert!((n.data()[0] - 5.0).abs() < 1e-12);
    assert!((n.data()[1] - 2.0).abs() < 1e-12);
}
