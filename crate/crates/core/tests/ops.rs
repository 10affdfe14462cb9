mod common;

use common::{random_tensor, rng};
use forge::autograd::{Activation, Tape};
use forge::tensor::Tensor;
use forge::Error;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_hand_example_and_identity() {
    let tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let ones = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let y = a.matmul(ones).unwrap();
    assert_eq!(y.shape(), vec![2, 1]);
    assert_eq!(y.to_tensor().data(), &[3.0, 7.0]);
    let i = tape.constant(Tensor::eye(2));
    assert_eq!(i.matmul(a).unwrap().to_tensor().data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
    let b = tape.constant(Tensor::<f64>::zeros(&[4, 2]));
    let msg = a.matmul(b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let s = |x: &[f64]| tape.constant(t(&[x.len()], x)).softmax(0).unwrap().to_tensor().to_f64_vec();
    assert!(close(&s(&[0.0, 0.0, 0.0]), &[1.0 / 3.0; 3], 1e-12));
    assert_eq!(s(&[0.0, f64::NEG_INFINITY]), vec![1.0, 0.0]);
    assert!(close(&s(&[1.0, 2.0, 3.0]), &[0.09003, 0.24473, 0.66524], 1e-4));
    let all_masked = tape.constant(t(&[2], &[f64::NEG_INFINITY; 2])).softmax(0);
    assert!(matches!(all_masked, Err(Error::FullyMasked { .. })));
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::new();
    let gain = tape.constant(Tensor::full(&[4], 1.0));
    let bias = tape.constant(Tensor::zeros(&[4]));
    let flat = tape.constant(t(&[4], &[5.0; 4])).layer_norm(gain, bias, 1e-6).unwrap();
    assert!(flat.to_tensor().data().iter().all(|v| v.abs() < 1e-12));

    let mut r = rng(3);
    let x = tape.constant(random_tensor(&mut r, &[6, 4]).map(|v| 3.0 * v + 1.0));
    let y = x.layer_norm(gain, bias, 1e-6).unwrap().to_tensor();
    for row in y.data().chunks(4) {
        let mean = row.iter().sum::<f64>() / 4.0;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-5 && (std - 1.0).abs() < 1e-5, "{mean} {std}");
    }
}

#[test]
fn dropout_examples() {
    let tape = Tape::new();
    let mut r = rng(4);
    let x = random_tensor(&mut r, &[100, 100]).map(|v| v + 2.0);
    let xv = tape.constant(x.clone());
    let seed = forge::rng::SeedStream::new(17);
    assert_eq!(xv.dropout(0.0, true, seed).unwrap().to_tensor(), x);
    assert_eq!(xv.dropout(0.5, false, seed).unwrap().to_tensor(), x);
    assert!(xv.dropout(1.0, true, seed).is_err());

    let y = xv.dropout(0.5, true, seed).unwrap().to_tensor();
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
    assert!((zeros - 0.5).abs() <= 0.02, "zero fraction {zeros}");
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let (mx, my) = (mean(x.data()), mean(y.data()));
    assert!(((my - mx) / mx).abs() <= 0.05, "{mx} vs {my}");
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!(*b == 0.0 || (b - 2.0 * a).abs() < 1e-12);
    }
    assert_eq!(xv.dropout(0.5, true, seed).unwrap().to_tensor(), y);
}

#[test]
fn activation_examples() {
    assert_eq!(Activation::Relu.apply(-1.0), 0.0);
    assert_eq!(Activation::Relu.apply(2.0), 2.0);
    assert_eq!(Activation::Tanh.apply(0.0), 0.0);
    assert!((Activation::Gelu.apply(1.0) - 0.8412).abs() < 1e-3);
    let err = "swish".parse::<Activation>().unwrap_err().to_string();
    assert!(err.contains("relu") && err.contains("tanh") && err.contains("gelu"), "{err}");
}

#[test]
fn embedding_examples() {
    let tape = Tape::new();
    let table = tape.leaf(t(&[5, 3], &(0..15).map(f64::from).collect::<Vec<_>>()));
    assert_eq!(table.embedding(&[0], &[1]).unwrap().to_tensor().data(), &[0.0, 1.0, 2.0]);
    let y = table.embedding(&[1, 1, 4], &[3]).unwrap();
    let g = tape.backward(y.sum_all()).unwrap();
    let gt = g.get(table).unwrap().data().to_vec();
    assert_eq!(&gt[3..6], &[2.0; 3]);
    assert_eq!(&gt[12..15], &[1.0; 3]);
    assert_eq!(&gt[0..3], &[0.0; 3]);
    let msg = table.embedding(&[5], &[1]).unwrap_err().to_string();
    assert!(msg.contains('5'), "{msg}");
}

#[test]
fn cross_entropy_examples() {
    let tape = Tape::new();
    let uniform = tape.constant(Tensor::zeros(&[1, 2, 4]));
    let l: f64 = uniform.cross_entropy(&[1, 3], None, 0.0).unwrap().value().item();
    assert!((l - 4f64.ln()).abs() < 1e-12);
    let confident = tape.constant(t(&[1, 3], &[100.0, 0.0, 0.0]));
    assert!(confident.cross_entropy(&[0], None, 0.0).unwrap().value().item() < 1e-12);
    assert!(uniform.cross_entropy(&[0, 0], Some(0), 0.0).is_err());

    // ignored positions get no gradient
    let logits = tape.leaf(t(&[2, 3], &[0.3, -0.2, 0.9, 1.0, 2.0, -1.0]));
    let g = tape.backward(logits.cross_entropy(&[2, 0], Some(0), 0.0).unwrap()).unwrap();
    assert_eq!(&g.get(logits).unwrap().data()[3..], &[0.0; 3]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(xs in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let tape = Tape::new();
        let y = tape.constant(t(&[xs.len()], &xs)).softmax(0).unwrap().to_tensor();
        prop_assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_matches_naive_loops(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, &[m, k]);
        let b = random_tensor(&mut r, &[k, n]);
        let tape = Tape::new();
        let y = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap().to_tensor();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.at(&[i, p]) * b.at(&[p, j])).sum();
                prop_assert!((y.at(&[i, j]) - want).abs() < 1e-12);
            }
        }
    }
}
