use gesturewire::tensorad::gradcheck::{max_rel_error, rel_error};
use gesturewire::tensorad::{Graph, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Builds a scalar loss from a single leaf; returns the loss value.
fn eval_scalar(shape: &[usize], x: &[f64], build: &dyn Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = g.leaf(Tensor::new(shape.to_vec(), x.to_vec()).unwrap(), true);
    let loss = build(&mut g, v);
    g.value(loss).data()[0]
}

/// Analytic gradient vs central differences for every coordinate of one leaf.
fn check_leaf(shape: &[usize], x: &[f64], build: &dyn Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = g.leaf(Tensor::new(shape.to_vec(), x.to_vec()).unwrap(), true);
    let loss = build(&mut g, v);
    let grad = g.backward(loss).unwrap().get(v);
    let all: Vec<usize> = (0..x.len()).collect();
    max_rel_error(|p| eval_scalar(shape, p, build), x, grad.data(), &all, 1e-5)
}

/// Weighted sum with fixed pseudo-random weights so gradients are not uniform.
fn weighted_sum(g: &mut Graph, y: Var) -> Var {
    let t = g.value(y);
    let w: Vec<f64> = (0..t.len()).map(|i| ((i * 7 + 3) as f64 * 0.61).sin()).collect();
    let wv = g.constant(Tensor::new(t.shape().to_vec(), w).unwrap());
    let p = g.mul(y, wv).unwrap();
    g.sum(p)
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut g = Graph::new();
    let i2 = g.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = g.constant(mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
    let c = g.matmul(i2, b).unwrap();
    assert_eq!(g.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

    let a = g.constant(mat(&[&[1.0, 2.0]]));
    let b = g.constant(mat(&[&[3.0], &[4.0]]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[1, 1]);
    assert_eq!(g.value(c).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] }
    );
    assert!(err.to_string().contains("[2, 3] and [2, 3]"));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, &[3, 3]);
    let b = random(&mut rng, &[3, 3]);
    let bc = b.clone();
    let build = move |g: &mut Graph, x: Var| {
        let bv = g.constant(bc.clone());
        let c = g.matmul(x, bv).unwrap();
        g.sum(c)
    };
    assert!(check_leaf(&[3, 3], a.data(), &build) < 1e-6);
    // d/db as well
    let ac = a.clone();
    let build_b = move |g: &mut Graph, x: Var| {
        let av = g.constant(ac.clone());
        let c = g.matmul(av, x).unwrap();
        g.sum(c)
    };
    assert!(check_leaf(&[3, 3], b.data(), &build_b) < 1e-6);
}

#[test]
fn conv1d_scalar_kernel_and_averaging() {
    let mut g = Graph::new();
    let x = g.constant(mat(&[&[1.0, 2.0, 3.0]]));
    let w = g.constant(Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap());
    let b = g.constant(Tensor::new(vec![1], vec![0.0]).unwrap());
    let y = g.conv1d_same(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0]);

    let x = g.constant(mat(&[&[3.0, 3.0, 3.0]]));
    let w = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0 / 3.0; 3]).unwrap());
    let y = g.conv1d_same(x, w, b).unwrap();
    // direct convolution with zero padding: (0+3+3)/3, (3+3+3)/3, (3+3+0)/3
    let expected = [2.0, 3.0, 2.0];
    for (v, e) in g.value(y).data().iter().zip(expected) {
        assert!((v - e).abs() < 1e-12);
    }
}

#[test]
fn conv1d_even_kernel_padding_split() {
    // k = 8 pads 3 on the left and 4 on the right; with a one-hot kernel at
    // tap j the output is x shifted by j - 3.
    let mut g = Graph::new();
    let xs: Vec<f64> = (1..=10).map(f64::from).collect();
    let x = g.constant(Tensor::new(vec![1, 10], xs.clone()).unwrap());
    let b = g.constant(Tensor::new(vec![1], vec![0.0]).unwrap());
    for tap in 0..8 {
        let mut k = vec![0.0; 8];
        k[tap] = 1.0;
        let w = g.constant(Tensor::new(vec![1, 1, 8], k).unwrap());
        let y = g.conv1d_same(x, w, b).unwrap();
        for t in 0..10 {
            let src = t as isize + tap as isize - 3;
            let expected = if (0..10).contains(&src) { xs[src as usize] } else { 0.0 };
            assert_eq!(g.value(y).data()[t], expected);
        }
    }
}

#[test]
fn conv1d_kernel_longer_than_sequence_is_rejected() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 4]));
    let w = g.constant(Tensor::zeros(&[1, 1, 8]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(matches!(g.conv1d_same(x, w, b), Err(TensorError::InvalidConfig(_))));
}

#[test]
fn conv1d_gradcheck_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[2, 16]);
    let w = random(&mut rng, &[3, 2, 8]);
    let b = random(&mut rng, &[3]);
    let (wc, bc) = (w.clone(), b.clone());
    let build_x = move |g: &mut Graph, v: Var| {
        let (wv, bv) = (g.constant(wc.clone()), g.constant(bc.clone()));
        let y = g.conv1d_same(v, wv, bv).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_leaf(&[2, 16], x.data(), &build_x) < 1e-5);
    let (xc, bc) = (x.clone(), b.clone());
    let build_w = move |g: &mut Graph, v: Var| {
        let (xv, bv) = (g.constant(xc.clone()), g.constant(bc.clone()));
        let y = g.conv1d_same(xv, v, bv).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_leaf(&[3, 2, 8], w.data(), &build_w) < 1e-5);
    let (xc, wc) = (x.clone(), w.clone());
    let build_b = move |g: &mut Graph, v: Var| {
        let (xv, wv) = (g.constant(xc.clone()), g.constant(wc.clone()));
        let y = g.conv1d_same(xv, wv, v).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_leaf(&[3], b.data(), &build_b) < 1e-5);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let y = g.softmax(x);
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
    let y = g.softmax(x);
    assert_eq!(g.value(y).data()[0], 1.0);
    assert!(g.value(y).data()[1] < 1e-300);
    assert!(g.value(y).all_finite());

    let x = g.constant(Tensor::new(vec![3], vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap());
    let y = g.softmax(x);
    for (v, e) in g.value(y).data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((v - e).abs() < 1e-15);
    }
}

#[test]
fn layernorm_examples_and_gradcheck() {
    let mut g = Graph::new();
    let gain = g.constant(Tensor::filled(&[4], 1.0));
    let shift = g.constant(Tensor::zeros(&[4]));
    let x = g.constant(Tensor::filled(&[1, 4], 7.5));
    let y = g.layernorm(x, gain, shift, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));

    let gain = g.constant(Tensor::filled(&[2], 1.0));
    let shift = g.constant(Tensor::zeros(&[2]));
    let x = g.constant(mat(&[&[1.0, 3.0]]));
    let y = g.layernorm(x, gain, shift, 1e-5).unwrap();
    // population variance of {1,3} is 1
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((g.value(y).data()[0] + scale).abs() < 1e-12);
    assert!((g.value(y).data()[1] - scale).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[3, 8]);
    let gn = random(&mut rng, &[8]);
    let sh = random(&mut rng, &[8]);
    let (gc, sc) = (gn.clone(), sh.clone());
    let build = move |g: &mut Graph, v: Var| {
        let (a, b) = (g.constant(gc.clone()), g.constant(sc.clone()));
        let y = g.layernorm(v, a, b, 1e-5).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_leaf(&[3, 8], x.data(), &build) < 1e-5);
    let (xc, sc) = (x.clone(), sh.clone());
    let build_gain = move |g: &mut Graph, v: Var| {
        let (a, b) = (g.constant(xc.clone()), g.constant(sc.clone()));
        let y = g.layernorm(a, v, b, 1e-5).unwrap();
        weighted_sum(g, y)
    };
    assert!(check_leaf(&[8], gn.data(), &build_gain) < 1e-5);
}

#[test]
fn backward_simple_cases() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = g.mul(x, x).unwrap();
    assert_eq!(g.backward(y).unwrap().get(x).data(), &[6.0]);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![1, 4], vec![0.3, -1.0, 2.0, 0.1]).unwrap(), true);
    let s = g.softmax(x);
    let loss = g.sum(s);
    let grad = g.backward(loss).unwrap().get(x);
    assert!(grad.data().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[2, 2]), true);
    assert_eq!(g.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2, 2]));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0), true);
    let unused = g.leaf(Tensor::zeros(&[3, 2]), true);
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(unused), Tensor::zeros(&[3, 2]));
}

#[test]
fn shared_subexpression_sums_path_gradients() {
    // loss = sum(h * h + h) with h = 2x; dloss/dx = (2h + 1) * 2
    let xs = vec![0.5, -1.25, 2.0];
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3], xs.clone()).unwrap(), true);
    let h = g.scale(x, 2.0);
    let hh = g.mul(h, h).unwrap();
    let y = g.add(hh, h).unwrap();
    let loss = g.sum(y);
    let grad = g.backward(loss).unwrap().get(x);
    for (gv, xv) in grad.data().iter().zip(&xs) {
        assert!((gv - (4.0 * xv + 1.0) * 2.0).abs() < 1e-12);
    }

    // same function built with the shared node duplicated
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3], xs.clone()).unwrap(), true);
    let h1 = g.scale(x, 2.0);
    let h2 = g.scale(x, 2.0);
    let h3 = g.scale(x, 2.0);
    let hh = g.mul(h1, h2).unwrap();
    let y = g.add(hh, h3).unwrap();
    let loss = g.sum(y);
    let dup = g.backward(loss).unwrap().get(x);
    assert_eq!(grad, dup);
}

#[test]
fn elementwise_and_structural_ops_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random(&mut rng, &[4, 6]);
    type Build = Box<dyn Fn(&mut Graph, Var) -> Var>;
    let cases: Vec<(&str, Build)> = vec![
        ("gelu", Box::new(|g, v| { let y = g.gelu(v); weighted_sum(g, y) })),
        ("relu", Box::new(|g, v| { let y = g.relu(v); weighted_sum(g, y) })),
        ("softmax", Box::new(|g, v| { let y = g.softmax(v); weighted_sum(g, y) })),
        ("log_softmax", Box::new(|g, v| { let y = g.log_softmax(v); weighted_sum(g, y) })),
        ("transpose", Box::new(|g, v| { let y = g.transpose(v).unwrap(); weighted_sum(g, y) })),
        ("mean_rows", Box::new(|g, v| { let y = g.mean_rows(v).unwrap(); weighted_sum(g, y) })),
        ("mean", Box::new(|g, v| { let y = g.mul(v, v).unwrap(); g.mean(y) })),
        ("slice_cols", Box::new(|g, v| { let y = g.slice_cols(v, 1, 4).unwrap(); weighted_sum(g, y) })),
        ("concat_cols", Box::new(|g, v| {
            let a = g.slice_cols(v, 0, 2).unwrap();
            let b = g.slice_cols(v, 2, 6).unwrap();
            let y = g.concat_cols(&[b, a, b]).unwrap();
            weighted_sum(g, y)
        })),
        ("concat_rows", Box::new(|g, v| {
            let y = g.concat_rows(&[v, v]).unwrap();
            weighted_sum(g, y)
        })),
        ("select_rows", Box::new(|g, v| { let y = g.select_rows(v, &[3, 0, 3]).unwrap(); weighted_sum(g, y) })),
        ("normalize_rows", Box::new(|g, v| { let y = g.normalize_rows(v).unwrap(); weighted_sum(g, y) })),
        ("row_norms", Box::new(|g, v| { let y = g.row_norms(v).unwrap(); weighted_sum(g, y) })),
        ("add_bias", Box::new(|g, v| {
            let b = g.slice_cols(v, 0, 1).unwrap();
            let b = g.reshape(b, &[4]).unwrap();
            let sq = g.slice_cols(v, 0, 4).unwrap();
            let y = g.add_bias(sq, b).unwrap();
            weighted_sum(g, y)
        })),
        ("sub", Box::new(|g, v| {
            let t = g.transpose(v).unwrap();
            let t = g.reshape(t, &[4, 6]).unwrap();
            let y = g.sub(v, t).unwrap();
            let y = g.mul(y, y).unwrap();
            weighted_sum(g, y)
        })),
        ("clamp_log", Box::new(|g, v| {
            let y = g.softmax(v);
            let y = g.clamp_log(y, 1e-12);
            weighted_sum(g, y)
        })),
    ];
    for (name, build) in cases {
        let err = check_leaf(&[4, 6], x.data(), build.as_ref());
        assert!(err < 1e-5, "{name}: rel error {err}");
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let a = g.leaf(random(&mut rng, &[5, 7]), true);
        let b = g.leaf(random(&mut rng, &[7, 3]), true);
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c);
        let l = g.clamp_log(s, 1e-12);
        let loss = g.mean(l);
        let grads = g.backward(loss).unwrap();
        (g.value(loss).clone(), grads.get(a), grads.get(b))
    };
    assert_eq!(run(), run());
}

#[test]
fn rel_error_floor() {
    assert_eq!(rel_error(0.0, 0.0), 0.0);
    assert!(rel_error(1.0, 1.0 + 1e-9) < 1e-8);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in proptest::collection::vec(
        proptest::collection::vec(-500.0f64..500.0, 5), 1..6)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let y = g.softmax(x);
        for r in 0..rows.len() {
            let s: f64 = g.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(g.value(y).row(r).iter().all(|v| *v >= 0.0));
        }
    }
}
