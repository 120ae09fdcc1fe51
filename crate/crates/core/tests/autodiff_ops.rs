//! Primitive-op checks: hand-computed values plus central finite differences.

use flowcast::autodiff::{grad_check, uniform, Graph, OpKind, Tensor, Var, DEFAULT_EPS};
use flowcast::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const PRIMITIVE_TOL: f64 = 1e-6;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng)
}

/// Reduces `y` to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = g.constant(rand_t(g.shape(y), &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check_all_seeds(
    shapes: &[&[usize]],
    mut build: impl FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<_> = shapes.iter().map(|s| rand_t(s, &mut rng)).collect();
        let err = grad_check(&params, DEFAULT_EPS, |g, v| {
            let y = build(g, v)?;
            weighted_sum(g, y, seed)
        })
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut g = Graph::<f64>::new();
    let m = Tensor::from_f64(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
    let i = g.constant(Tensor::eye(3));
    let mv = g.constant(m.clone());
    let out = g.matmul(i, mv).unwrap();
    assert_eq!(g.value(out), m.data());

    let a = g.constant(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
    let b = g.constant(Tensor::from_f64(&[2, 1], &[1., 1.]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[2, 1]);
    assert_eq!(g.value(c), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { .. }));
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn matmul_grad_of_sum_matches_fd() {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_t(&[3, 4], &mut rng);
        let b = rand_t(&[4, 2], &mut rng);
        let err = grad_check(&[a, b], DEFAULT_EPS, |g, v| {
            let c = g.matmul(v[0], v[1])?;
            Ok(g.sum(c))
        })
        .unwrap();
        worst = worst.max(err);
    }
    assert!(worst < PRIMITIVE_TOL, "worst {worst}");
}

#[test]
fn batched_and_transposed_matmul_grads() {
    let e = check_all_seeds(&[&[2, 3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]));
    assert!(e < PRIMITIVE_TOL, "{e}");
    let e = check_all_seeds(&[&[2, 3, 4], &[2, 4, 3]], |g, v| g.batch_matmul(v[0], v[1]));
    assert!(e < PRIMITIVE_TOL, "{e}");
    let e = check_all_seeds(&[&[2, 3, 4]], |g, v| g.transpose_last2(v[0]));
    assert!(e < PRIMITIVE_TOL, "{e}");
}

#[test]
fn conv2d_hand_case_all_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[1, 3, 3], 1.0));
    let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, None, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 3, 3]);
    assert_eq!(g.value(y), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
}

#[test]
fn conv2d_zero_kernel_and_unit_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xin = rand_t(&[2, 3, 4, 5], &mut rng);
    let mut g = Graph::<f64>::new();
    let x = g.constant(xin.clone());
    let zero = g.constant(Tensor::zeros(&[6, 3, 3, 3]));
    let y = g.conv2d(x, zero, None, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[2, 6, 4, 5]);
    assert!(g.value(y).iter().all(|&v| v == 0.0));

    // 1×1 identity kernel over channels reproduces the input exactly.
    let mut eye = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        eye.data_mut()[c * 3 + c] = 1.0;
    }
    let k = g.constant(eye);
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.value(y), xin.data());
}

#[test]
fn conv2d_non_integer_output_is_config_error() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 4, 4]));
    let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(matches!(g.conv2d(x, k, None, 2, 0), Err(Error::Config(_))));
}

/// Direct sliding-window evaluation, independent of im2col.
fn conv_direct(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let xx = (ox * stride + kx) as isize - pad as isize;
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                acc += x.at(&[ci, y as usize, xx as usize]) * k.at(&[co, ci, ky, kx]);
                            }
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_loops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_t(&[2, 5, 7], &mut rng);
        let k = rand_t(&[3, 2, 3, 3], &mut rng);
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            let mut g = Graph::<f64>::new();
            let xv = g.constant(x.clone());
            let kv = g.constant(k.clone());
            let y = g.conv2d(xv, kv, None, stride, pad).unwrap();
            let expected = conv_direct(&x, &k, stride, pad);
            for (a, b) in g.value(y).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv2d_grads_match_fd() {
    let e = check_all_seeds(&[&[2, 2, 3, 5], &[4, 2, 3, 3], &[4]], |g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), 1, 1)
    });
    assert!(e < PRIMITIVE_TOL, "{e}");
    let e = check_all_seeds(&[&[1, 5, 5], &[2, 1, 3, 3]], |g, v| g.conv2d(v[0], v[1], None, 2, 0));
    assert!(e < PRIMITIVE_TOL, "{e}");
    let e = check_all_seeds(&[&[2, 3, 6], &[4, 3, 3], &[4]], |g, v| g.conv1d(v[0], v[1], Some(v[2]), 1, 1));
    assert!(e < PRIMITIVE_TOL, "{e}");
}

#[test]
fn softmax_values_and_grads() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros(&[3]));
    let s = g.softmax(z, 0).unwrap();
    for &v in g.value(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    // large logits stay finite
    let big = g.constant(Tensor::from_f64(&[2, 3], &[1000., 999., -1000., 0., 0., 700.]).unwrap());
    let s = g.softmax(big, 1).unwrap();
    assert!(g.value(s).iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    for row in g.value(s).chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for axis in 0..3 {
        let e = check_all_seeds(&[&[2, 3, 4]], |g, v| g.softmax(v[0], axis));
        assert!(e < PRIMITIVE_TOL, "axis {axis}: {e}");
    }
}

#[test]
fn elementwise_semantics() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);
    let zeros = g.constant(Tensor::zeros(&[3]));
    let y = g.add(x, zeros).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let a = g.constant(Tensor::zeros(&[3, 2]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[3, 4]);
    let bad = g.constant(Tensor::zeros(&[2, 2]));
    assert!(g.concat(&[a, bad], 1).is_err());
    assert!(g.add(a, bad).is_err());
    assert!(g.reshape(a, &[5]).is_err());
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    let s = g.sum(r);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn elementwise_grads_match_fd() {
    let e = check_all_seeds(&[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]));
    assert!(e < PRIMITIVE_TOL, "add {e}");
    let e = check_all_seeds(&[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
    assert!(e < PRIMITIVE_TOL, "sub {e}");
    let e = check_all_seeds(&[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
    assert!(e < PRIMITIVE_TOL, "mul {e}");
    let e = check_all_seeds(&[&[3, 4]], |g, v| Ok(g.mul_scalar(v[0], 2.5)));
    assert!(e < PRIMITIVE_TOL, "mul_scalar {e}");
    let e = check_all_seeds(&[&[3, 4]], |g, v| Ok(g.relu(v[0])));
    assert!(e < PRIMITIVE_TOL, "relu {e}");
    let e = check_all_seeds(&[&[3, 4]], |g, v| Ok(g.sigmoid(v[0])));
    assert!(e < PRIMITIVE_TOL, "sigmoid {e}");
    let e = check_all_seeds(&[&[3, 4]], |g, v| Ok(g.tanh(v[0])));
    assert!(e < PRIMITIVE_TOL, "tanh {e}");
    let e = check_all_seeds(&[&[2, 3], &[2, 2], &[2, 1]], |g, v| g.concat(&[v[0], v[1], v[2]], 1));
    assert!(e < PRIMITIVE_TOL, "concat {e}");
    let e = check_all_seeds(&[&[2, 3, 4]], |g, v| g.reshape(v[0], &[6, 4]));
    assert!(e < PRIMITIVE_TOL, "reshape {e}");
    let e = check_all_seeds(&[&[2, 5, 3]], |g, v| g.narrow(v[0], 1, 1, 3));
    assert!(e < PRIMITIVE_TOL, "narrow {e}");
    let e = check_all_seeds(&[&[2, 3, 4], &[4, 6], &[6]], |g, v| g.linear(v[0], v[1], Some(v[2])));
    assert!(e < PRIMITIVE_TOL, "linear {e}");
    let e = check_all_seeds(&[&[4, 5], &[5], &[5]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    assert!(e < PRIMITIVE_TOL, "layer_norm {e}");
}

#[test]
fn mse_values_and_grad() {
    let mut g = Graph::<f64>::new();
    let p = g.param(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
    let t = g.constant(Tensor::zeros(&[2]));
    let l = g.mse(p, t).unwrap();
    assert_eq!(g.value(l), &[12.5]);
    g.backward(l).unwrap();
    // 2 (pred - target) / m
    assert_eq!(g.grad(p).unwrap(), &[3.0, 4.0]);

    let same = g.mse(p, p).unwrap();
    assert_eq!(g.value(same), &[0.0]);

    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_t(&[3, 4], &mut rng);
        let b = rand_t(&[3, 4], &mut rng);
        let e = grad_check(&[a, b], DEFAULT_EPS, |g, v| g.mse(v[0], v[1])).unwrap();
        assert!(e < PRIMITIVE_TOL, "{e}");
    }
}

#[test]
fn backward_semantics() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
    let unused = g.param(Tensor::zeros(&[2]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    assert!(g.grad(unused).is_none());
    // repeated backward accumulates
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0; 4]);
    g.zero_grad();
    assert_eq!(g.grad(x).unwrap(), &[0.0; 4]);
    // non-scalar loss
    assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    assert_eq!(g.op_kind(s), OpKind::Sum);
    assert_eq!(g.inputs(s), vec![x]);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::<f64>::new();
        let x = g.constant(rand_t(&[2, 1, 3, 6], &mut rng));
        let k = g.constant(rand_t(&[4, 1, 3, 3], &mut rng));
        let y = g.conv2d(x, k, None, 1, 1).unwrap();
        let s = g.softmax(y, 3).unwrap();
        g.value(s).to_vec()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn works_in_single_precision() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
    let b = g.constant(Tensor::from_f64(&[2, 1], &[1., 1.]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[3.0f32, 7.0]);
}

#[test]
fn relu_propagates_nan() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[3], &[f64::NAN, -1.0, 2.0]).unwrap());
    let y = g.relu(x);
    let v = g.value(y);
    assert!(v[0].is_nan());
    assert_eq!(&v[1..], &[0.0, 2.0]);
}
