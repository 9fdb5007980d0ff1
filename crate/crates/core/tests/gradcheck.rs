//! Finite-difference verification of every backward pass, in f64.
//!
//! Each check builds a scalar objective L = sum(c .* forward(x)) with fixed
//! random coefficients c, computes analytic gradients via the backward
//! functions, and compares against central differences (h = 1e-5). Inputs
//! near ReLU and max-pool decision boundaries are nudged apart so the
//! objective is differentiable at the sampled point.

use numstr_core::nncore::{
    conv_backward, conv_forward, cross_entropy_loss, fc_backward, fc_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward, softmax, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Values with pairwise gaps of at least 0.01, in shuffled order, so every
/// max-pool window keeps a clear winner under +-h perturbation.
fn rand_vec_distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm.into_iter()
        .map(|p| p as f64 * 0.013 - 0.5 * n as f64 * 0.013)
        .collect()
}

/// Uniform values kept away from zero for ReLU differentiability.
fn rand_vec_off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn weighted_sum(out: &Tensor<f64>, c: &[f64]) -> f64 {
    out.data().iter().zip(c).map(|(o, w)| o * w).sum()
}

/// Central-difference gradient of `objective` with respect to `x`.
fn numeric_grad(x: &mut [f64], mut objective: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let plus = objective(x);
        x[i] = orig - H;
        let minus = objective(x);
        x[i] = orig;
        grad[i] = (plus - minus) / (2.0 * H);
    }
    grad
}

fn assert_close(numeric: &[f64], analytic: &[f64], what: &str) {
    let mut worst = 0.0f64;
    for (&n, &a) in numeric.iter().zip(analytic) {
        worst = worst.max(rel_err(n, a));
    }
    assert!(
        worst < TOL,
        "{what}: max relative error {worst:.3e} exceeds {TOL:.0e}"
    );
}

#[test]
fn conv_backward_matches_finite_differences() {
    let shapes = [
        ((1usize, 1usize, 4usize, 4usize), (1usize, 2usize, 2usize), 1usize),
        ((2, 2, 5, 5), (3, 3, 3), 1),
        ((1, 3, 6, 5), (2, 3, 2), 2),
        ((2, 1, 6, 6), (2, 2, 2), 2),
    ];
    let mut done = 0;
    for (rep, &((n, ci, h, w), (oc, kh, kw), stride)) in
        shapes.iter().cycle().take(20).enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + rep as u64);
        let mut x = rand_vec(&mut rng, n * ci * h * w);
        let mut wgt = rand_vec(&mut rng, oc * ci * kh * kw);
        let mut bias = rand_vec(&mut rng, oc);
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let c = rand_vec(&mut rng, n * oc * oh * ow);

        let xt = Tensor::new(&[n, ci, h, w], x.clone()).unwrap();
        let wt = Tensor::new(&[oc, ci, kh, kw], wgt.clone()).unwrap();
        let bt = Tensor::new(&[oc], bias.clone()).unwrap();
        let out = conv_forward(&xt, &wt, &bt, stride).unwrap();
        let grad_out = Tensor::new(out.shape(), c.clone()).unwrap();
        let (gi, gw, gb) = conv_backward(&grad_out, &xt, &wt, stride).unwrap();

        let ng_x = numeric_grad(&mut x, |v| {
            let xt = Tensor::new(&[n, ci, h, w], v.to_vec()).unwrap();
            weighted_sum(&conv_forward(&xt, &wt, &bt, stride).unwrap(), &c)
        });
        assert_close(&ng_x, gi.data(), "conv grad_input");

        let ng_w = numeric_grad(&mut wgt, |v| {
            let wt = Tensor::new(&[oc, ci, kh, kw], v.to_vec()).unwrap();
            weighted_sum(&conv_forward(&xt, &wt, &bt, stride).unwrap(), &c)
        });
        assert_close(&ng_w, gw.data(), "conv grad_weights");

        let ng_b = numeric_grad(&mut bias, |v| {
            let bt = Tensor::new(&[oc], v.to_vec()).unwrap();
            weighted_sum(&conv_forward(&xt, &wt, &bt, stride).unwrap(), &c)
        });
        assert_close(&ng_b, gb.data(), "conv grad_bias");
        done += 1;
    }
    assert_eq!(done, 20);
}

#[test]
fn maxpool_backward_matches_finite_differences() {
    let shapes = [
        ((1usize, 1usize, 4usize, 4usize), (2usize, 2usize), 2usize),
        ((2, 2, 6, 6), (2, 2), 2),
        ((1, 1, 5, 5), (3, 3), 1),
        ((1, 2, 6, 4), (2, 2), 1),
    ];
    for (rep, &((n, ci, h, w), kernel, stride)) in shapes.iter().cycle().take(20).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + rep as u64);
        let mut x = rand_vec_distinct(&mut rng, n * ci * h * w);
        let xt = Tensor::new(&[n, ci, h, w], x.clone()).unwrap();
        let (out, idx) = maxpool_forward(&xt, kernel, stride).unwrap();
        let c = rand_vec(&mut rng, out.len());
        let grad_out = Tensor::new(out.shape(), c.clone()).unwrap();
        let gi = maxpool_backward(&grad_out, &idx, xt.shape()).unwrap();

        let ng = numeric_grad(&mut x, |v| {
            let xt = Tensor::new(&[n, ci, h, w], v.to_vec()).unwrap();
            let (out, _) = maxpool_forward(&xt, kernel, stride).unwrap();
            weighted_sum(&out, &c)
        });
        assert_close(&ng, gi.data(), "maxpool grad_input");
    }
}

#[test]
fn fc_backward_matches_finite_differences() {
    let shapes = [(1usize, 4usize, 3usize), (3, 7, 5), (2, 10, 4), (4, 6, 6)];
    for (rep, &(n, fin, fout)) in shapes.iter().cycle().take(20).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + rep as u64);
        let mut x = rand_vec(&mut rng, n * fin);
        let mut wgt = rand_vec(&mut rng, fout * fin);
        let mut bias = rand_vec(&mut rng, fout);
        let c = rand_vec(&mut rng, n * fout);

        let xt = Tensor::new(&[n, fin], x.clone()).unwrap();
        let wt = Tensor::new(&[fout, fin], wgt.clone()).unwrap();
        let bt = Tensor::new(&[fout], bias.clone()).unwrap();
        let out = fc_forward(&xt, &wt, &bt).unwrap();
        let grad_out = Tensor::new(out.shape(), c.clone()).unwrap();
        let (gi, gw, gb) = fc_backward(&grad_out, &xt, &wt).unwrap();

        let ng_x = numeric_grad(&mut x, |v| {
            let xt = Tensor::new(&[n, fin], v.to_vec()).unwrap();
            weighted_sum(&fc_forward(&xt, &wt, &bt).unwrap(), &c)
        });
        assert_close(&ng_x, gi.data(), "fc grad_input");

        let ng_w = numeric_grad(&mut wgt, |v| {
            let wt = Tensor::new(&[fout, fin], v.to_vec()).unwrap();
            weighted_sum(&fc_forward(&xt, &wt, &bt).unwrap(), &c)
        });
        assert_close(&ng_w, gw.data(), "fc grad_weights");

        let ng_b = numeric_grad(&mut bias, |v| {
            let bt = Tensor::new(&[fout], v.to_vec()).unwrap();
            weighted_sum(&fc_forward(&xt, &wt, &bt).unwrap(), &c)
        });
        assert_close(&ng_b, gb.data(), "fc grad_bias");
    }
}

#[test]
fn relu_backward_matches_finite_differences_away_from_zero() {
    for rep in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + rep);
        let n = rng.random_range(2..6);
        let k = rng.random_range(3..9);
        let mut x = rand_vec_off_zero(&mut rng, n * k);
        let c = rand_vec(&mut rng, n * k);
        let xt = Tensor::new(&[n, k], x.clone()).unwrap();
        let grad_out = Tensor::new(&[n, k], c.clone()).unwrap();
        let gi = relu_backward(&grad_out, &xt).unwrap();

        let ng = numeric_grad(&mut x, |v| {
            let xt = Tensor::new(&[n, k], v.to_vec()).unwrap();
            weighted_sum(&relu(&xt), &c)
        });
        assert_close(&ng, gi.data(), "relu grad_input");
    }
}

#[test]
fn softmax_cross_entropy_grad_matches_finite_differences() {
    for rep in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + rep);
        let n = rng.random_range(1..5);
        let k = rng.random_range(2..9);
        let mut logits = rand_vec(&mut rng, n * k);
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();

        let lt = Tensor::new(&[n, k], logits.clone()).unwrap();
        let probs = softmax(&lt).unwrap();
        let (_, grad) = cross_entropy_loss(&probs, &targets).unwrap();

        let ng = numeric_grad(&mut logits, |v| {
            let lt = Tensor::new(&[n, k], v.to_vec()).unwrap();
            let probs = softmax(&lt).unwrap();
            let (loss, _) = cross_entropy_loss(&probs, &targets).unwrap();
            loss
        });
        assert_close(&ng, grad.data(), "softmax+cross-entropy grad_logits");
    }
}
