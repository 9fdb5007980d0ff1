//! Forward and backward passes for the fixed layer set: valid convolution,
//! max-pooling, fully-connected, ReLU, softmax, and cross-entropy loss.
//!
//! All accumulations run in a fixed order so results are bitwise
//! reproducible; the wide dot product and the axpy-based matmul keep that
//! order while still autovectorizing.

use crate::error::{Error, Result};
use crate::nncore::tensor::{expect_rank, Scalar, Tensor};

/// Dot product with eight fixed-order accumulators.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::ZERO;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// y += alpha * x
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// C(m x n) += A(m x k) * B(k x n), row-major. Output rows are processed
/// in tiles of eight so each B row is streamed once per tile instead of
/// once per row; the per-element accumulation order over k is unchanged.
pub(crate) fn matmul_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const TILE: usize = 8;
    let mut i0 = 0;
    while i0 < m {
        let rows = TILE.min(m - i0);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for i in i0..i0 + rows {
                axpy(a[i * k + p], brow, &mut c[i * n..(i + 1) * n]);
            }
        }
        i0 += rows;
    }
}

/// Unfold one (c,h,w) sample into a (c*kh*kw) x (oh*ow) patch matrix.
fn im2col<T: Scalar>(
    input: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (oh, ow): (usize, usize),
    cols: &mut [T],
) {
    let l = oh * ow;
    let mut r = 0;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[r * l..(r + 1) * l];
                for oy in 0..oh {
                    let src_row = &plane[(oy * stride + ky) * w..(oy * stride + ky) * w + w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        drow.copy_from_slice(&src_row[kx..kx + ow]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            *d = src_row[ox * stride + kx];
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatter-add the patch-matrix gradient back onto one (c,h,w) sample.
fn col2im_add<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (oh, ow): (usize, usize),
    grad: &mut [T],
) {
    let l = oh * ow;
    let mut r = 0;
    for ci in 0..c {
        let plane = &mut grad[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &cols[r * l..(r + 1) * l];
                for oy in 0..oh {
                    let prow = &mut plane[(oy * stride + ky) * w..(oy * stride + ky) * w + w];
                    let srow = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &s) in srow.iter().enumerate() {
                        prow[ox * stride + kx] += s;
                    }
                }
                r += 1;
            }
        }
    }
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<ConvDims> {
    expect_rank(input, 4, "conv input")?;
    expect_rank(weights, 4, "conv weights")?;
    expect_rank(bias, 1, "conv bias")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oc, ic, kh, kw) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    if ic != c {
        return Err(Error::dimension(
            "channels",
            format!("input has {c} channels but weights expect {ic}"),
        ));
    }
    if bias.len() != oc {
        return Err(Error::dimension(
            "bias",
            format!("bias has {} entries for {oc} output channels", bias.len()),
        ));
    }
    if stride == 0 {
        return Err(Error::dimension("stride", "stride must be >= 1"));
    }
    if kh > h || kw > w {
        return Err(Error::dimension(
            "kernel",
            format!("kernel {kh}x{kw} does not fit input {h}x{w}"),
        ));
    }
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        oc,
        kh,
        kw,
        oh: (h - kh) / stride + 1,
        ow: (w - kw) / stride + 1,
    })
}

/// Valid (no-padding) cross-correlation. Output shape is
/// (N, out_channels, floor((H-kh)/stride)+1, floor((W-kw)/stride)+1).
pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, weights, bias, stride)?;
    let k = d.c * d.kh * d.kw;
    let l = d.oh * d.ow;
    let mut out = vec![T::ZERO; d.n * d.oc * l];
    let mut cols = vec![T::ZERO; k * l];
    let in_stride = d.c * d.h * d.w;
    for s in 0..d.n {
        im2col(
            &input.data()[s * in_stride..(s + 1) * in_stride],
            (d.c, d.h, d.w),
            (d.kh, d.kw),
            stride,
            (d.oh, d.ow),
            &mut cols,
        );
        let out_s = &mut out[s * d.oc * l..(s + 1) * d.oc * l];
        for (o, row) in out_s.chunks_exact_mut(l).enumerate() {
            row.fill(bias.data()[o]);
        }
        matmul_acc(d.oc, k, l, weights.data(), &cols, out_s);
    }
    Tensor::new(&[d.n, d.oc, d.oh, d.ow], out)
}

/// Gradients of `conv_forward` with respect to input, weights, and bias.
/// `input` must be the tensor that produced `grad_out`'s shape.
pub fn conv_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let oc = weights.shape()[0];
    let bias = Tensor::zeros(&[oc])?;
    let d = conv_dims(input, weights, &bias, stride)?;
    let expected = [d.n, d.oc, d.oh, d.ow];
    if grad_out.shape() != expected {
        return Err(Error::Usage(format!(
            "grad_out shape {:?} does not match the forward output {:?} for the cached input",
            grad_out.shape(),
            expected
        )));
    }
    let k = d.c * d.kh * d.kw;
    let l = d.oh * d.ow;
    let in_stride = d.c * d.h * d.w;

    let mut grad_input = vec![T::ZERO; input.len()];
    let mut grad_w = vec![T::ZERO; weights.len()];
    let mut grad_b = vec![T::ZERO; oc];

    // W^T, K x oc, reused across samples for the input gradient.
    let mut wt = vec![T::ZERO; k * d.oc];
    for o in 0..d.oc {
        for r in 0..k {
            wt[r * d.oc + o] = weights.data()[o * k + r];
        }
    }

    let mut cols = vec![T::ZERO; k * l];
    let mut grad_cols = vec![T::ZERO; k * l];
    for s in 0..d.n {
        let g_s = &grad_out.data()[s * d.oc * l..(s + 1) * d.oc * l];
        im2col(
            &input.data()[s * in_stride..(s + 1) * in_stride],
            (d.c, d.h, d.w),
            (d.kh, d.kw),
            stride,
            (d.oh, d.ow),
            &mut cols,
        );
        for o in 0..d.oc {
            let grow = &g_s[o * l..(o + 1) * l];
            let mut bsum = T::ZERO;
            for &g in grow {
                bsum += g;
            }
            grad_b[o] += bsum;
        }
        // tile output channels so each cols row is streamed once per tile
        const TILE: usize = 8;
        let mut o0 = 0;
        while o0 < d.oc {
            let rows = TILE.min(d.oc - o0);
            for r in 0..k {
                let crow = &cols[r * l..(r + 1) * l];
                for o in o0..o0 + rows {
                    grad_w[o * k + r] += dot(&g_s[o * l..(o + 1) * l], crow);
                }
            }
            o0 += rows;
        }
        grad_cols.fill(T::ZERO);
        matmul_acc(k, d.oc, l, &wt, g_s, &mut grad_cols);
        col2im_add(
            &grad_cols,
            (d.c, d.h, d.w),
            (d.kh, d.kw),
            stride,
            (d.oh, d.ow),
            &mut grad_input[s * in_stride..(s + 1) * in_stride],
        );
    }

    Ok((
        Tensor::new(input.shape(), grad_input)?,
        Tensor::new(weights.shape(), grad_w)?,
        Tensor::new(&[oc], grad_b)?,
    ))
}

/// Max-pooling. Returns the pooled tensor and, per output element, the flat
/// index of the winning input position (first position in row-major window
/// order on ties).
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    expect_rank(input, 4, "maxpool input")?;
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (kh, kw) = kernel;
    if stride == 0 || kh == 0 || kw == 0 {
        return Err(Error::dimension(
            "stride",
            "pool kernel and stride must be >= 1",
        ));
    }
    if kh > h || kw > w {
        return Err(Error::dimension(
            "kernel",
            format!("pool kernel {kh}x{kw} does not fit input {h}x{w}"),
        ));
    }
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![T::ZERO; n * c * oh * ow];
    let mut argmax = vec![0u32; n * c * oh * ow];
    let data = input.data();
    let mut di = 0;
    for s in 0..n {
        for ci in 0..c {
            let base = (s * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = base + oy * stride * w + ox * stride;
                    let mut best = data[best_idx];
                    for ky in 0..kh {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..kw {
                            let v = data[row + kx];
                            if v > best {
                                best = v;
                                best_idx = row + kx;
                            }
                        }
                    }
                    out[di] = best;
                    argmax[di] = best_idx as u32;
                    di += 1;
                }
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, argmax))
}

/// Route pooled gradients back to the argmax positions; overlapping windows
/// accumulate additively.
pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Usage(format!(
            "argmax indices ({}) do not match grad_out ({}); indices are stale",
            argmax.len(),
            grad_out.len()
        )));
    }
    let numel: usize = input_shape.iter().product();
    let mut grad = vec![T::ZERO; numel];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        let idx = idx as usize;
        if idx >= numel {
            return Err(Error::Usage(format!(
                "argmax index {idx} outside input of {numel} elements; indices are stale"
            )));
        }
        grad[idx] += g;
    }
    Tensor::new(input_shape, grad)
}

/// Affine map y = W x + b. The input's trailing axes are flattened;
/// weights are (out_features, in_features).
pub fn fc_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    expect_rank(weights, 2, "fc weights")?;
    expect_rank(bias, 1, "fc bias")?;
    let (out_f, in_f) = (weights.shape()[0], weights.shape()[1]);
    if input.row_len() != in_f {
        return Err(Error::dimension(
            "features",
            format!(
                "input rows flatten to {} features but weights expect {in_f}",
                input.row_len()
            ),
        ));
    }
    if bias.len() != out_f {
        return Err(Error::dimension(
            "bias",
            format!("bias has {} entries for {out_f} outputs", bias.len()),
        ));
    }
    let n = input.rows();
    let mut out = vec![T::ZERO; n * out_f];
    // weight rows outermost: each is streamed once per batch
    for j in 0..out_f {
        let wrow = &weights.data()[j * in_f..(j + 1) * in_f];
        let b = bias.data()[j];
        for i in 0..n {
            out[i * out_f + j] = b + dot(wrow, input.row(i));
        }
    }
    Tensor::new(&[n, out_f], out)
}

/// Gradients of `fc_forward`. `input` is the cached forward input.
pub fn fc_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    expect_rank(grad_out, 2, "fc grad_out")?;
    let (out_f, in_f) = (weights.shape()[0], weights.shape()[1]);
    let n = input.rows();
    if grad_out.shape() != [n, out_f] || input.row_len() != in_f {
        return Err(Error::Usage(format!(
            "grad_out {:?} / input {:?} do not match weights {:?}; forward cache is stale",
            grad_out.shape(),
            input.shape(),
            weights.shape()
        )));
    }
    let mut grad_in = vec![T::ZERO; input.len()];
    let mut grad_w = vec![T::ZERO; weights.len()];
    let mut grad_b = vec![T::ZERO; out_f];
    for i in 0..n {
        let grow = grad_out.row(i);
        for (j, &g) in grow.iter().enumerate() {
            grad_b[j] += g;
        }
    }
    for j in 0..out_f {
        let wrow = &mut grad_w[j * in_f..(j + 1) * in_f];
        for i in 0..n {
            axpy(grad_out.data()[i * out_f + j], input.row(i), wrow);
        }
    }
    // ascending j per input row keeps the accumulation order fixed while
    // streaming each weight row only once per batch
    for j in 0..out_f {
        let wrow = &weights.data()[j * in_f..(j + 1) * in_f];
        for i in 0..n {
            axpy(
                grad_out.data()[i * out_f + j],
                wrow,
                &mut grad_in[i * in_f..(i + 1) * in_f],
            );
        }
    }
    Ok((
        Tensor::new(input.shape(), grad_in)?,
        Tensor::new(weights.shape(), grad_w)?,
        Tensor::new(&[out_f], grad_b)?,
    ))
}

/// Elementwise max(0, x).
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > T::ZERO { v } else { T::ZERO })
        .collect();
    Tensor::new(input.shape(), data).expect("shape preserved")
}

/// ReLU gradient: passes grad where the forward input was strictly
/// positive; an input of exactly 0 passes zero gradient.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::Usage(format!(
            "relu grad_out {:?} does not match cached input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::new(input.shape(), data)
}

/// Row-wise softmax with max-subtraction. Rows sum to 1 and every entry is
/// strictly positive.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(logits, 2, "softmax logits")?;
    if let Some(bad) = logits.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "softmax requires finite logits, got {bad:?}"
        )));
    }
    let k = logits.row_len();
    let mut out = vec![T::ZERO; logits.len()];
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let orow = &mut out[i * k..(i + 1) * k];
        let mut mx = row[0];
        for &v in &row[1..] {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::ZERO;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - mx).exp();
            sum += *o;
        }
        let tiny = T::min_positive();
        for o in orow.iter_mut() {
            *o = *o / sum;
            if *o < tiny {
                *o = tiny;
            }
        }
    }
    Tensor::new(logits.shape(), out)
}

/// Mean negative log-likelihood of the target classes plus the fused
/// gradient with respect to the logits, (p - onehot(target)) / batch.
pub fn cross_entropy_loss<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[usize],
) -> Result<(T, Tensor<T>)> {
    let n = probs.rows();
    let (sum, grad) = cross_entropy_parts(probs, targets, n)?;
    Ok((sum / T::from_f64(n as f64), grad))
}

/// Unnormalized loss sum with a caller-chosen gradient divisor, so batch
/// chunks can be combined without changing the arithmetic of a full-batch
/// pass.
pub(crate) fn cross_entropy_parts<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[usize],
    divisor: usize,
) -> Result<(T, Tensor<T>)> {
    expect_rank(probs, 2, "probs")?;
    let (n, k) = (probs.rows(), probs.row_len());
    if targets.len() != n {
        return Err(Error::Usage(format!(
            "{} targets for {n} probability rows",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::Usage(format!("target class {t} >= {k} classes")));
    }
    let inv = T::ONE / T::from_f64(divisor as f64);
    let mut grad = vec![T::ZERO; probs.len()];
    let mut loss_sum = T::ZERO;
    for (i, &t) in targets.iter().enumerate() {
        let prow = probs.row(i);
        let grow = &mut grad[i * k..(i + 1) * k];
        for (g, &p) in grow.iter_mut().zip(prow) {
            *g = p * inv;
        }
        grow[t] -= inv;
        let p = if prow[t] > T::min_positive() {
            prow[t]
        } else {
            T::min_positive()
        };
        loss_sum += -p.ln();
    }
    Ok((loss_sum, Tensor::new(probs.shape(), grad)?))
}
