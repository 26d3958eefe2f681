//! Forward and backward kernels for the fixed layer set: 3x3 same-padding
//! convolution, 2x2 max pooling, dense affine, ReLU, sigmoid, row softmax,
//! global average pooling, and the two classification losses.
//!
//! Every kernel has a fixed reduction order, so outputs are bit-identical
//! across runs regardless of optimization level or thread count.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// y[i] += a * x[i] over equal-length slices.
#[inline(always)]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = xi.mul_add(a, *yi);
    }
}

/// Dot product with 32 independent accumulator lanes.
///
/// The lane layout is fixed, so the result does not depend on vector width
/// or scheduling; 32 lanes give the compiler several packed FMA chains to
/// hide instruction latency behind.
#[inline(always)]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    const L: usize = 32;
    let mut acc = [T::zero(); L];
    let mut xc = x.chunks_exact(L);
    let mut yc = y.chunks_exact(L);
    for (xs, ys) in (&mut xc).zip(&mut yc) {
        for j in 0..L {
            acc[j] = xs[j].mul_add(ys[j], acc[j]);
        }
    }
    let mut tail = T::zero();
    for (a, b) in xc.remainder().iter().zip(yc.remainder()) {
        tail = a.mul_add(*b, tail);
    }
    // In-place pairwise tree, fixed order.
    let mut width = L / 2;
    while width > 0 {
        for j in 0..width {
            acc[j] += acc[j + width];
        }
        width /= 2;
    }
    acc[0] + tail
}

/// Sum with the same fixed eight-lane scheme as [`dot`].
#[inline(always)]
fn sum8<T: Scalar>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for i in 0..chunks {
        let xs = &x[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] += xs[j];
        }
    }
    let mut tail = T::zero();
    for v in &x[chunks * 8..] {
        tail += *v;
    }
    let pair0 = (acc[0] + acc[4]) + (acc[2] + acc[6]);
    let pair1 = (acc[1] + acc[5]) + (acc[3] + acc[7]);
    (pair0 + pair1) + tail
}

fn expect_rank(t: &Tensor<impl Scalar>, rank: usize, what: &str) -> Result<()> {
    if t.shape().len() == rank {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: expected rank {rank}, got shape {:?}",
            t.shape()
        )))
    }
}

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernels, stride 1, zero padding 1 ("same" convolution)
// ---------------------------------------------------------------------------
//
// Planes are copied into (H+2)x(W+2) zero-bordered scratch. In that layout
// each of the nine kernel taps is one contiguous axpy (or dot) over the
// whole interior span at a constant offset: row wraparound only pollutes
// border cells, which are discarded, and reads from the border contribute
// exact zeros. This matches the unpadded computation value for value while
// keeping the inner loops long enough to vectorize on every plane size.

/// Copy a dense H x W plane into the interior of a zeroed padded plane.
#[inline]
fn pad_plane<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize) {
    let pw = w + 2;
    for y in 0..h {
        dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// Copy the interior of a padded plane back to dense H x W.
#[inline]
fn unpad_plane<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize) {
    let pw = w + 2;
    for y in 0..h {
        dst[y * w..(y + 1) * w].copy_from_slice(&src[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
    }
}

/// Interior span [lo, hi) of a padded plane; tap offsets never leave
/// [0, padlen) when shifting this span.
#[inline]
fn interior_span(h: usize, w: usize) -> (usize, usize) {
    let pw = w + 2;
    (pw + 1, pw * (h + 2) - pw - 1)
}

/// 3x3 same convolution (cross-correlation) with per-channel bias.
///
/// input [N,C,H,W], kernels [K,C,3,3], bias [K] -> output [N,K,H,W].
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(input, 4, "conv2d input")?;
    expect_rank(kernels, 4, "conv2d kernels")?;
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let k = kernels.shape()[0];
    if kernels.shape()[2] != 3 || kernels.shape()[3] != 3 {
        return Err(Error::Shape(format!(
            "conv2d requires 3x3 kernels, got {:?}",
            &kernels.shape()[2..]
        )));
    }
    if kernels.shape()[1] != c {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {c}, kernels expect {}",
            kernels.shape()[1]
        )));
    }
    if bias.numel() != k {
        return Err(Error::Shape(format!(
            "conv2d bias length {} != {k} output channels",
            bias.numel()
        )));
    }

    let mut out = Tensor::zeros(&[n, k, h, w]);
    conv2d_raw(
        input.data(),
        kernels.data(),
        bias.data(),
        n,
        c,
        k,
        h,
        w,
        out.data_mut(),
    );
    Ok(out)
}

// Small planes pack the whole batch per channel into one padded scratch:
// plane im of channel ci sits at [ci][im * padlen], so each tap's axpy/dot
// spans the entire batch and stays long enough to hide FMA latency. Shifted
// reads near an image boundary land in a neighbor's border cells, which only
// ever pollute out-of-interior positions (discarded on unpad) or multiply a
// zero border (weight grads). Large planes are already long spans on their
// own; there the packed scratch just blows the cache, so they go one image
// at a time. The weight-grad dots amortize their reduction epilogue better
// over packed spans, so the backward pass keeps packing up to a larger plane.
const PER_IMAGE_MIN_PLANE_FWD: usize = 256;
const PER_IMAGE_MIN_PLANE_BWD: usize = 2048;

fn conv2d_raw<T: Scalar>(
    src: &[T],
    kd: &[T],
    bias: &[T],
    n: usize,
    c: usize,
    k: usize,
    h: usize,
    w: usize,
    dst: &mut [T],
) {
    let plane = h * w;
    let pw = w + 2;
    let padlen = pw * (h + 2);
    let (lo, hi) = interior_span(h, w);

    if plane >= PER_IMAGE_MIN_PLANE_FWD {
        let span = hi - lo;
        let mut inp = vec![T::zero(); c * padlen];
        let mut outp = vec![T::zero(); padlen];
        for im in 0..n {
            for ci in 0..c {
                pad_plane(&src[(im * c + ci) * plane..], &mut inp[ci * padlen..], h, w);
            }
            for ko in 0..k {
                let b = bias[ko];
                outp.iter_mut().for_each(|v| *v = b);
                for ci in 0..c {
                    let ip = &inp[ci * padlen..(ci + 1) * padlen];
                    let kbase = (ko * c + ci) * 9;
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let wgt = kd[kbase + (ky * 3 + kx) as usize];
                            if wgt != T::zero() {
                                let off = (ky - 1) * pw as isize + (kx - 1);
                                let s = (lo as isize + off) as usize;
                                axpy(wgt, &ip[s..s + span], &mut outp[lo..hi]);
                            }
                        }
                    }
                }
                unpad_plane(
                    &outp,
                    &mut dst[(im * k + ko) * plane..(im * k + ko + 1) * plane],
                    h,
                    w,
                );
            }
        }
        return;
    }

    let span = (n - 1) * padlen + hi - lo;
    let mut inp = vec![T::zero(); c * n * padlen];
    let mut outp = vec![T::zero(); n * padlen];
    for im in 0..n {
        for ci in 0..c {
            pad_plane(
                &src[(im * c + ci) * plane..],
                &mut inp[ci * n * padlen + im * padlen..],
                h,
                w,
            );
        }
    }
    for ko in 0..k {
        let b = bias[ko];
        outp.iter_mut().for_each(|v| *v = b);
        for ci in 0..c {
            let ip = &inp[ci * n * padlen..(ci + 1) * n * padlen];
            let kbase = (ko * c + ci) * 9;
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let wgt = kd[kbase + (ky * 3 + kx) as usize];
                    if wgt != T::zero() {
                        let off = (ky - 1) * pw as isize + (kx - 1);
                        let s = (lo as isize + off) as usize;
                        axpy(wgt, &ip[s..s + span], &mut outp[lo..lo + span]);
                    }
                }
            }
        }
        for im in 0..n {
            unpad_plane(
                &outp[im * padlen..],
                &mut dst[(im * k + ko) * plane..(im * k + ko + 1) * plane],
                h,
                w,
            );
        }
    }
}

/// Gradients of [`conv2d`] w.r.t. input, kernels, and bias.
pub struct Conv2dGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Conv2dGrads<T> {
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let k = kernels.shape()[0];
    debug_assert_eq!(grad_out.shape(), &[n, k, h, w]);
    let plane = h * w;

    let gi_shape: &[usize] = if need_input_grad { &[n, c, h, w] } else { &[1] };
    let mut gi = Tensor::zeros(gi_shape);
    let mut gk = Tensor::zeros(&[k, c, 3, 3]);
    let mut gb = Tensor::zeros(&[k]);
    let go = grad_out.data();
    let src = input.data();
    let kd = kernels.data();

    // Bias: plain sums over each output plane, batch-major order.
    for ko in 0..k {
        let mut acc = T::zero();
        for im in 0..n {
            acc += sum8(&go[(im * k + ko) * plane..(im * k + ko + 1) * plane]);
        }
        gb.data_mut()[ko] = acc;
    }

    let pw = w + 2;
    let padlen = pw * (h + 2);
    let (lo, hi) = interior_span(h, w);

    if need_input_grad && plane >= PER_IMAGE_MIN_PLANE_BWD {
        let span = hi - lo;
        let mut inp = vec![T::zero(); c * padlen];
        let mut gop = vec![T::zero(); k * padlen];
        let mut gip = vec![T::zero(); padlen];
        let gkd = gk.data_mut();
        let gid = gi.data_mut();
        for im in 0..n {
            for ci in 0..c {
                pad_plane(&src[(im * c + ci) * plane..], &mut inp[ci * padlen..], h, w);
            }
            for ko in 0..k {
                pad_plane(&go[(im * k + ko) * plane..], &mut gop[ko * padlen..], h, w);
            }

            // Kernels: go's zero borders make a full-span dot at the tap
            // offset equal to the dot over valid positions only.
            for ko in 0..k {
                let g = &gop[ko * padlen + lo..ko * padlen + hi];
                for ci in 0..c {
                    let ip = &inp[ci * padlen..(ci + 1) * padlen];
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let off = (ky - 1) * pw as isize + (kx - 1);
                            let s = (lo as isize + off) as usize;
                            gkd[(ko * c + ci) * 9 + (ky * 3 + kx) as usize] +=
                                dot(g, &ip[s..s + span]);
                        }
                    }
                }
            }

            // Input: transpose of the forward taps (negated offsets).
            if need_input_grad {
                for ci in 0..c {
                    gip.iter_mut().for_each(|v| *v = T::zero());
                    for ko in 0..k {
                        let g = &gop[ko * padlen..(ko + 1) * padlen];
                        let kbase = (ko * c + ci) * 9;
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let wgt = kd[kbase + (ky * 3 + kx) as usize];
                                if wgt != T::zero() {
                                    let off = (ky - 1) * pw as isize + (kx - 1);
                                    let s = (lo as isize - off) as usize;
                                    axpy(wgt, &g[s..s + span], &mut gip[lo..hi]);
                                }
                            }
                        }
                    }
                    unpad_plane(
                        &gip,
                        &mut gid[(im * c + ci) * plane..(im * c + ci + 1) * plane],
                        h,
                        w,
                    );
                }
            }
        }
        return Conv2dGrads { input: gi, kernels: gk, bias: gb };
    }

    let span = (n - 1) * padlen + hi - lo;
    let mut inp = vec![T::zero(); c * n * padlen];
    let mut gop = vec![T::zero(); k * n * padlen];
    let mut gip = vec![T::zero(); n * padlen];
    for im in 0..n {
        for ci in 0..c {
            pad_plane(&src[(im * c + ci) * plane..], &mut inp[ci * n * padlen + im * padlen..], h, w);
        }
        for ko in 0..k {
            pad_plane(&go[(im * k + ko) * plane..], &mut gop[ko * n * padlen + im * padlen..], h, w);
        }
    }

    // Kernels: go's zero borders make a full-span dot at the tap offset
    // equal to the dot over valid positions only.
    let gkd = gk.data_mut();
    for ko in 0..k {
        let g = &gop[ko * n * padlen + lo..ko * n * padlen + lo + span];
        for ci in 0..c {
            let ip = &inp[ci * n * padlen..(ci + 1) * n * padlen];
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let off = (ky - 1) * pw as isize + (kx - 1);
                    let s = (lo as isize + off) as usize;
                    gkd[(ko * c + ci) * 9 + (ky * 3 + kx) as usize] = dot(g, &ip[s..s + span]);
                }
            }
        }
    }

    // Input: transpose of the forward taps (negated offsets).
    if need_input_grad {
        let gid = gi.data_mut();
        for ci in 0..c {
            gip.iter_mut().for_each(|v| *v = T::zero());
            for ko in 0..k {
                let g = &gop[ko * n * padlen..(ko + 1) * n * padlen];
                let kbase = (ko * c + ci) * 9;
                for ky in 0..3isize {
                    for kx in 0..3isize {
                        let wgt = kd[kbase + (ky * 3 + kx) as usize];
                        if wgt != T::zero() {
                            let off = (ky - 1) * pw as isize + (kx - 1);
                            let s = (lo as isize - off) as usize;
                            axpy(wgt, &g[s..s + span], &mut gip[lo..lo + span]);
                        }
                    }
                }
            }
            for im in 0..n {
                unpad_plane(
                    &gip[im * padlen..],
                    &mut gid[(im * c + ci) * plane..(im * c + ci + 1) * plane],
                    h,
                    w,
                );
            }
        }
    }

    Conv2dGrads { input: gi, kernels: gk, bias: gb }
}

// ---------------------------------------------------------------------------
// maxpool2: 2x2 window, stride 2
// ---------------------------------------------------------------------------

/// 2x2/stride-2 max pooling. Returns the pooled tensor and, per output cell,
/// the flat input index of its maximum. Ties go to the smallest (row, col)
/// offset within the window.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    expect_rank(input, 4, "maxpool2 input")?;
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2 requires even H and W, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let src = input.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let ibase = p * h * w;
        let obase = p * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let i00 = ibase + (2 * oy) * w + 2 * ox;
                let mut best = i00;
                let mut val = src[i00];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = ibase + (2 * oy + dy) * w + 2 * ox + dx;
                    if src[idx] > val {
                        val = src[idx];
                        best = idx;
                    }
                }
                dst[obase + oy * ow + ox] = val;
                argmax[obase + oy * ow + ox] = best as u32;
            }
        }
    }
    Ok((out, argmax))
}

/// Route each output gradient to the recorded argmax input cell.
pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Tensor<T> {
    debug_assert_eq!(grad_out.numel(), argmax.len());
    let mut gi = Tensor::zeros(input_shape);
    let gid = gi.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        gid[idx as usize] += *g;
    }
    gi
}

// ---------------------------------------------------------------------------
// dense: affine map
// ---------------------------------------------------------------------------

/// Affine map: input [N,D] x weights [D,U] + bias [U] -> [N,U].
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(input, 2, "dense input")?;
    expect_rank(weights, 2, "dense weights")?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (dw, u) = (weights.shape()[0], weights.shape()[1]);
    if d != dw {
        return Err(Error::Shape(format!("dense: input dim {d} != weight rows {dw}")));
    }
    if bias.numel() != u {
        return Err(Error::Shape(format!("dense: bias length {} != {u} units", bias.numel())));
    }
    let mut out = Tensor::zeros(&[n, u]);
    let (x, wd, dst) = (input.data(), weights.data(), out.data_mut());
    for i in 0..n {
        let o = &mut dst[i * u..(i + 1) * u];
        o.copy_from_slice(bias.data());
        let xr = &x[i * d..(i + 1) * d];
        for (j, &xv) in xr.iter().enumerate() {
            if xv != T::zero() {
                axpy(xv, &wd[j * u..(j + 1) * u], o);
            }
        }
    }
    Ok(out)
}

pub struct DenseGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> DenseGrads<T> {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let u = weights.shape()[1];
    debug_assert_eq!(grad_out.shape(), &[n, u]);
    let (x, wd, go) = (input.data(), weights.data(), grad_out.data());

    let mut gw = Tensor::zeros(&[d, u]);
    let mut gb = Tensor::zeros(&[u]);
    {
        let gwd = gw.data_mut();
        for i in 0..n {
            let g = &go[i * u..(i + 1) * u];
            let xr = &x[i * d..(i + 1) * d];
            for (j, &xv) in xr.iter().enumerate() {
                if xv != T::zero() {
                    axpy(xv, g, &mut gwd[j * u..(j + 1) * u]);
                }
            }
        }
        let gbd = gb.data_mut();
        for i in 0..n {
            for (b, g) in gbd.iter_mut().zip(&go[i * u..(i + 1) * u]) {
                *b += *g;
            }
        }
    }

    let gi_shape: &[usize] = if need_input_grad { &[n, d] } else { &[1] };
    let mut gi = Tensor::zeros(gi_shape);
    if need_input_grad {
        let gid = gi.data_mut();
        for i in 0..n {
            let g = &go[i * u..(i + 1) * u];
            let gr = &mut gid[i * d..(i + 1) * d];
            for (j, gv) in gr.iter_mut().enumerate() {
                *gv = dot(g, &wd[j * u..(j + 1) * u]);
            }
        }
    }
    DenseGrads { input: gi, weights: gw, bias: gb }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.drop_grad();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// d/dx relu, expressed through the forward output: passes gradient where
/// the output is strictly positive (subgradient 0 at the kink).
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gi = grad_out.clone();
    gi.drop_grad();
    for (g, o) in gi.data_mut().iter_mut().zip(output.data()) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
    gi
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.drop_grad();
    for v in out.data_mut() {
        *v = T::one() / (T::one() + (-*v).exp());
    }
    out
}

pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gi = grad_out.clone();
    gi.drop_grad();
    for (g, o) in gi.data_mut().iter_mut().zip(output.data()) {
        *g = *g * *o * (T::one() - *o);
    }
    gi
}

/// Row-wise softmax with max subtraction, input [N,K].
pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(input, 2, "softmax input")?;
    let (n, k) = (input.shape()[0], input.shape()[1]);
    let mut out = input.clone();
    out.drop_grad();
    let d = out.data_mut();
    for i in 0..n {
        let row = &mut d[i * k..(i + 1) * k];
        let mut m = row[0];
        for v in row.iter() {
            if *v > m {
                m = *v;
            }
        }
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, k) = (output.shape()[0], output.shape()[1]);
    let mut gi = Tensor::zeros(&[n, k]);
    let (o, go, gid) = (output.data(), grad_out.data(), gi.data_mut());
    for i in 0..n {
        let orow = &o[i * k..(i + 1) * k];
        let grow = &go[i * k..(i + 1) * k];
        let inner = dot(grow, orow);
        for j in 0..k {
            gid[i * k + j] = orow[j] * (grow[j] - inner);
        }
    }
    gi
}

/// Global average pooling: [N,C,H,W] -> [N,C].
pub fn gap<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(input, 4, "gap input")?;
    let (n, c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let plane = h * w;
    let scale = T::one() / T::from_f64(plane as f64);
    let mut out = Tensor::zeros(&[n, c]);
    let (src, dst) = (input.data(), out.data_mut());
    for p in 0..n * c {
        dst[p] = sum8(&src[p * plane..(p + 1) * plane]) * scale;
    }
    Ok(out)
}

pub fn gap_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let plane = h * w;
    let scale = T::one() / T::from_f64(plane as f64);
    let mut gi = Tensor::zeros(input_shape);
    let gid = gi.data_mut();
    for (p, g) in grad_out.data().iter().enumerate() {
        let v = *g * scale;
        gid[p * plane..(p + 1) * plane].iter_mut().for_each(|x| *x = v);
    }
    gi
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Probability clamp inside the losses; prevents log(0).
pub const EPS_CLIP: f64 = 1e-7;

fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::from_f64(EPS_CLIP);
    let hi = T::one() - lo;
    if p < lo {
        lo
    } else if p > hi {
        hi
    } else {
        p
    }
}

/// Mean binary cross-entropy over the batch. `pred` holds probabilities
/// (shape [N] or [N,1]), `labels` holds 0/1. Returns the loss and dL/dpred.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>)> {
    if pred.numel() != labels.len() {
        return Err(Error::Shape(format!(
            "bce_loss: {} predictions vs {} labels",
            pred.numel(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("bce_loss: label {l} out of range {{0,1}}")));
    }
    let n = labels.len();
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let gd = grad.data_mut();
    let mut loss = T::zero();
    for (i, (&p, &y)) in pred.data().iter().zip(labels).enumerate() {
        let p = clamp_prob(p);
        if y == 1 {
            loss -= p.ln();
            gd[i] = -inv_n / p;
        } else {
            loss -= (T::one() - p).ln();
            gd[i] = inv_n / (T::one() - p);
        }
    }
    Ok((loss * inv_n, grad))
}

/// Mean categorical cross-entropy. `pred` is [N,K] of row probabilities,
/// `labels` are class indices. Returns the loss and dL/dpred.
pub fn cce_loss<T: Scalar>(pred: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    expect_rank(pred, 2, "cce_loss pred")?;
    let (n, k) = (pred.shape()[0], pred.shape()[1]);
    if n != labels.len() {
        return Err(Error::Shape(format!("cce_loss: {n} rows vs {} labels", labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("cce_loss: label {l} out of range 0..{k}")));
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = Tensor::zeros(&[n, k]);
    let gd = grad.data_mut();
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let p = clamp_prob(pred.data()[i * k + y]);
        loss -= p.ln();
        gd[i * k + y] = -inv_n / p;
    }
    Ok((loss * inv_n, grad))
}
