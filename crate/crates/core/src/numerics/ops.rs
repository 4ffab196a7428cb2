//! Differentiable primitives. Every forward function has a paired `*_backward`
//! that maps an upstream gradient to gradients of its inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding that preserves the spatial extents.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    ph: usize,
    pw: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

fn conv_geom<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>, padding: Padding) -> Result<ConvGeom> {
    let [n, cin, h, w] = input.expect4("conv2d input")?;
    let [cout, wcin, kh, kw] = weight.expect4("conv2d weight")?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv2d input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Shape(format!(
            "conv2d kernel extents must be odd, got weight {:?}",
            weight.shape()
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv2d bias {:?} does not match weight {:?}",
            bias.shape(),
            weight.shape()
        )));
    }
    let (ho, wo, ph, pw) = match padding {
        Padding::Same => (h, w, kh / 2, kw / 2),
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(Error::Shape(format!(
                    "conv2d weight {:?} does not fit input {:?} without padding",
                    weight.shape(),
                    input.shape()
                )));
            }
            (h - kh + 1, w - kw + 1, 0, 0)
        }
    };
    Ok(ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho,
        wo,
        ph,
        pw,
    })
}

/// Unfolds one `[cin, h, w]` image into a `[cin*kh*kw, ho*wo]` patch matrix.
fn im2col<S: Scalar>(g: &ConvGeom, img: &[S], col: &mut [S]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                let (lo, hi, off) = valid_span(kj, g.pw, g.w, g.wo);
                for oy in 0..g.ho {
                    let iy = oy as isize + ki as isize - g.ph as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        line.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(S::zero());
                    line[lo..hi].copy_from_slice(&src[(lo as isize + off) as usize..(hi as isize + off) as usize]);
                    line[hi..].fill(S::zero());
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose input column `ox + off` is inside the
/// image, for kernel column `kj`.
fn valid_span(kj: usize, pad: usize, w: usize, wo: usize) -> (usize, usize, isize) {
    let off = kj as isize - pad as isize;
    let lo = (-off).clamp(0, wo as isize) as usize;
    let hi = (w as isize - off).clamp(0, wo as isize) as usize;
    (lo, hi.max(lo), off)
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the image.
fn col2im<S: Scalar>(g: &ConvGeom, col: &[S], img: &mut [S]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                let (lo, hi, off) = valid_span(kj, g.pw, g.w, g.wo);
                for oy in 0..g.ho {
                    let iy = oy as isize + ki as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut dst[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (d, &v) in dst.iter_mut().zip(&src[oy * g.wo + lo..oy * g.wo + hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with bias: `[n, cin, h, w] * [cout, cin, kh, kw] -> [n, cout, h', w']`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
) -> Result<Tensor<S>> {
    let g = conv_geom(input, weight, bias, padding)?;
    let hw_out = g.ho * g.wo;
    let patch = g.patch();
    let mut out = vec![S::zero(); g.n * g.cout * hw_out];
    let mut col = vec![S::zero(); if g.pointwise() { 0 } else { patch * hw_out }];
    let img_len = g.cin * g.h * g.w;
    for n in 0..g.n {
        let img = &input.data()[n * img_len..(n + 1) * img_len];
        let cols: &[S] = if g.pointwise() {
            img
        } else {
            im2col(&g, img, &mut col);
            &col
        };
        let dst = &mut out[n * g.cout * hw_out..(n + 1) * g.cout * hw_out];
        for (co, row) in dst.chunks_mut(hw_out).enumerate() {
            row.fill(bias.data()[co]);
        }
        S::gemm(
            g.cout,
            patch,
            hw_out,
            S::one(),
            weight.data(),
            (patch as isize, 1),
            cols,
            (hw_out as isize, 1),
            S::one(),
            dst,
            (hw_out as isize, 1),
        );
    }
    let out = Tensor::from_parts(vec![g.n, g.cout, g.ho, g.wo], out);
    out.debug_check_finite("conv2d");
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<S> {
    /// `None` when the caller did not request the input gradient.
    pub input: Option<Tensor<S>>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    padding: Padding,
    grad_out: &Tensor<S>,
    need_input_grad: bool,
) -> Result<Conv2dGrads<S>> {
    let g = conv_geom(input, weight, bias, padding)?;
    if grad_out.shape() != [g.n, g.cout, g.ho, g.wo] {
        return Err(Error::Shape(format!(
            "conv2d upstream gradient {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.n,
            g.cout,
            g.ho,
            g.wo
        )));
    }
    let hw_out = g.ho * g.wo;
    let patch = g.patch();
    let img_len = g.cin * g.h * g.w;
    let mut dw = vec![S::zero(); g.cout * patch];
    let mut db = vec![S::zero(); g.cout];
    let mut dx = if need_input_grad {
        vec![S::zero(); input.len()]
    } else {
        Vec::new()
    };
    let mut col = vec![S::zero(); if g.pointwise() { 0 } else { patch * hw_out }];
    // A "same" convolution's input gradient is itself a "same" convolution
    // with the spatially flipped, channel-transposed kernel.
    let flipped = need_input_grad && padding == Padding::Same && !g.pointwise();
    let mut dcol = vec![S::zero(); if need_input_grad && !flipped { patch * hw_out } else { 0 }];
    for n in 0..g.n {
        let gy = &grad_out.data()[n * g.cout * hw_out..(n + 1) * g.cout * hw_out];
        for (co, row) in gy.chunks(hw_out).enumerate() {
            db[co] += row.iter().copied().sum();
        }
        let img = &input.data()[n * img_len..(n + 1) * img_len];
        let cols: &[S] = if g.pointwise() {
            img
        } else {
            im2col(&g, img, &mut col);
            &col
        };
        // dW += dY * cols^T
        S::gemm(
            g.cout,
            hw_out,
            patch,
            S::one(),
            gy,
            (hw_out as isize, 1),
            cols,
            (1, hw_out as isize),
            S::one(),
            &mut dw,
            (patch as isize, 1),
        );
        if need_input_grad && !flipped {
            // dcols = W^T * dY
            S::gemm(
                patch,
                g.cout,
                hw_out,
                S::one(),
                weight.data(),
                (1, patch as isize),
                gy,
                (hw_out as isize, 1),
                S::zero(),
                &mut dcol,
                (hw_out as isize, 1),
            );
            let dst = &mut dx[n * img_len..(n + 1) * img_len];
            if g.pointwise() {
                dst.copy_from_slice(&dcol);
            } else {
                col2im(&g, &dcol, dst);
            }
        }
    }
    if flipped {
        let wt = Tensor::from_fn(&[g.cin, g.cout, g.kh, g.kw], |i| {
            let kj = i % g.kw;
            let ki = (i / g.kw) % g.kh;
            let co = (i / (g.kw * g.kh)) % g.cout;
            let ci = i / (g.kw * g.kh * g.cout);
            weight.data()[((co * g.cin + ci) * g.kh + g.kh - 1 - ki) * g.kw + g.kw - 1 - kj]
        });
        dx = conv2d(grad_out, &wt, &Tensor::zeros(&[g.cin]), Padding::Same)?.into_data();
    }
    Ok(Conv2dGrads {
        input: need_input_grad.then(|| Tensor::from_parts(input.shape().to_vec(), dx)),
        weight: Tensor::from_parts(weight.shape().to_vec(), dw),
        bias: Tensor::from_parts(vec![g.cout], db),
    })
}

fn check_conv1d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let [n, c] = input.expect2("conv1d input")?;
    if weight.rank() != 1 {
        return Err(Error::Shape(format!(
            "conv1d weight must be rank 1, got {:?}",
            weight.shape()
        )));
    }
    let k = weight.len();
    if k.is_multiple_of(2) {
        return Err(Error::Shape(format!("conv1d kernel length must be odd, got {k}")));
    }
    Ok((n, c, k))
}

/// Zero-padded 1-D cross-correlation along the channel axis of `[n, c]`.
pub fn conv1d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, k) = check_conv1d(input, weight)?;
    let half = (k / 2) as isize;
    let mut out = vec![S::zero(); n * c];
    for b in 0..n {
        let x = input.outer(b);
        for (i, o) in out[b * c..(b + 1) * c].iter_mut().enumerate() {
            let mut acc = S::zero();
            for (j, &wj) in weight.data().iter().enumerate() {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < c {
                    acc += wj * x[src as usize];
                }
            }
            *o = acc;
        }
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Returns `(d_input, d_weight)`.
pub fn conv1d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, k) = check_conv1d(input, weight)?;
    input.same_shape(grad_out, "conv1d upstream gradient")?;
    let half = (k / 2) as isize;
    let mut dx = vec![S::zero(); n * c];
    let mut dw = vec![S::zero(); k];
    for b in 0..n {
        let x = input.outer(b);
        let gy = grad_out.outer(b);
        for i in 0..c {
            for j in 0..k {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < c {
                    dw[j] += gy[i] * x[src as usize];
                    dx[b * c + src as usize] += gy[i] * weight.data()[j];
                }
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c], dx), Tensor::from_parts(vec![k], dw)))
}

/// Non-overlapping mean pooling with a square window.
pub fn avg_pool2d<S: Scalar>(input: &Tensor<S>, window: usize) -> Result<Tensor<S>> {
    let [n, c, h, w] = input.expect4("avg_pool2d input")?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::Shape(format!(
            "avg_pool2d window {window} does not divide extents of {:?}",
            input.shape()
        )));
    }
    let (ho, wo) = (h / window, w / window);
    let scale = S::of(1.0 / (window * window) as f64);
    let mut out = vec![S::zero(); n * c * ho * wo];
    for (plane, dst) in input.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let orow = &mut dst[(y / window) * wo..(y / window + 1) * wo];
            for (x, &v) in row.iter().enumerate() {
                orow[x / window] += v;
            }
        }
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

pub fn avg_pool2d_backward<S: Scalar>(input_shape: &[usize], window: usize, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let (ho, wo) = (h / window, w / window);
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(Error::Shape(format!(
            "avg_pool2d upstream gradient {:?} does not match [{n}, {c}, {ho}, {wo}]",
            grad_out.shape()
        )));
    }
    let scale = S::of(1.0 / (window * window) as f64);
    let mut dx = vec![S::zero(); n * c * h * w];
    for (dst, gy) in dx.chunks_mut(h * w).zip(grad_out.data().chunks(ho * wo)) {
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = gy[(y / window) * wo + x / window] * scale;
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// `[n, c, h, w] -> [n, c]` mean over all spatial positions.
///
/// Computed as `p[0] + mean(p - p[0])`, which is exact for constant planes.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, c, h, w] = input.expect4("global_avg_pool input")?;
    let scale = S::of(1.0 / (h * w) as f64);
    let data = input
        .data()
        .chunks(h * w)
        .map(|p| p[0] + p.iter().map(|&v| v - p[0]).sum::<S>() * scale)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

pub fn global_avg_pool_backward<S: Scalar>(input_shape: &[usize], grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    if grad_out.shape() != [n, c] {
        return Err(Error::Shape(format!(
            "global_avg_pool upstream gradient {:?} does not match [{n}, {c}]",
            grad_out.shape()
        )));
    }
    let scale = S::of(1.0 / (h * w) as f64);
    let mut dx = Vec::with_capacity(n * c * h * w);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * scale, h * w));
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// `[n, f] x [f, g] + [g] -> [n, g]`.
pub fn dense<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, f] = input.expect2("dense input")?;
    let [wf, g] = weight.expect2("dense weight")?;
    if wf != f || bias.shape() != [g] {
        return Err(Error::Shape(format!(
            "dense input {:?}, weight {:?} and bias {:?} do not conform",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * g);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    S::gemm(
        n,
        f,
        g,
        S::one(),
        input.data(),
        (f as isize, 1),
        weight.data(),
        (g as isize, 1),
        S::one(),
        &mut out,
        (g as isize, 1),
    );
    Ok(Tensor::from_parts(vec![n, g], out))
}

#[derive(Clone, Debug)]
pub struct DenseGrads<S> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn dense_backward<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, grad_out: &Tensor<S>) -> Result<DenseGrads<S>> {
    let [n, f] = input.expect2("dense input")?;
    let [_, g] = weight.expect2("dense weight")?;
    if grad_out.shape() != [n, g] {
        return Err(Error::Shape(format!(
            "dense upstream gradient {:?} does not match [{n}, {g}]",
            grad_out.shape()
        )));
    }
    let mut dx = vec![S::zero(); n * f];
    let mut dw = vec![S::zero(); f * g];
    S::gemm(
        n,
        g,
        f,
        S::one(),
        grad_out.data(),
        (g as isize, 1),
        weight.data(),
        (1, g as isize),
        S::zero(),
        &mut dx,
        (f as isize, 1),
    );
    S::gemm(
        f,
        n,
        g,
        S::one(),
        input.data(),
        (1, f as isize),
        grad_out.data(),
        (g as isize, 1),
        S::zero(),
        &mut dw,
        (g as isize, 1),
    );
    let mut db = vec![S::zero(); g];
    for row in grad_out.data().chunks(g) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_parts(vec![n, f], dx),
        weight: Tensor::from_parts(vec![f, g], dw),
        bias: Tensor::from_parts(vec![g], db),
    })
}

#[inline]
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn sigmoid<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(sigmoid_scalar)
}

/// Gradient through a sigmoid given its forward output.
pub fn sigmoid_backward<S: Scalar>(output: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    output.zip_map(grad_out, |y, g| g * y * (S::one() - y))
}

pub fn tanh<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(S::activation_tanh)
}

pub fn tanh_inplace<S: Scalar>(mut t: Tensor<S>) -> Tensor<S> {
    for v in t.data_mut() {
        *v = v.activation_tanh();
    }
    t
}

/// Gradient through a tanh given its forward output.
pub fn tanh_backward<S: Scalar>(output: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    output.zip_map(grad_out, |y, g| g * (S::one() - y * y))
}

pub fn elementwise_mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    a.zip_map(b, |x, y| x * y)
}

/// Returns `(d_a, d_b)`.
pub fn elementwise_mul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    Ok((grad_out.zip_map(b, |g, y| g * y)?, grad_out.zip_map(a, |g, x| g * x)?))
}

/// Inverted-dropout multiplier: survivors carry `1 / (1 - rate)`, dropped
/// positions carry zero. Multiply activations (and their gradients) by it.
pub fn dropout_mask<S: Scalar>(shape: &[usize], rate: f64, seed: u64) -> Result<Tensor<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(Tensor::ones(shape));
    }
    let keep = S::of(1.0 / (1.0 - rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::from_fn(shape, |_| {
        if rng.gen::<f64>() < rate {
            S::zero()
        } else {
            keep
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn conv2d_sum_of_ones() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv2d_identity_kernel_is_exact() {
        let x = Tensor::<f32>::from_fn(&[2, 1, 5, 4], |i| (i as f32 * 0.37).sin());
        let w = Tensor::<f32>::ones(&[1, 1, 1, 1]);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d(&x, &w, &b, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_same_padding_matches_naive_loop() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 5, 6], |i| ((i * 7919) % 23) as f64 - 11.0);
        let w = Tensor::<f64>::from_fn(&[4, 3, 3, 3], |i| ((i * 104_729) % 17) as f64 / 8.0 - 1.0);
        let b = Tensor::<f64>::from_fn(&[4], |i| i as f64);
        let y = conv2d(&x, &w, &b, Padding::Same).unwrap();
        for n in 0..2 {
            for co in 0..4 {
                for oy in 0..5 {
                    for ox in 0..6 {
                        let mut acc = b.data()[co];
                        for ci in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = oy as isize + ky as isize - 1;
                                    let ix = ox as isize + kx as isize - 1;
                                    if (0..5).contains(&iy) && (0..6).contains(&ix) {
                                        acc += w.data()[((co * 3 + ci) * 3 + ky) * 3 + kx]
                                            * x.data()[((n * 3 + ci) * 5 + iy as usize) * 6 + ix as usize];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((n * 4 + co) * 5 + oy) * 6 + ox];
                        assert_abs_diff_eq!(got, acc, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1]);
        let err = conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), &b, Padding::Same).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 2, 2]), &b, Padding::Same).is_err());
    }

    #[test]
    fn conv1d_hand_cases() {
        let x = Tensor::<f32>::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let id = Tensor::<f32>::new(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(conv1d(&x, &id).unwrap().data(), &[1.0, 2.0, 3.0]);
        let ones = Tensor::<f32>::ones(&[3]);
        assert_eq!(conv1d(&x, &ones).unwrap().data(), &[3.0, 6.0, 5.0]);
        assert!(conv1d(&x, &Tensor::ones(&[2])).is_err());
    }

    #[test]
    fn pooling_hand_cases() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(avg_pool2d(&x, 2).unwrap().data(), &[4.0]);
        let c = Tensor::<f32>::full(&[2, 3, 4, 4], 2.5);
        assert!(avg_pool2d(&c, 2).unwrap().data().iter().all(|&v| v == 2.5));
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 2.5));
        assert!(avg_pool2d(&Tensor::<f32>::zeros(&[1, 1, 3, 4]), 2).is_err());
    }

    #[test]
    fn sigmoid_at_zero() {
        let y = sigmoid(&Tensor::<f64>::zeros(&[1]));
        assert_eq!(y.data(), &[0.5]);
        let g = sigmoid_backward(&y, &Tensor::ones(&[1])).unwrap();
        assert_eq!(g.data(), &[0.25]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let a = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 - 2.5);
        assert_eq!(elementwise_mul(&a, &Tensor::ones(&[2, 3])).unwrap(), a);
        assert!(elementwise_mul(&a, &Tensor::ones(&[3, 2])).is_err());
    }

    #[test]
    fn dropout_mask_properties() {
        let m = dropout_mask::<f32>(&[1000], 0.0, 3).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        let m = dropout_mask::<f64>(&[4000], 0.25, 3).unwrap();
        let kept = m.data().iter().filter(|&&v| v > 0.0).count();
        assert!((2800..3200).contains(&kept));
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
        assert_eq!(m, dropout_mask::<f64>(&[4000], 0.25, 3).unwrap());
        assert!(dropout_mask::<f32>(&[4], 1.0, 0).is_err());
    }

    #[test]
    fn dense_matches_hand_product() {
        let x = Tensor::<f64>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::new(&[2], vec![0.5, -0.5]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[7.5, 9.5]);
    }
}
