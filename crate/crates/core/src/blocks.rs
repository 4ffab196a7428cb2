//! Temporal shift, spatial attention masks and efficient channel attention.
//!
//! Each block is a pure transform over `[frames, channels, height, width]`
//! stacks with a matching backward function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::{self, sigmoid_scalar, Padding};
use crate::numerics::{Scalar, Tensor};

/// Non-negative rational number `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u32,
    pub den: u32,
}

impl Fraction {
    pub const fn new(num: u32, den: u32) -> Self {
        Fraction { num, den }
    }

    pub fn of_channels(self, channels: usize) -> usize {
        channels * self.num as usize / self.den as usize
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// How many channels a temporal shift moves in each direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Channels that receive the previous frame's values.
    pub fraction_forward: Fraction,
    /// Channels that receive the next frame's values.
    pub fraction_backward: Fraction,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            fraction_forward: Fraction::new(1, 8),
            fraction_backward: Fraction::new(1, 8),
        }
    }
}

impl ShiftSpec {
    pub fn none() -> Self {
        ShiftSpec {
            fraction_forward: Fraction::new(0, 1),
            fraction_backward: Fraction::new(0, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (f, b) = (self.fraction_forward, self.fraction_backward);
        if f.den == 0 || b.den == 0 {
            return Err(Error::config("shift", "fraction denominator is zero"));
        }
        if f.value() + b.value() > 1.0 {
            return Err(Error::config(
                "shift",
                format!("forward {f:?} + backward {b:?} exceeds 1"),
            ));
        }
        Ok(())
    }

    /// `(forward, backward)` channel counts for a stack with `channels` channels.
    pub fn split(&self, channels: usize) -> (usize, usize) {
        (
            self.fraction_forward.of_channels(channels),
            self.fraction_backward.of_channels(channels),
        )
    }
}

/// Moves channel groups by one frame. `forward` channels read frame `t - lag`,
/// `backward` channels read frame `t + lag`; out-of-clip reads are zero.
fn shift_groups<S: Scalar>(stack: &Tensor<S>, forward: usize, backward: usize, lag: isize) -> Tensor<S> {
    let [t_len, c, h, w] = stack.dims4();
    let plane = h * w;
    let mut out = stack.clone();
    for t in 0..t_len {
        for ch in 0..forward + backward {
            let src_t = if ch < forward {
                t as isize - lag
            } else {
                t as isize + lag
            };
            let dst = &mut out.data_mut()[(t * c + ch) * plane..(t * c + ch + 1) * plane];
            if src_t < 0 || src_t >= t_len as isize {
                dst.fill(S::zero());
            } else {
                let s = (src_t as usize * c + ch) * plane;
                dst.copy_from_slice(&stack.data()[s..s + plane]);
            }
        }
    }
    out
}

/// Temporal shift over a `[T, C, H, W]` clip: the first `floor(C * forward)`
/// channels take frame `t - 1`, the next `floor(C * backward)` take frame
/// `t + 1`, and boundary frames are zero filled.
pub fn temporal_shift<S: Scalar>(stack: &Tensor<S>, spec: &ShiftSpec) -> Result<Tensor<S>> {
    stack.expect4("temporal_shift input")?;
    spec.validate()?;
    let (f, b) = spec.split(stack.shape()[1]);
    Ok(shift_groups(stack, f, b, 1))
}

pub fn temporal_shift_backward<S: Scalar>(grad_out: &Tensor<S>, spec: &ShiftSpec) -> Result<Tensor<S>> {
    grad_out.expect4("temporal_shift gradient")?;
    let (f, b) = spec.split(grad_out.shape()[1]);
    Ok(shift_groups(grad_out, f, b, -1))
}

/// Intermediate values of the spatial attention mask, kept for backward.
#[derive(Clone, Debug)]
pub struct MaskTrace<S> {
    /// Sigmoid response `[T, 1, H, W]`.
    pub response: Tensor<S>,
    /// Per-frame L1 norm of the response.
    pub l1: Vec<S>,
    pub mask: Tensor<S>,
    /// Frames whose response underflowed to zero and fell back to a uniform mask.
    pub degenerate_frames: Vec<usize>,
}

/// Soft spatial mask from appearance features:
/// `H * W * sigmoid(w * x + b) / (2 * ||sigmoid(w * x + b)||_1)` per frame.
///
/// `weight` is the `[1, C, 1, 1]` pointwise kernel and `bias` has shape `[1]`.
/// Every frame of the mask sums to `H * W / 2`.
pub fn spatial_attention_mask<S: Scalar>(
    appearance: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    Ok(spatial_attention_forward(appearance, weight, bias)?.mask)
}

pub fn spatial_attention_forward<S: Scalar>(
    appearance: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<MaskTrace<S>> {
    let [t_len, _, h, w] = appearance.expect4("spatial attention input")?;
    if weight.shape()[0] != 1 || weight.rank() != 4 || weight.shape()[2..] != [1, 1] {
        return Err(Error::Shape(format!(
            "attention kernel must be [1, C, 1, 1], got {:?}",
            weight.shape()
        )));
    }
    let logits = ops::conv2d(appearance, weight, bias, Padding::Same)?;
    let response = logits.map(sigmoid_scalar);
    let plane = h * w;
    let half_area = S::of(plane as f64 / 2.0);
    let mut mask = Vec::with_capacity(t_len * plane);
    let mut l1 = Vec::with_capacity(t_len);
    let mut degenerate_frames = Vec::new();
    for (t, frame) in response.data().chunks(plane).enumerate() {
        let norm: S = frame.iter().copied().sum();
        l1.push(norm);
        if norm > S::zero() {
            let scale = half_area / norm;
            mask.extend(frame.iter().map(|&s| s * scale));
        } else {
            log::warn!("attention response underflowed on frame {t}; using uniform mask");
            degenerate_frames.push(t);
            mask.extend(std::iter::repeat_n(S::of(0.5), plane));
        }
    }
    Ok(MaskTrace {
        response,
        l1,
        mask: Tensor::from_parts(vec![t_len, 1, h, w], mask),
        degenerate_frames,
    })
}

#[derive(Clone, Debug)]
pub struct MaskGrads<S> {
    pub appearance: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn spatial_attention_backward<S: Scalar>(
    appearance: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    trace: &MaskTrace<S>,
    grad_mask: &Tensor<S>,
) -> Result<MaskGrads<S>> {
    trace.mask.same_shape(grad_mask, "attention mask gradient")?;
    let [_, _, h, w] = trace.mask.dims4();
    let plane = h * w;
    let half_area = S::of(plane as f64 / 2.0);
    let mut d_logits = vec![S::zero(); grad_mask.len()];
    for (t, ((gm, s), dz)) in grad_mask
        .data()
        .chunks(plane)
        .zip(trace.response.data().chunks(plane))
        .zip(d_logits.chunks_mut(plane))
        .enumerate()
    {
        if trace.degenerate_frames.contains(&t) {
            continue;
        }
        let norm = trace.l1[t];
        // mask_i = K s_i / N  =>  dL/ds_j = K / N * (g_j - sum_i g_i s_i / N)
        let dot: S = gm.iter().zip(s).map(|(&g, &v)| g * v).sum();
        let k_over_n = half_area / norm;
        let centre = dot / norm;
        for ((d, &g), &v) in dz.iter_mut().zip(gm).zip(s) {
            *d = k_over_n * (g - centre) * v * (S::one() - v);
        }
    }
    let d_logits = Tensor::from_parts(trace.mask.shape().to_vec(), d_logits);
    let g = ops::conv2d_backward(appearance, weight, bias, Padding::Same, &d_logits, true)?;
    Ok(MaskGrads {
        appearance: g.input.expect("input gradient requested"),
        weight: g.weight,
        bias: g.bias,
    })
}

fn check_mask_shapes<S: Scalar>(motion: &Tensor<S>, mask: &Tensor<S>) -> Result<[usize; 4]> {
    let [t, c, h, w] = motion.expect4("motion features")?;
    let [mt, mc, mh, mw] = mask.expect4("attention mask")?;
    if mt != t || mc != 1 || mh != h || mw != w {
        return Err(Error::Shape(format!(
            "mask {:?} cannot weight motion features {:?}",
            mask.shape(),
            motion.shape()
        )));
    }
    Ok([t, c, h, w])
}

/// `out[t, c, h, w] = motion[t, c, h, w] * mask[t, 0, h, w]`.
pub fn apply_spatial_attention<S: Scalar>(motion: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    let [_, c, h, w] = check_mask_shapes(motion, mask)?;
    let plane = h * w;
    let mut out = motion.clone();
    for (i, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let m = mask.outer(i / c);
        for (v, &k) in dst.iter_mut().zip(m) {
            *v *= k;
        }
    }
    Ok(out)
}

/// Returns `(d_motion, d_mask)`.
pub fn apply_spatial_attention_backward<S: Scalar>(
    motion: &Tensor<S>,
    mask: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let [_, c, h, w] = check_mask_shapes(motion, mask)?;
    motion.same_shape(grad_out, "masked feature gradient")?;
    let plane = h * w;
    let d_motion = apply_spatial_attention(grad_out, mask)?;
    let mut d_mask = Tensor::zeros(mask.shape());
    for (i, (g, x)) in grad_out
        .data()
        .chunks(plane)
        .zip(motion.data().chunks(plane))
        .enumerate()
    {
        let dst = &mut d_mask.data_mut()[(i / c) * plane..(i / c + 1) * plane];
        for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(x) {
            *d += gv * xv;
        }
    }
    Ok((d_motion, d_mask))
}

/// Channel descriptors and gates of one channel-attention application.
#[derive(Clone, Debug)]
pub struct EcaTrace<S> {
    pub pooled: Tensor<S>,
    /// `[T, C]` gate values in `(0, 1)`.
    pub gates: Tensor<S>,
}

/// Efficient channel attention: `feat * sigmoid(conv1d(global_avg_pool(feat), kernel))`.
pub fn eca_gate<S: Scalar>(feat: &Tensor<S>, kernel: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(eca_forward(feat, kernel)?.0)
}

pub fn eca_forward<S: Scalar>(feat: &Tensor<S>, kernel: &Tensor<S>) -> Result<(Tensor<S>, EcaTrace<S>)> {
    let [t, c, h, w] = feat.expect4("channel attention input")?;
    let pooled = ops::global_avg_pool(feat)?;
    let gates = ops::sigmoid(&ops::conv1d(&pooled, kernel)?);
    let mut out = feat.clone();
    for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let g = gates.data()[i];
        plane.iter_mut().for_each(|v| *v *= g);
    }
    debug_assert_eq!(gates.len(), t * c);
    Ok((out, EcaTrace { pooled, gates }))
}

/// Returns `(d_feat, d_kernel)`.
pub fn eca_backward<S: Scalar>(
    feat: &Tensor<S>,
    kernel: &Tensor<S>,
    trace: &EcaTrace<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let [t, c, h, w] = feat.expect4("channel attention input")?;
    feat.same_shape(grad_out, "channel attention gradient")?;
    let plane = h * w;
    let mut d_feat = grad_out.clone();
    let mut d_gates = Vec::with_capacity(t * c);
    for (i, (dst, x)) in d_feat
        .data_mut()
        .chunks_mut(plane)
        .zip(feat.data().chunks(plane))
        .enumerate()
    {
        let g = trace.gates.data()[i];
        let mut dg = S::zero();
        for (d, &xv) in dst.iter_mut().zip(x) {
            dg += *d * xv;
            *d *= g;
        }
        d_gates.push(dg);
    }
    let d_gates = Tensor::from_parts(vec![t, c], d_gates);
    let d_logits = ops::sigmoid_backward(&trace.gates, &d_gates)?;
    let (d_pooled, d_kernel) = ops::conv1d_backward(&trace.pooled, kernel, &d_logits)?;
    let d_from_pool = ops::global_avg_pool_backward(feat.shape(), &d_pooled)?;
    d_feat.add_assign(&d_from_pool)?;
    Ok((d_feat, d_kernel))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_ramp(t_len: usize, c: usize) -> Tensor<f32> {
        Tensor::from_fn(&[t_len, c, 1, 1], |i| (i / c) as f32)
    }

    fn channel(t: &Tensor<f32>, ch: usize) -> Vec<f32> {
        let c = t.shape()[1];
        (0..t.shape()[0]).map(|f| t.data()[f * c + ch]).collect()
    }

    #[test]
    fn shift_hand_example() {
        let x = frame_ramp(3, 8);
        let y = temporal_shift(&x, &ShiftSpec::default()).unwrap();
        assert_eq!(channel(&y, 0), vec![0.0, 0.0, 1.0]);
        assert_eq!(channel(&y, 1), vec![1.0, 2.0, 0.0]);
        for ch in 2..8 {
            assert_eq!(channel(&y, ch), vec![0.0, 1.0, 2.0]);
        }
    }

    #[test]
    fn zero_fractions_are_identity() {
        let x = Tensor::<f32>::from_fn(&[4, 6, 2, 3], |i| i as f32);
        assert_eq!(temporal_shift(&x, &ShiftSpec::none()).unwrap(), x);
    }

    #[test]
    fn oversized_fractions_rejected() {
        let spec = ShiftSpec {
            fraction_forward: Fraction::new(3, 4),
            fraction_backward: Fraction::new(1, 2),
        };
        assert!(temporal_shift(&Tensor::<f32>::zeros(&[2, 4, 1, 1]), &spec).is_err());
    }

    #[test]
    fn constant_response_gives_half_mask() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 4, 5], |i| (i as f32).cos());
        let mask = spatial_attention_mask(&x, &Tensor::zeros(&[1, 3, 1, 1]), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(mask.shape(), &[2, 1, 4, 5]);
        assert!(mask.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn saturated_response_falls_back_to_uniform() {
        let x = Tensor::<f32>::ones(&[1, 1, 2, 2]);
        let w = Tensor::<f32>::full(&[1, 1, 1, 1], -1e4);
        let trace = spatial_attention_forward(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(trace.degenerate_frames, vec![0]);
        assert!(trace.mask.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mask_shape_mismatch_rejected() {
        let m = Tensor::<f32>::ones(&[2, 3, 4, 4]);
        assert!(apply_spatial_attention(&m, &Tensor::ones(&[2, 1, 4, 5])).is_err());
        assert!(apply_spatial_attention(&m, &Tensor::ones(&[2, 2, 4, 4])).is_err());
    }

    #[test]
    fn unit_and_half_masks() {
        let m = Tensor::<f32>::from_fn(&[2, 3, 4, 4], |i| i as f32 - 40.0);
        assert_eq!(apply_spatial_attention(&m, &Tensor::ones(&[2, 1, 4, 4])).unwrap(), m);
        let halved = apply_spatial_attention(&m, &Tensor::full(&[2, 1, 4, 4], 0.5)).unwrap();
        assert_eq!(halved, m.map(|v| v * 0.5));
    }

    #[test]
    fn zero_kernel_halves_input() {
        let x = Tensor::<f32>::from_fn(&[2, 5, 3, 3], |i| (i as f32 * 0.3).sin());
        let y = eca_gate(&x, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y, x.map(|v| v * 0.5));
    }

    #[test]
    fn centre_tap_gate_closed_form() {
        let means = [0.5f64, -1.0, 2.0, 0.0];
        let x = Tensor::<f64>::from_fn(&[1, 4, 2, 2], |i| means[i / 4]);
        let kappa = 1.7;
        let kernel = Tensor::new(&[3], vec![0.0, kappa, 0.0]).unwrap();
        let (_, trace) = eca_forward(&x, &kernel).unwrap();
        for (c, &m) in means.iter().enumerate() {
            let want = 1.0 / (1.0 + (-kappa * m).exp());
            assert!((trace.gates.data()[c] - want).abs() < 1e-12);
        }
    }
}
