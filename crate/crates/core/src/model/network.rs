use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EcaSite, ModelConfig};
use crate::blocks::{self, EcaTrace, MaskTrace};
use crate::error::{Error, Result};
use crate::numerics::ops::{self, Padding};
use crate::numerics::{Parameter, Scalar, Tensor};

/// Forward-pass mode. Dropout is only active in training mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Infer,
}

/// Waveforms and attention masks produced for one clip.
#[derive(Clone, Debug)]
pub struct ModelOutput<S = f32> {
    /// Predicted pulse waveform `[T]`; absent for respiration-only models.
    pub pulse: Option<Tensor<S>>,
    /// Predicted respiration waveform `[T]`; absent for pulse-only models.
    pub resp: Option<Tensor<S>>,
    /// The two spatial attention masks, `[T, 1, H1, W1]` and `[T, 1, H2, W2]`.
    pub attention_maps: [Tensor<S>; 2],
}

/// One entry of the layer manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Shift,
    Conv,
    Attention,
    Eca,
    Pool,
    Dropout,
    Dense,
    Head,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Clone, Debug)]
struct Slots {
    motion_conv: [usize; 4],
    appearance_conv: [usize; 4],
    attention: [usize; 2],
    eca_appearance: [Option<usize>; 2],
    eca_motion: Option<usize>,
    dense: usize,
    head_pulse: Option<usize>,
    head_resp: Option<usize>,
}

/// A member of the two-branch network family with its parameters.
///
/// Biases are stored directly after their weights, so the bias of the
/// parameter at slot `i` lives at `i + 1`.
#[derive(Clone, Debug)]
pub struct Model<S = f32> {
    config: ModelConfig,
    params: Vec<Parameter<S>>,
    slots: Slots,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn uniform<S: Scalar>(shape: &[usize], limit: f64, seed: u64, name: &str) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    Tensor::from_fn(shape, |_| S::of(rng.gen_range(-limit..limit)))
}

struct Builder<S> {
    seed: u64,
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> Builder<S> {
    fn push(&mut self, p: Parameter<S>) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> usize {
        let fan = ((cin + cout) * k * k) as f64;
        let w = uniform(&[cout, cin, k, k], (6.0 / fan).sqrt(), self.seed, name);
        let i = self.push(Parameter::new(format!("{name}.weight"), w));
        self.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(&[cout])));
        i
    }

    fn dense(&mut self, name: &str, fin: usize, fout: usize) -> usize {
        let w = uniform(&[fin, fout], (6.0 / (fin + fout) as f64).sqrt(), self.seed, name);
        let i = self.push(Parameter::new(format!("{name}.weight"), w));
        self.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(&[fout])));
        i
    }

    fn eca(&mut self, name: &str, k: usize) -> usize {
        let w = uniform(&[k], 1.0 / (k as f64).sqrt(), self.seed, name);
        self.push(Parameter::new(format!("{name}.kernel"), w))
    }
}

/// Intermediate activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<S> {
    motion_in: Tensor<S>,
    m1: Tensor<S>,
    m2: Tensor<S>,
    appearance_in: Tensor<S>,
    a1: Tensor<S>,
    a2: Tensor<S>,
    eca_a1: Option<EcaTrace<S>>,
    a2g: Tensor<S>,
    mask1: MaskTrace<S>,
    masked1: Tensor<S>,
    drop1_m: Option<Tensor<S>>,
    drop1_a: Option<Tensor<S>>,
    pooled_a: Tensor<S>,
    motion2_in: Tensor<S>,
    m3: Tensor<S>,
    m4: Tensor<S>,
    a3: Tensor<S>,
    a4: Tensor<S>,
    eca_a2: Option<EcaTrace<S>>,
    a4g: Tensor<S>,
    mask2: MaskTrace<S>,
    masked2: Tensor<S>,
    eca_m: Option<EcaTrace<S>>,
    gated: Tensor<S>,
    drop2: Option<Tensor<S>>,
    flat: Tensor<S>,
    hidden: Tensor<S>,
    drop3: Option<Tensor<S>>,
    head_in: Tensor<S>,
}

impl<S: Scalar> Model<S> {
    /// Builds a model with parameters drawn deterministically from `seed`.
    ///
    /// Each parameter's initial value depends only on the seed and its name, so
    /// layers shared between variants start from identical weights.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [w1, w2] = config.conv_widths;
        let k = config.kernel;
        let mut b = Builder {
            seed,
            params: Vec::new(),
        };
        let chans = [(3, w1), (w1, w1), (w1, w2), (w2, w2)];
        let motion_conv = std::array::from_fn(|i| b.conv(&format!("motion.conv{}", i + 1), chans[i].0, chans[i].1, k));
        let appearance_conv =
            std::array::from_fn(|i| b.conv(&format!("appearance.conv{}", i + 1), chans[i].0, chans[i].1, k));
        let attention = [b.conv("attention1", w1, 1, 1), b.conv("attention2", w2, 1, 1)];
        let eca_appearance = [
            config
                .has_eca(EcaSite::AppearanceMask1)
                .then(|| b.eca("eca.appearance1", config.eca_kernel)),
            config
                .has_eca(EcaSite::AppearanceMask2)
                .then(|| b.eca("eca.appearance2", config.eca_kernel)),
        ];
        let eca_motion = config
            .has_eca(EcaSite::MotionFinal)
            .then(|| b.eca("eca.motion", config.eca_kernel));
        let flat = w2 * config.final_hw() * config.final_hw();
        let dense = b.dense("dense", flat, config.dense_units);
        let head_pulse = config
            .task
            .has_pulse()
            .then(|| b.dense("head.pulse", config.dense_units, 1));
        let head_resp = config
            .task
            .has_resp()
            .then(|| b.dense("head.resp", config.dense_units, 1));
        Ok(Model {
            config,
            params: b.params,
            slots: Slots {
                motion_conv,
                appearance_conv,
                attention,
                eca_appearance,
                eca_motion,
                dense,
                head_pulse,
                head_resp,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<S>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Copies every parameter whose name also exists in `other`; returns how many were copied.
    pub fn copy_shared_from(&mut self, other: &Model<S>) -> usize {
        let mut n = 0;
        for p in &mut self.params {
            if let Some(q) = other.param(&p.name) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                    n += 1;
                }
            }
        }
        n
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(Parameter::cast).collect(),
            slots: self.slots.clone(),
        }
    }

    /// Replaces parameter values by name, checking shapes.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<S>)>) -> Result<()> {
        for (name, value) in values {
            let p = self
                .param_mut(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
            p.value.same_shape(&value, &format!("parameter `{name}`"))?;
            p.value = value;
        }
        Ok(())
    }

    /// Ordered list of the layers the configuration instantiates.
    pub fn manifest(&self) -> Vec<LayerEntry> {
        let c = &self.config;
        let mut out = Vec::new();
        let mut push = |name: &str, kind: LayerKind| {
            out.push(LayerEntry {
                name: name.to_string(),
                kind,
            })
        };
        for stage in 0..2 {
            let (a, b) = (2 * stage + 1, 2 * stage + 2);
            if c.variant.shifted() {
                push(&format!("motion.shift{}", stage + 1), LayerKind::Shift);
            }
            push(&format!("motion.conv{a}"), LayerKind::Conv);
            push(&format!("motion.conv{b}"), LayerKind::Conv);
            push(&format!("appearance.conv{a}"), LayerKind::Conv);
            push(&format!("appearance.conv{b}"), LayerKind::Conv);
            let site = if stage == 0 {
                EcaSite::AppearanceMask1
            } else {
                EcaSite::AppearanceMask2
            };
            if c.has_eca(site) {
                push(&format!("eca.appearance{}", stage + 1), LayerKind::Eca);
            }
            push(&format!("attention{}", stage + 1), LayerKind::Attention);
            if stage == 1 && c.has_eca(EcaSite::MotionFinal) {
                push("eca.motion", LayerKind::Eca);
            }
            push(&format!("pool{}", stage + 1), LayerKind::Pool);
            push(&format!("dropout{}", stage + 1), LayerKind::Dropout);
        }
        push("dense", LayerKind::Dense);
        push("dropout3", LayerKind::Dropout);
        if c.task.has_pulse() {
            push("head.pulse", LayerKind::Head);
        }
        if c.task.has_resp() {
            push("head.resp", LayerKind::Head);
        }
        out
    }

    fn value(&self, slot: usize) -> &Tensor<S> {
        &self.params[slot].value
    }

    fn conv_tanh(&self, slot: usize, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = ops::conv2d(x, self.value(slot), self.value(slot + 1), Padding::Same)?;
        Ok(ops::tanh_inplace(y))
    }

    fn check_inputs(&self, motion: &Tensor<S>, appearance: &Tensor<S>) -> Result<()> {
        let [t, c, h, w] = motion.expect4("motion input")?;
        let hw = self.config.input_hw;
        if c != 3 || h != hw || w != hw {
            return Err(Error::Shape(format!(
                "motion input {:?} does not match [T, 3, {hw}, {hw}]",
                motion.shape()
            )));
        }
        motion.same_shape(appearance, "motion vs appearance input")?;
        if self.config.variant.shifted() && t < 2 {
            return Err(Error::Shape(format!(
                "shifted variants need at least 2 frames, got {t}"
            )));
        }
        if !motion.all_finite() || !appearance.all_finite() {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }

    fn dropout(&self, mode: Mode, rate: f64, shape: &[usize], salt: u64) -> Result<Option<Tensor<S>>> {
        match mode {
            Mode::Train { seed } if rate > 0.0 => Ok(Some(ops::dropout_mask(
                shape,
                rate,
                seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt),
            )?)),
            _ => Ok(None),
        }
    }

    fn maybe_mul(x: Tensor<S>, mask: &Option<Tensor<S>>) -> Result<Tensor<S>> {
        match mask {
            Some(m) => ops::elementwise_mul(&x, m),
            None => Ok(x),
        }
    }

    /// Runs the network over one clip of `T` motion and appearance frames.
    pub fn forward(&self, motion: &Tensor<S>, appearance: &Tensor<S>, mode: Mode) -> Result<ModelOutput<S>> {
        Ok(self.forward_traced(motion, appearance, mode)?.0)
    }

    pub fn forward_traced(
        &self,
        motion: &Tensor<S>,
        appearance: &Tensor<S>,
        mode: Mode,
    ) -> Result<(ModelOutput<S>, Trace<S>)> {
        self.check_inputs(motion, appearance)?;
        let c = &self.config;
        let s = &self.slots;
        let t_len = motion.shape()[0];

        // Stage 1.
        let motion_in = if c.variant.shifted() {
            blocks::temporal_shift(motion, &c.shift)?
        } else {
            motion.clone()
        };
        let m1 = self.conv_tanh(s.motion_conv[0], &motion_in)?;
        let m2 = self.conv_tanh(s.motion_conv[1], &m1)?;
        let a1 = self.conv_tanh(s.appearance_conv[0], appearance)?;
        let a2 = self.conv_tanh(s.appearance_conv[1], &a1)?;
        let (a2g, eca_a1) = match s.eca_appearance[0] {
            Some(k) => {
                let (y, tr) = blocks::eca_forward(&a2, self.value(k))?;
                (y, Some(tr))
            }
            None => (a2.clone(), None),
        };
        let att = s.attention[0];
        let mask1 = blocks::spatial_attention_forward(&a2g, self.value(att), self.value(att + 1))?;
        let masked1 = blocks::apply_spatial_attention(&m2, &mask1.mask)?;
        let pooled_m = ops::avg_pool2d(&masked1, 2)?;
        let pooled_a = ops::avg_pool2d(&a2g, 2)?;
        let drop1_m = self.dropout(mode, c.dropout_rates[0], pooled_m.shape(), 1)?;
        let drop1_a = self.dropout(mode, c.dropout_rates[0], pooled_a.shape(), 2)?;
        let pooled_m = Self::maybe_mul(pooled_m, &drop1_m)?;
        let pooled_a = Self::maybe_mul(pooled_a, &drop1_a)?;

        // Stage 2.
        let motion2_in = if c.variant.shifted() {
            blocks::temporal_shift(&pooled_m, &c.shift)?
        } else {
            pooled_m
        };
        let m3 = self.conv_tanh(s.motion_conv[2], &motion2_in)?;
        let m4 = self.conv_tanh(s.motion_conv[3], &m3)?;
        let a3 = self.conv_tanh(s.appearance_conv[2], &pooled_a)?;
        let a4 = self.conv_tanh(s.appearance_conv[3], &a3)?;
        let (a4g, eca_a2) = match s.eca_appearance[1] {
            Some(k) => {
                let (y, tr) = blocks::eca_forward(&a4, self.value(k))?;
                (y, Some(tr))
            }
            None => (a4.clone(), None),
        };
        let att = s.attention[1];
        let mask2 = blocks::spatial_attention_forward(&a4g, self.value(att), self.value(att + 1))?;
        let masked2 = blocks::apply_spatial_attention(&m4, &mask2.mask)?;
        let (gated, eca_m) = match s.eca_motion {
            Some(k) => {
                let (y, tr) = blocks::eca_forward(&masked2, self.value(k))?;
                (y, Some(tr))
            }
            None => (masked2.clone(), None),
        };
        let pooled2 = ops::avg_pool2d(&gated, 2)?;
        let drop2 = self.dropout(mode, c.dropout_rates[1], pooled2.shape(), 3)?;
        let pooled2 = Self::maybe_mul(pooled2, &drop2)?;
        let features = pooled2.len() / t_len;
        let flat = pooled2.reshape(&[t_len, features])?;

        // Head.
        let hidden = ops::tanh(&ops::dense(&flat, self.value(s.dense), self.value(s.dense + 1))?);
        let drop3 = self.dropout(mode, c.dropout_rates[2], hidden.shape(), 4)?;
        let head_in = Self::maybe_mul(hidden.clone(), &drop3)?;
        let head = |slot: Option<usize>| -> Result<Option<Tensor<S>>> {
            slot.map(|h| ops::dense(&head_in, self.value(h), self.value(h + 1))?.reshape(&[t_len]))
                .transpose()
        };
        let pulse = head(s.head_pulse)?;
        let resp = head(s.head_resp)?;

        let output = ModelOutput {
            pulse,
            resp,
            attention_maps: [mask1.mask.clone(), mask2.mask.clone()],
        };
        let trace = Trace {
            motion_in,
            m1,
            m2,
            appearance_in: appearance.clone(),
            a1,
            a2,
            eca_a1,
            a2g,
            mask1,
            masked1,
            drop1_m,
            drop1_a,
            pooled_a,
            motion2_in,
            m3,
            m4,
            a3,
            a4,
            eca_a2,
            a4g,
            mask2,
            masked2,
            eca_m,
            gated,
            drop2,
            flat,
            hidden,
            drop3,
            head_in,
        };
        Ok((output, trace))
    }

    fn accumulate(&mut self, slot: usize, grad: &Tensor<S>) -> Result<()> {
        self.params[slot].grad.add_assign(grad)
    }

    /// Backward through a `conv -> tanh` pair; returns the input gradient if requested.
    fn conv_tanh_backward(
        &mut self,
        slot: usize,
        input: &Tensor<S>,
        output: &Tensor<S>,
        grad_out: &Tensor<S>,
        need_input: bool,
    ) -> Result<Option<Tensor<S>>> {
        let dz = ops::tanh_backward(output, grad_out)?;
        let g = ops::conv2d_backward(
            input,
            self.value(slot),
            self.value(slot + 1),
            Padding::Same,
            &dz,
            need_input,
        )?;
        self.accumulate(slot, &g.weight)?;
        self.accumulate(slot + 1, &g.bias)?;
        Ok(g.input)
    }

    fn eca_backward(
        &mut self,
        slot: Option<usize>,
        input: &Tensor<S>,
        trace: &Option<EcaTrace<S>>,
        grad_out: Tensor<S>,
    ) -> Result<Tensor<S>> {
        match (slot, trace) {
            (Some(k), Some(tr)) => {
                let (dx, dk) = blocks::eca_backward(input, self.value(k), tr, &grad_out)?;
                self.accumulate(k, &dk)?;
                Ok(dx)
            }
            _ => Ok(grad_out),
        }
    }

    fn mask_backward(
        &mut self,
        slot: usize,
        appearance: &Tensor<S>,
        trace: &MaskTrace<S>,
        grad_mask: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let g =
            blocks::spatial_attention_backward(appearance, self.value(slot), self.value(slot + 1), trace, grad_mask)?;
        self.accumulate(slot, &g.weight)?;
        self.accumulate(slot + 1, &g.bias)?;
        Ok(g.appearance)
    }

    /// Accumulates parameter gradients given loss gradients w.r.t. the output
    /// waveforms. A missing gradient counts as zero.
    pub fn backward(
        &mut self,
        trace: &Trace<S>,
        grad_pulse: Option<&Tensor<S>>,
        grad_resp: Option<&Tensor<S>>,
    ) -> Result<()> {
        let s = self.slots.clone();
        let t_len = trace.flat.shape()[0];
        let units = self.config.dense_units;

        let mut d_head_in = Tensor::zeros(&[t_len, units]);
        for (slot, grad) in [(s.head_pulse, grad_pulse), (s.head_resp, grad_resp)] {
            if let (Some(h), Some(g)) = (slot, grad) {
                if g.len() != t_len {
                    return Err(Error::Shape(format!(
                        "waveform gradient {:?} does not match {t_len} frames",
                        g.shape()
                    )));
                }
                let g = g.clone().reshape(&[t_len, 1])?;
                let dg = ops::dense_backward(&trace.head_in, self.value(h), &g)?;
                self.accumulate(h, &dg.weight)?;
                self.accumulate(h + 1, &dg.bias)?;
                d_head_in.add_assign(&dg.input)?;
            }
        }
        let d_hidden = Self::maybe_mul(d_head_in, &trace.drop3)?;
        let d_pre = ops::tanh_backward(&trace.hidden, &d_hidden)?;
        let dg = ops::dense_backward(&trace.flat, self.value(s.dense), &d_pre)?;
        self.accumulate(s.dense, &dg.weight)?;
        self.accumulate(s.dense + 1, &dg.bias)?;

        let gated_shape = trace.gated.shape().to_vec();
        let pooled_shape = [gated_shape[0], gated_shape[1], gated_shape[2] / 2, gated_shape[3] / 2];
        let d_pooled2 = Self::maybe_mul(dg.input.reshape(&pooled_shape)?, &trace.drop2)?;
        let d_gated = ops::avg_pool2d_backward(&gated_shape, 2, &d_pooled2)?;
        let d_masked2 = self.eca_backward(s.eca_motion, &trace.masked2, &trace.eca_m, d_gated)?;
        let (d_m4, d_mask2) = blocks::apply_spatial_attention_backward(&trace.m4, &trace.mask2.mask, &d_masked2)?;

        // Appearance branch, stage 2.
        let d_a4g = self.mask_backward(s.attention[1], &trace.a4g, &trace.mask2, &d_mask2)?;
        let d_a4 = self.eca_backward(s.eca_appearance[1], &trace.a4, &trace.eca_a2, d_a4g)?;
        let d_a3 = self
            .conv_tanh_backward(s.appearance_conv[3], &trace.a3, &trace.a4, &d_a4, true)?
            .expect("requested");
        let d_pooled_a = self
            .conv_tanh_backward(s.appearance_conv[2], &trace.pooled_a, &trace.a3, &d_a3, true)?
            .expect("requested");
        let d_pooled_a = Self::maybe_mul(d_pooled_a, &trace.drop1_a)?;
        let mut d_a2g = ops::avg_pool2d_backward(trace.a2g.shape(), 2, &d_pooled_a)?;

        // Motion branch, stage 2.
        let d_m3 = self
            .conv_tanh_backward(s.motion_conv[3], &trace.m3, &trace.m4, &d_m4, true)?
            .expect("requested");
        let d_motion2_in = self
            .conv_tanh_backward(s.motion_conv[2], &trace.motion2_in, &trace.m3, &d_m3, true)?
            .expect("requested");
        let d_pooled_m = if self.config.variant.shifted() {
            blocks::temporal_shift_backward(&d_motion2_in, &self.config.shift)?
        } else {
            d_motion2_in
        };
        let d_pooled_m = Self::maybe_mul(d_pooled_m, &trace.drop1_m)?;
        let d_masked1 = ops::avg_pool2d_backward(trace.masked1.shape(), 2, &d_pooled_m)?;
        let (d_m2, d_mask1) = blocks::apply_spatial_attention_backward(&trace.m2, &trace.mask1.mask, &d_masked1)?;

        // Appearance branch, stage 1.
        let d_from_mask = self.mask_backward(s.attention[0], &trace.a2g, &trace.mask1, &d_mask1)?;
        d_a2g.add_assign(&d_from_mask)?;
        let d_a2 = self.eca_backward(s.eca_appearance[0], &trace.a2, &trace.eca_a1, d_a2g)?;
        let d_a1 = self
            .conv_tanh_backward(s.appearance_conv[1], &trace.a1, &trace.a2, &d_a2, true)?
            .expect("requested");
        self.conv_tanh_backward(s.appearance_conv[0], &trace.appearance_in, &trace.a1, &d_a1, false)?;

        // Motion branch, stage 1.
        let d_m1 = self
            .conv_tanh_backward(s.motion_conv[1], &trace.m1, &trace.m2, &d_m2, true)?
            .expect("requested");
        self.conv_tanh_backward(s.motion_conv[0], &trace.motion_in, &trace.m1, &d_m1, false)?;
        Ok(())
    }
}
