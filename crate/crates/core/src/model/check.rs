use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss_multitask_grad, Mode, Model, ModelConfig, Targets};
use crate::error::Result;
use crate::numerics::{grad_check, GradReport, Tensor};

/// Finite-difference check of every parameter gradient of a whole model, in
/// double precision, on random inputs and targets drawn from `seed`.
///
/// Biases are randomised first so that no gradient vanishes by symmetry.
pub fn check_model_gradients(config: &ModelConfig, seed: u64, step: f64, tolerance: f64) -> Result<GradReport> {
    config.validate()?;
    let mut model = Model::<f32>::build(config.clone(), seed)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    for p in model.params_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
    let (t, hw) = (config.frames_per_clip, config.input_hw);
    let mut draw = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let motion = draw(&[t, 3, hw, hw]);
    let appearance = draw(&[t, 3, hw, hw]);
    let pulse = draw(&[t]);
    let resp = draw(&[t]);
    let targets = Targets {
        pulse: Some(&pulse),
        resp: Some(&resp),
    };

    let (out, trace) = model.forward_traced(&motion, &appearance, Mode::Infer)?;
    let lg = loss_multitask_grad(&out, &targets, 1.0, 1.0)?;
    model.zero_grad();
    model.backward(&trace, lg.pulse.as_ref(), lg.resp.as_ref())?;

    let values: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let grads: Vec<Tensor<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    grad_check(
        |vals| {
            let mut m = model.clone();
            for (p, v) in m.params_mut().iter_mut().zip(vals) {
                p.value = v.clone();
            }
            m.forward(&motion, &appearance, Mode::Infer)
                .and_then(|o| loss_multitask_grad(&o, &targets, 1.0, 1.0))
                .map_or(f64::NAN, |l| l.loss)
        },
        &values,
        &grads,
        step,
        tolerance,
    )
}
