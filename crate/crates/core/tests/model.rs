use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg_core::model::{checkpoint, loss_multitask_grad, LayerKind, Mode, Model, ModelConfig, Targets, Task, Variant};
use rppg_core::numerics::{grad_check, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn inputs(config: &ModelConfig, seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = config.input_hw;
    let t = config.frames_per_clip;
    (
        random(&[t, 3, hw, hw], &mut rng, 1.0),
        random(&[t, 3, hw, hw], &mut rng, 1.0),
        random(&[t], &mut rng, 1.0),
        random(&[t], &mut rng, 1.0),
    )
}

/// Perturbs every bias so that no gradient is identically zero by symmetry.
fn jitter(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
}

fn composed_check(variant: Variant, task: Task, seed: u64) -> f64 {
    let config = ModelConfig::miniature(variant, task);
    let mut model = Model::<f32>::build(config.clone(), seed).unwrap().cast::<f64>();
    jitter(&mut model, seed + 1);
    let (motion, appearance, p, r) = inputs(&config, seed + 2);

    let loss_of = |m: &Model<f64>| {
        let out = m.forward(&motion, &appearance, Mode::Infer).unwrap();
        loss_multitask_grad(
            &out,
            &Targets {
                pulse: Some(&p),
                resp: Some(&r),
            },
            1.0,
            1.0,
        )
        .unwrap()
        .loss
    };

    let (out, trace) = model.forward_traced(&motion, &appearance, Mode::Infer).unwrap();
    let lg = loss_multitask_grad(
        &out,
        &Targets {
            pulse: Some(&p),
            resp: Some(&r),
        },
        1.0,
        1.0,
    )
    .unwrap();
    model.zero_grad();
    model.backward(&trace, lg.pulse.as_ref(), lg.resp.as_ref()).unwrap();

    let values: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let grads: Vec<Tensor<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    let template = model.clone();
    let report = grad_check(
        |vals| {
            let mut m = template.clone();
            for (p, v) in m.params_mut().iter_mut().zip(vals) {
                p.value = v.clone();
            }
            loss_of(&m)
        },
        &values,
        &grads,
        1e-5,
        1e-3,
    )
    .unwrap();
    assert!(report.failure.is_none(), "{report:?}");
    report.max_rel_err
}

#[test]
fn composed_gradients_match_finite_differences() {
    for (variant, task) in [
        (Variant::Tsdan, Task::Multitask),
        (Variant::Tscan, Task::Hr),
        (Variant::Can2d, Task::Rr),
    ] {
        let err = composed_check(variant, task, 11);
        assert!(err < 1e-3, "{variant:?}/{task:?}: max rel err {err}");
    }
}

#[test]
fn can2d_has_no_shift_layers() {
    let m = Model::<f32>::build(ModelConfig::new(Variant::Can2d, Task::Hr), 0).unwrap();
    assert!(m.manifest().iter().all(|l| l.kind != LayerKind::Shift));
    let m = Model::<f32>::build(ModelConfig::new(Variant::Tscan, Task::Hr), 0).unwrap();
    assert_eq!(m.manifest().iter().filter(|l| l.kind == LayerKind::Shift).count(), 2);
}

#[test]
fn tsdan_has_three_eca_gates() {
    let m = Model::<f32>::build(ModelConfig::new(Variant::Tsdan, Task::Multitask), 0).unwrap();
    assert_eq!(m.manifest().iter().filter(|l| l.kind == LayerKind::Eca).count(), 3);
    let mut c = ModelConfig::new(Variant::Tsdan, Task::Multitask);
    c.eca_count = 1;
    let m = Model::<f32>::build(c, 0).unwrap();
    assert_eq!(m.manifest().iter().filter(|l| l.kind == LayerKind::Eca).count(), 1);
}

#[test]
fn parameter_count_difference_is_eca_kernels() {
    let ts = Model::<f32>::build(ModelConfig::new(Variant::Tscan, Task::Multitask), 0).unwrap();
    let da = Model::<f32>::build(ModelConfig::new(Variant::Tsdan, Task::Multitask), 0).unwrap();
    assert_eq!(da.parameter_count() - ts.parameter_count(), 9);
}

#[test]
fn same_seed_same_parameters() {
    let c = ModelConfig::miniature(Variant::Tsdan, Task::Multitask);
    let a = Model::<f32>::build(c.clone(), 5).unwrap();
    let b = Model::<f32>::build(c.clone(), 5).unwrap();
    let d = Model::<f32>::build(c, 6).unwrap();
    for (x, y) in a.params().iter().zip(b.params()) {
        assert_eq!(x.value.data(), y.value.data());
    }
    assert_ne!(a.params()[0].value, d.params()[0].value);
}

#[test]
fn stripping_shift_and_eca_reproduces_can2d() {
    let mut c = ModelConfig::miniature(Variant::Tsdan, Task::Multitask);
    c.frames_per_clip = 3;
    let mut tsdan = Model::<f32>::build(c.clone(), 3).unwrap();
    // neutralise the extra machinery: no shifted channels, gates that are not built
    c.shift = rppg_core::blocks::ShiftSpec::none();
    tsdan = {
        let mut m = Model::<f32>::build(c.clone(), 3).unwrap();
        m.copy_shared_from(&tsdan);
        m
    };
    let mut plain = ModelConfig::miniature(Variant::Can2d, Task::Multitask);
    plain.frames_per_clip = 3;
    let mut can2d = Model::<f32>::build(plain.clone(), 99).unwrap();
    let copied = can2d.copy_shared_from(&tsdan);
    assert_eq!(copied, can2d.params().len());

    let mut eca_off = c.clone();
    eca_off.variant = Variant::Tscan;
    eca_off.eca_count = 0;
    let mut stripped = Model::<f32>::build(eca_off, 1).unwrap();
    stripped.copy_shared_from(&tsdan);

    let (m, a, _, _) = inputs(&plain, 4);
    let (m, a) = (m.cast::<f32>(), a.cast::<f32>());
    let x = stripped.forward(&m, &a, Mode::Infer).unwrap();
    let y = can2d.forward(&m, &a, Mode::Infer).unwrap();
    assert_eq!(x.pulse.unwrap().data(), y.pulse.unwrap().data());
    assert_eq!(x.resp.unwrap().data(), y.resp.unwrap().data());
}

#[test]
fn forward_contracts() {
    let c = ModelConfig::miniature(Variant::Tsdan, Task::Hr);
    let m = Model::<f32>::build(c.clone(), 1).unwrap();
    let zeros = Tensor::<f32>::zeros(&[2, 3, 12, 12]);
    let (_, app, _, _) = inputs(&c, 2);
    let app = app.cast::<f32>();
    let out = m.forward(&zeros, &app, Mode::Infer).unwrap();
    let pulse = out.pulse.unwrap();
    assert_eq!(pulse.len(), 2);
    assert!(pulse.all_finite());
    assert!(out.resp.is_none());
    assert_eq!(out.attention_maps[0].shape(), &[2, 1, 12, 12]);
    assert_eq!(out.attention_maps[1].shape(), &[2, 1, 6, 6]);

    let again = m.forward(&zeros, &app, Mode::Infer).unwrap();
    assert_eq!(again.pulse.unwrap().data(), pulse.data());

    let mut bad = app.clone();
    bad.data_mut()[0] = f32::NAN;
    assert!(m.forward(&zeros, &bad, Mode::Infer).is_err());
    assert!(m
        .forward(
            &Tensor::zeros(&[2, 3, 8, 8]),
            &Tensor::zeros(&[2, 3, 8, 8]),
            Mode::Infer
        )
        .is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let c = ModelConfig::miniature(Variant::Tsdan, Task::Multitask);
    let m = Model::<f32>::build(c.clone(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&m, dir.path(), 8, 17).unwrap();
    let (loaded, manifest) = checkpoint::load(dir.path()).unwrap();
    assert_eq!(manifest.step, 17);
    assert_eq!(manifest.parameters.len(), m.params().len());
    let (mo, ap, _, _) = inputs(&c, 9);
    let (mo, ap) = (mo.cast::<f32>(), ap.cast::<f32>());
    let a = m.forward(&mo, &ap, Mode::Infer).unwrap();
    let b = loaded.forward(&mo, &ap, Mode::Infer).unwrap();
    assert_eq!(a.pulse.unwrap().data(), b.pulse.unwrap().data());
    assert_eq!(a.resp.unwrap().data(), b.resp.unwrap().data());
    assert!(checkpoint::load(&dir.path().join("nope")).is_err());
}
