use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg_core::blocks::{self, Fraction, ShiftSpec};
use rppg_core::numerics::{grad_check, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn weighted(out: &Tensor<f64>, upstream: &Tensor<f64>) -> f64 {
    out.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
}

/// Per-element index arithmetic, independent of the slice-based shift.
fn naive_shift(x: &Tensor<f64>, forward: usize, backward: usize) -> Tensor<f64> {
    let [t, c, h, w] = x.dims4();
    let at = |ti: usize, ci: usize, yi: usize, xi: usize| x.data()[((ti * c + ci) * h + yi) * w + xi];
    Tensor::from_fn(x.shape(), |i| {
        let xi = i % w;
        let yi = (i / w) % h;
        let ci = (i / (w * h)) % c;
        let ti = i / (w * h * c);
        if ci < forward {
            if ti == 0 {
                0.0
            } else {
                at(ti - 1, ci, yi, xi)
            }
        } else if ci < forward + backward {
            if ti + 1 == t {
                0.0
            } else {
                at(ti + 1, ci, yi, xi)
            }
        } else {
            at(ti, ci, yi, xi)
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_matches_index_oracle(
        t in 1usize..6, c in 1usize..17, hw in 1usize..4,
        nf in 0u32..3, nb in 0u32..3, seed in any::<u64>(),
    ) {
        let spec = ShiftSpec { fraction_forward: Fraction::new(nf, 8), fraction_backward: Fraction::new(nb, 8) };
        let x = random(&[t, c, hw, hw], &mut ChaCha8Rng::seed_from_u64(seed));
        let (f, b) = spec.split(c);
        prop_assert_eq!(blocks::temporal_shift(&x, &spec).unwrap(), naive_shift(&x, f, b));
    }

    #[test]
    fn mask_sum_is_half_area(
        t in 1usize..4, c in 1usize..6, h in 1usize..12, w in 1usize..12,
        scale in 0.01f64..50.0, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let app = random(&[t, c, h, w], &mut rng).map(|v| v * scale);
        let wt = random(&[1, c, 1, 1], &mut rng);
        let b = random(&[1], &mut rng);
        let mask = blocks::spatial_attention_mask(&app, &wt, &b).unwrap();
        let half = (h * w) as f64 / 2.0;
        for f in 0..t {
            let s: f64 = mask.outer(f).iter().sum();
            prop_assert!((s - half).abs() <= 1e-3 * half);
        }
    }

    #[test]
    fn eca_never_flips_or_grows(seed in any::<u64>(), c in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, c, 3, 3], &mut rng).map(|v| v * 10.0);
        let k = random(&[3], &mut rng).map(|v| v * 5.0);
        let y = blocks::eca_gate(&x, &k).unwrap();
        for (&a, &b) in x.data().iter().zip(y.data()) {
            prop_assert!(a * b >= 0.0);
            prop_assert!(b.abs() <= a.abs());
        }
    }
}

#[test]
fn shift_preserves_values_except_dropped_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[5, 8, 2, 2], |_| rng.gen_range(1.0..2.0));
    let y = blocks::temporal_shift(&x, &ShiftSpec::default()).unwrap();
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
    // One channel each way, one boundary frame each, 4 pixels per plane.
    assert_eq!(zeros, 2 * 4);
    let mut a: Vec<f64> = x.data().to_vec();
    let mut b: Vec<f64> = y.data().iter().copied().filter(|&v| v != 0.0).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert!(b.iter().all(|v| a.binary_search_by(|p| p.total_cmp(v)).is_ok()));
    assert_eq!(b.len(), a.len() - 8);
}

#[test]
fn masked_features_match_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (t, c, h, w) = (2, 4, 6, 6);
    let app = random(&[t, c, h, w], &mut rng);
    let motion = random(&[t, c, h, w], &mut rng);
    let wt = random(&[1, c, 1, 1], &mut rng);
    let b = random(&[1], &mut rng);
    let mask = blocks::spatial_attention_mask(&app, &wt, &b).unwrap();
    let got = blocks::apply_spatial_attention(&motion, &mask).unwrap();

    let idx = |ti: usize, ci: usize, y: usize, x: usize| ((ti * c + ci) * h + y) * w + x;
    for ti in 0..t {
        let mut s = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut z = b.data()[0];
                for ci in 0..c {
                    z += wt.data()[ci] * app.data()[idx(ti, ci, y, x)];
                }
                s[y * w + x] = 1.0 / (1.0 + (-z).exp());
            }
        }
        let l1: f64 = s.iter().sum();
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let want = (h * w) as f64 * s[y * w + x] / (2.0 * l1) * motion.data()[idx(ti, ci, y, x)];
                    let have = got.data()[idx(ti, ci, y, x)];
                    assert!((want - have).abs() < 1e-5, "{want} vs {have}");
                }
            }
        }
    }
}

#[test]
fn attention_chain_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let app = random(&[2, 3, 4, 4], &mut rng);
        let motion = random(&[2, 3, 4, 4], &mut rng);
        let wt = random(&[1, 3, 1, 1], &mut rng);
        let b = random(&[1], &mut rng);
        let up = random(&[2, 3, 4, 4], &mut rng);
        let trace = blocks::spatial_attention_forward(&app, &wt, &b).unwrap();
        let (d_motion, d_mask) = blocks::apply_spatial_attention_backward(&motion, &trace.mask, &up).unwrap();
        let g = blocks::spatial_attention_backward(&app, &wt, &b, &trace, &d_mask).unwrap();
        let f = |v: &[Tensor<f64>]| {
            let mask = blocks::spatial_attention_mask(&v[1], &v[2], &v[3]).unwrap();
            weighted(&blocks::apply_spatial_attention(&v[0], &mask).unwrap(), &up)
        };
        let r = grad_check(
            f,
            &[motion, app, wt, b],
            &[d_motion, g.appearance, g.weight, g.bias],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.pass, "seed {seed}: {r:?}");
    }
}

#[test]
fn eca_and_shift_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[3, 8, 3, 3], &mut rng);
        let k = random(&[3], &mut rng);
        let up = random(x.shape(), &mut rng);
        let (_, trace) = blocks::eca_forward(&x, &k).unwrap();
        let (dx, dk) = blocks::eca_backward(&x, &k, &trace, &up).unwrap();
        let r = grad_check(
            |v| weighted(&blocks::eca_gate(&v[0], &v[1]).unwrap(), &up),
            &[x.clone(), k],
            &[dx, dk],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.pass, "eca seed {seed}: {r:?}");

        let spec = ShiftSpec::default();
        let dx = blocks::temporal_shift_backward(&up, &spec).unwrap();
        let r = grad_check(
            |v| weighted(&blocks::temporal_shift(&v[0], &spec).unwrap(), &up),
            &[x],
            &[dx],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.pass, "shift seed {seed}: {r:?}");
    }
}
