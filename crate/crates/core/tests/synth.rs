use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rppg_core::pipeline::{power_spectrum, rates_from_waveform, Band, RateOptions};
use rppg_core::synth::{
    drm_pixel_signal, make_dataset, render_clip, ConditionMix, DatasetSpec, SceneConfig, SyntheticClip,
};

/// Mean green value over pixels fully inside the skin rectangle, per frame.
fn skin_green(clip: &SyntheticClip) -> Vec<f64> {
    let [t, _, h, w] = clip.frames.dims4();
    let r = clip.config.skin_mask;
    let inside = |x: usize, y: usize| {
        x as f64 >= r.x && (x + 1) as f64 <= r.x + r.w && y as f64 >= r.y && (y + 1) as f64 <= r.y + r.h
    };
    (0..t)
        .map(|f| {
            let green = &clip.frames.outer(f)[h * w..2 * h * w];
            let (mut s, mut n) = (0.0, 0);
            for y in 0..h {
                for x in 0..w {
                    if inside(x, y) {
                        s += green[y * w + x] as f64;
                        n += 1;
                    }
                }
            }
            s / n as f64
        })
        .collect()
}

#[test]
fn skin_pixel_spectrum_peaks_at_pulse() {
    for bpm in [54.0, 72.0, 96.0, 132.0] {
        let c = SceneConfig::clean(bpm, 15.0, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let green: Vec<f64> = (0..600)
            .map(|i| drm_pixel_signal(&c, i as f64 / 20.0, true, &mut rng)[1])
            .collect();
        let spec = power_spectrum(&green, 20.0, 1);
        let peak = (1..spec.power.len())
            .max_by(|&a, &b| spec.power[a].total_cmp(&spec.power[b]))
            .unwrap();
        assert!(
            (spec.freqs[peak] - bpm / 60.0).abs() < 1e-9,
            "{bpm}: peak {} Hz",
            spec.freqs[peak]
        );
    }
}

#[test]
fn rate_round_trip_on_clean_clip() {
    let c = SceneConfig::clean(72.0, 15.0, 11).with_patch(24, 16);
    let clip = render_clip(&c).unwrap();
    let est = rates_from_waveform(&skin_green(&clip), 20.0, Band::Hr, &RateOptions::default(), None).unwrap();
    assert_eq!(est.len(), 3);
    for e in est {
        assert!((e.bpm - 72.0).abs() <= 3.0, "{e:?}");
    }
}

#[test]
fn quiet_skin_mean_is_affine_in_pulse_and_respiration() {
    let c = SceneConfig {
        noise_sigma: 0.0,
        quant_bits: 16,
        ..SceneConfig::clean(84.0, 18.0, 3).with_patch(16, 8)
    };
    let clip = render_clip(&c).unwrap();
    let g = skin_green(&clip);
    let p: Vec<f64> = clip.pulse_gt.data().iter().map(|&v| v as f64).collect();
    let r: Vec<f64> = clip.resp_gt.data().iter().map(|&v| v as f64).collect();

    // Least squares g ~ a + b p + c r, then the correlation of the fit with g.
    let n = g.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (mg, mp, mr) = (mean(&g), mean(&p), mean(&r));
    let dot = |a: &[f64], ma: f64, b: &[f64], mb: f64| a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    let (spp, srr, spr) = (dot(&p, mp, &p, mp), dot(&r, mr, &r, mr), dot(&p, mp, &r, mr));
    let (sgp, sgr) = (dot(&g, mg, &p, mp), dot(&g, mg, &r, mr));
    let det = spp * srr - spr * spr;
    let b = (sgp * srr - sgr * spr) / det;
    let cr = (sgr * spp - sgp * spr) / det;
    let fit: Vec<f64> = p.iter().zip(&r).map(|(x, y)| b * x + cr * y).collect();
    let mf = mean(&fit);
    let corr = dot(&g, mg, &fit, mf) / (dot(&g, mg, &g, mg) * dot(&fit, mf, &fit, mf)).sqrt();
    assert!(corr > 0.999, "{corr}");
}

#[test]
fn natural_background_varies_more_than_clean() {
    let background_var = |c: SceneConfig| {
        let clip = render_clip(&c).unwrap();
        let [t, _, h, w] = clip.frames.dims4();
        let series: Vec<f64> = (0..t).map(|f| clip.frames.outer(f)[h * w] as f64).collect();
        let m = series.iter().sum::<f64>() / t as f64;
        series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64
    };
    let base = SceneConfig {
        duration_s: 10.0,
        ..SceneConfig::clean(70.0, 12.0, 1).with_patch(16, 8)
    };
    let natural = SceneConfig {
        duration_s: 10.0,
        ..SceneConfig::natural(70.0, 12.0, 1).with_patch(16, 8)
    };
    assert!(background_var(natural) > background_var(base));
}

#[test]
fn dataset_contracts() {
    let spec = DatasetSpec {
        n_clips: 4,
        duration_s: 2.0,
        patch_hw: 12,
        skin_side: 8,
        ..DatasetSpec::default()
    };
    let (clips, manifest) = make_dataset(&spec).unwrap();
    assert_eq!(clips.len(), 4);
    assert!(clips
        .iter()
        .all(|c| c.config.motion_amp == 0.0 && c.config.psi_amp == 0.0));
    assert_eq!(make_dataset(&spec).unwrap().1, manifest);

    let many = DatasetSpec {
        n_clips: 200,
        condition: ConditionMix::Mixed,
        ..spec
    };
    let plan = rppg_core::synth::plan_dataset(&many).unwrap();
    for e in &plan.clips {
        assert!((45.0..=150.0).contains(&e.config.pulse_bpm));
        assert!((8.0..=24.0).contains(&e.config.resp_bpm));
    }
    let natural = plan.clips.iter().filter(|e| e.config.motion_amp > 0.0).count();
    assert_eq!(natural, 100);
}
