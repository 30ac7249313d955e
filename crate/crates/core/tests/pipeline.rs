mod common;

use ndarray::{s, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtnk_core::attention::{extended_attention, merge_heads, split_heads, AttentionTensors};
use vtnk_core::geometry::{
    build_region_boxes, region_masks, GeometryError, Image, Keypoint, RegionStatus, SegmentationMap, Skeleton,
    WarpResult,
};
use vtnk_core::pipeline::*;
use vtnk_core::synthetic::{masked_variance, render_figure, seam_band};
use vtnk_core::LatentTensor;

fn bits(img: &Image) -> Vec<u64> {
    img.iter().map(|v| v.to_bits()).collect()
}

fn fast_config() -> TryOnConfig {
    TryOnConfig {
        num_steps: 10,
        ..Default::default()
    }
}

#[test]
fn morph_with_identical_figures_is_masked_identity() {
    let scene = render_figure(common::SIZE, &common::target_params());
    let cfg = TryOnConfig::default();
    let warp = morph_garment(
        &scene.image,
        &scene.skeleton,
        &scene.parsing,
        &scene.skeleton,
        &scene.parsing,
        &cfg,
    )
    .unwrap();
    assert!(warp.per_region_status.iter().all(|(_, s)| *s == RegionStatus::Ok));
    let spec = cfg.region_spec();
    let boxes = build_region_boxes(&scene.skeleton, &spec, cfg.confidence_threshold).unwrap();
    let masks = region_masks(&scene.parsing, &boxes, &spec).unwrap();
    for ((y, x), &covered) in warp.coverage.indexed_iter() {
        let in_mask = masks.iter().any(|m| m.mask[(y, x)]);
        assert_eq!(covered, in_mask, "({y},{x})");
        if covered {
            for c in 0..3 {
                assert!((warp.image[(y, x, c)] - scene.image[(y, x, c)]).abs() < 1e-9);
            }
        }
    }
}

fn shift_labels(labels: &Array2<u8>, dx: usize, dy: usize) -> Array2<u8> {
    let (h, w) = labels.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        if y >= dy && x >= dx {
            labels[(y - dy, x - dx)]
        } else {
            0
        }
    })
}

#[test]
fn morph_under_translation_moves_every_region() {
    let scene = render_figure(common::SIZE, &common::target_params());
    let (dx, dy) = (3usize, 2usize);
    let target_sk = scene.skeleton.translated(dx as f64, dy as f64);
    let target_parse = SegmentationMap::with_default_legend(shift_labels(scene.parsing.labels(), dx, dy)).unwrap();
    let cfg = TryOnConfig::default();
    let warp = morph_garment(
        &scene.image,
        &scene.skeleton,
        &scene.parsing,
        &target_sk,
        &target_parse,
        &cfg,
    )
    .unwrap();
    let spec = cfg.region_spec();
    let boxes = build_region_boxes(&scene.skeleton, &spec, 0.3).unwrap();
    let masks = region_masks(&scene.parsing, &boxes, &spec).unwrap();
    let mut checked = 0;
    for ((y, x), &covered) in warp.coverage.indexed_iter() {
        let (sy, sx) = (y as isize - dy as isize, x as isize - dx as isize);
        let expected = sy >= 0 && sx >= 0 && masks.iter().any(|m| m.mask[(sy as usize, sx as usize)]);
        assert_eq!(covered, expected, "({y},{x})");
        if covered {
            checked += 1;
            for c in 0..3 {
                let v = scene.image[(sy as usize, sx as usize, c)];
                assert!((warp.image[(y, x, c)] - v).abs() < 1e-6);
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn morph_reports_absent_regions() {
    let scene = render_figure(common::SIZE, &common::target_params());
    let mut kps = scene.skeleton.keypoints().to_vec();
    // hide the figure's left wrist: the left lower arm loses a keypoint
    kps[7] = Keypoint::new(0.0, 0.0, 0.0);
    let target = Skeleton::new(kps, common::SIZE).unwrap();
    let warp = morph_garment(
        &scene.image,
        &scene.skeleton,
        &scene.parsing,
        &target,
        &scene.parsing,
        &TryOnConfig::default(),
    )
    .unwrap();
    assert!(warp.per_region_status.contains(&(4, RegionStatus::Absent)));
    assert_eq!(warp.per_region_status.len(), 5);

    let blind = Skeleton::new(vec![Keypoint::invalid(); 25], common::SIZE).unwrap();
    let err = morph_garment(
        &scene.image,
        &scene.skeleton,
        &scene.parsing,
        &blind,
        &scene.parsing,
        &TryOnConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::Geometry(GeometryError::AllRegionsAbsent)));
}

fn warp_result(image: Image, coverage: Array2<bool>) -> WarpResult {
    WarpResult {
        image,
        coverage,
        per_region_status: vec![],
    }
}

#[test]
fn compose_selects_per_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let agn = Array3::from_shape_simple_fn((8, 8, 3), || rng.random::<f64>());
    let garment = Array3::from_shape_simple_fn((8, 8, 3), || rng.random::<f64>());
    let none = compose_garment_infused(&agn, &warp_result(garment.clone(), Array2::from_elem((8, 8), false))).unwrap();
    assert_eq!(none, agn);
    let all = compose_garment_infused(&agn, &warp_result(garment.clone(), Array2::from_elem((8, 8), true))).unwrap();
    assert_eq!(all, garment);
    let cov = Array2::from_shape_simple_fn((8, 8), || rng.random_bool(0.5));
    let mixed = compose_garment_infused(&agn, &warp_result(garment.clone(), cov.clone())).unwrap();
    for ((y, x, c), v) in mixed.indexed_iter() {
        let expected = if cov[(y, x)] {
            garment[(y, x, c)]
        } else {
            agn[(y, x, c)]
        };
        assert_eq!(*v, expected);
    }
    assert!(compose_garment_infused(
        &agn,
        &warp_result(Array3::zeros((8, 9, 3)), Array2::from_elem((8, 9), true))
    )
    .is_err());
}

#[test]
fn tryon_contract_and_determinism() {
    let (inputs, analyzer) = common::worn_inputs();
    let den = ToyConvDenoiser::new(4, 5, 3);
    let cfg = fast_config();
    let a = run_tryon(&inputs, &den, &analyzer, &cfg).unwrap();
    let b = run_tryon(&inputs, &den, &analyzer, &cfg).unwrap();
    assert_eq!(a.image.dim(), (common::SIZE.0, common::SIZE.1, 3));
    assert!(a.image.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(bits(&a.image), bits(&b.image));
    assert!(a.pseudo_person.is_none());
    for ((y, x), &m) in inputs.person.agnostic_mask.indexed_iter() {
        if !m {
            for c in 0..3 {
                assert_eq!(a.image[(y, x, c)], inputs.person.image[(y, x, c)]);
            }
        }
    }
    let other = run_tryon(&inputs, &den, &analyzer, &TryOnConfig { random_seed: 9, ..cfg }).unwrap();
    assert_ne!(bits(&a.image), bits(&other.image));
}

#[test]
fn shop_mode_generates_pseudo_person() {
    let (inputs, analyzer) = common::shop_inputs();
    let den = ToyConvDenoiser::new(4, 5, 3);
    let out = run_tryon(&inputs, &den, &analyzer, &fast_config()).unwrap();
    let pseudo = out.pseudo_person.unwrap();
    assert_eq!(pseudo.dim(), (common::SIZE.0, common::SIZE.1, 3));
    assert!(out.image.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn errors_name_their_stage() {
    let (inputs, analyzer) = common::shop_inputs();
    let den = ToyConvDenoiser::new(4, 5, 3);
    let wrong = FixedAnalysis {
        skeleton: Skeleton::new(vec![Keypoint::invalid(); 25], (8, 8)).unwrap(),
        parsing: analyzer.parsing.clone(),
    };
    let err = run_tryon(&inputs, &den, &wrong, &fast_config()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::BodyAnalysis));
    assert!(err.to_string().starts_with("body-analysis stage failed"));

    let (mut inputs, analyzer) = common::worn_inputs();
    inputs.person.skeleton = Skeleton::new(vec![Keypoint::invalid(); 25], common::SIZE).unwrap();
    let err = run_tryon(&inputs, &den, &analyzer, &fast_config()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Morph));

    let cfg = TryOnConfig {
        hook_layers: Some(vec!["no-such-layer".into()]),
        ..fast_config()
    };
    assert!(matches!(
        run_tryon(&inputs, &den, &analyzer, &cfg),
        Err(PipelineError::HookMismatch(_))
    ));
    let cfg = TryOnConfig {
        tau: 0.0,
        ..fast_config()
    };
    assert!(matches!(
        run_tryon(&inputs, &den, &analyzer, &cfg),
        Err(PipelineError::InvalidConfig(_))
    ));
}

/// Person image constant on every 8×8 block, so the codec is lossless.
fn blocky_person() -> (TryOnInputs, FixedAnalysis) {
    let (mut inputs, analyzer) = common::worn_inputs();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (h, w) = common::SIZE;
    let colors = Array3::from_shape_simple_fn((h / 8, w / 8, 3), || rng.random::<f64>());
    inputs.person.image = Array3::from_shape_fn((h, w, 3), |(y, x, c)| colors[(y / 8, x / 8, c)]);
    (inputs, analyzer)
}

#[test]
fn huge_tau_with_zero_denoiser_reconstructs_person() {
    let (inputs, analyzer) = blocky_person();
    let cfg = TryOnConfig {
        tau: 1e6,
        ..Default::default()
    };
    let out = run_tryon(&inputs, &ZeroDenoiser, &analyzer, &cfg).unwrap();
    let mean_abs = (&out.image - &inputs.person.image).mapv(f64::abs).mean().unwrap();
    assert!(mean_abs < 1e-3, "{mean_abs}");
}

#[test]
fn noise_variants_are_reachable_and_ordered() {
    let (inputs, analyzer) = blocky_person();
    let den = ToyConvDenoiser::new(4, 5, 3);
    let run = |noise_init, tau| {
        let cfg = TryOnConfig {
            tau,
            noise_init,
            ..fast_config()
        };
        run_tryon(&inputs, &den, &analyzer, &cfg).unwrap().initial_noise
    };
    let inverted = run(NoiseInit::Inversion, 0.1);
    let wide = run(NoiseInit::Spectral, 1e6);
    assert!(inverted.max_abs_diff(&wide) < 1e-6);

    // vanishing tau keeps only the inverted latent's DC bin
    let fresh = run(NoiseInit::Fresh, 0.1);
    let narrow = run(NoiseInit::Spectral, 1e-6);
    let (c, h, w) = fresh.dims();
    for ch in 0..c {
        let mean = |t: &LatentTensor| t.data().slice(s![ch, .., ..]).mean().unwrap();
        let offset = mean(&narrow) - mean(&fresh);
        assert!((mean(&narrow) - mean(&inverted)).abs() < 1e-9);
        for y in 0..h {
            for x in 0..w {
                let d = narrow.data()[(ch, y, x)] - fresh.data()[(ch, y, x)];
                assert!((d - offset).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn dual_branch_with_plain_hook_equals_independent_runs() {
    let den = ToyConvDenoiser::new(4, 5, 8);
    let schedule = make_ddim_schedule(20, &AlphaProfile::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let conds: Vec<_> = (0..2)
        .map(|_| ConditioningBundle::new(LatentTensor::random_normal((5, 4, 6), &mut rng), Array1::zeros(3)))
        .collect();
    let noise: Vec<_> = (0..2)
        .map(|_| LatentTensor::random_normal((4, 4, 6), &mut rng))
        .collect();
    let joint = ddim_sample_branches(&noise, &den, &schedule, &conds, &mut SelfAttentionHook).unwrap();
    for b in 0..2 {
        let alone = ddim_sample(&noise[b], &den, &schedule, &conds[b]).unwrap();
        assert_eq!(joint[b], alone);
    }
}

fn relocated_pseudo_inputs() -> (Image, Array2<bool>, Image, Array2<bool>) {
    let (inputs, _) = common::shop_inputs();
    let GarmentSource::Shop { image, mask } = &inputs.garment else {
        unreachable!()
    };
    let (g, gm) = vtnk_core::geometry::relocate_garment(image, mask, &inputs.person.agnostic_mask).unwrap();
    let agn = agnostic_image(&inputs.person.image, &inputs.person.agnostic_mask).unwrap();
    (g, gm, agn, inputs.person.agnostic_mask)
}

#[test]
fn pseudo_person_without_injection_is_plain_generation() {
    let (g, gm, agn, am) = relocated_pseudo_inputs();
    let den = ToyConvDenoiser::new(4, 5, 11);
    let prompt = Array1::zeros(2);
    let cfg = TryOnConfig {
        pseudo_injection: false,
        ..fast_config()
    };
    let out = generate_pseudo_person(&g, &gm, &agn, &am, &den, &cfg, &prompt).unwrap();

    let cond = ConditioningBundle::new(concat_conditioning(&g, &gm.mapv(|m| !m)).unwrap(), prompt.clone());
    let schedule = make_ddim_schedule(cfg.num_steps, &AlphaProfile::default()).unwrap();
    let noise = LatentTensor::random_normal((4, 12, 8), &mut ChaCha8Rng::seed_from_u64(cfg.random_seed));
    let plain = decode_latent(&ddim_sample(&noise, &den, &schedule, &cond).unwrap()).unwrap();
    assert_eq!(bits(&out), bits(&plain));

    let injected = generate_pseudo_person(&g, &gm, &agn, &am, &den, &fast_config(), &prompt).unwrap();
    assert_ne!(bits(&out), bits(&injected));
    let again = generate_pseudo_person(&g, &gm, &agn, &am, &den, &fast_config(), &prompt).unwrap();
    assert_eq!(bits(&injected), bits(&again));
}

#[test]
fn pseudo_person_hook_outputs_equal_extended_attention_on_taps() {
    let (g, gm, agn, am) = relocated_pseudo_inputs();
    let den = ToyConvDenoiser::new(4, 5, 11);
    let cfg = TryOnConfig {
        num_steps: 3,
        ..Default::default()
    };
    let mut hook = RecordingHook::new(ExtendedAttentionHook::default());
    generate_pseudo_person_with(&g, &gm, &agn, &am, &den, &cfg, &Array1::zeros(2), &mut hook).unwrap();
    assert_eq!(hook.records.len(), 3 * den.layers().len());
    for rec in &hook.records {
        let layer = den.layers().into_iter().find(|l| l.id == rec.layer).unwrap();
        let split = |t: &AttentionTensors| {
            let (q, k, v) = (
                split_heads(&t.q, layer.heads).unwrap(),
                split_heads(&t.k, layer.heads).unwrap(),
                split_heads(&t.v, layer.heads).unwrap(),
            );
            (0..layer.heads)
                .map(|h| AttentionTensors::new(q[h].clone(), k[h].clone(), v[h].clone()).unwrap())
                .collect::<Vec<_>>()
        };
        let (garment, person) = (split(&rec.inputs[0]), split(&rec.inputs[1]));
        let expected: Vec<_> = garment
            .iter()
            .zip(&person)
            .map(|(g, p)| extended_attention(g, p.k.view(), p.v.view()).unwrap())
            .collect();
        let expected = merge_heads(&expected).unwrap();
        let diff = (&expected - &rec.outputs[0])
            .mapv(f64::abs)
            .fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-12);
    }
}

#[test]
fn stitching_lowers_seam_variance() {
    let (inputs, analyzer) = common::worn_inputs();
    let band = seam_band(&inputs.person.parsing, 4);
    let den = ToyInpaintDenoiser::default();
    for seed in 0..3 {
        let run = |stitching| {
            let cfg = TryOnConfig {
                random_seed: seed,
                stitching,
                ..Default::default()
            };
            masked_variance(&run_tryon(&inputs, &den, &analyzer, &cfg).unwrap().image, &band)
        };
        let (on, off) = (run(true), run(false));
        assert!(on < off, "seed {seed}: {on} vs {off}");
    }
}
