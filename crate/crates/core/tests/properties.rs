use std::io::Cursor;

use nalgebra::Vector3;
use proptest::prelude::*;

use framemat::bridge::{encode_request, read_request, WireRequest, WireTensor};
use framemat::config::PipelineConfig;
use framemat::depthproc::{temporal_smooth, DepthClip, FlowField, SmoothingConfig};
use framemat::diffusion::{
    forward_noise, make_schedule, predict_z0, resample_noise, BoxCodec, DenoiserOutput, Direction,
    LatentCodec, LatentFrame, NoiseKey, NoiseSource, Purpose, Step,
};
use framemat::geometry::{
    fill_cracks, project_to_planes, remove_isolated, warp_coordinates, Camera, PlaneLayer, PlaneStrata,
};
use framemat::image::{ColorImage, DepthMap, Mask, RgbdFrame};

fn frame(w: usize, h: usize, depth: impl Fn(usize, usize) -> f32, mask: impl Fn(usize, usize) -> bool) -> RgbdFrame {
    RgbdFrame::new(
        ColorImage::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5]),
        DepthMap::from_fn(w, h, |x, y| if mask(x, y) { depth(x, y) } else { 0.0 }),
        Mask::from_fn(w, h, mask),
    )
    .unwrap()
}

fn layer_from_bits(w: usize, h: usize, bits: &[bool]) -> PlaneLayer {
    let mut layer = PlaneLayer::empty(w, h);
    for (i, &b) in bits.iter().enumerate() {
        if b {
            let (x, y) = (i % w, i / w);
            layer.mask[(x, y)] = true;
            layer.color[(x, y)] = [x as f32 / w as f32, y as f32 / h as f32, 1.0];
            layer.depth[(x, y)] = 2.0 + (i % 7) as f32 * 0.1;
        }
    }
    layer
}

fn subset(a: &Mask, b: &Mask) -> bool {
    a.data().iter().zip(b.data()).all(|(&x, &y)| !x || y)
}

fn latent(seed: u64, shape: (usize, usize, usize)) -> LatentFrame {
    NoiseSource::new(seed).normal(NoiseKey::new(Purpose::Init, 0, 0, 0, 0), shape)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn horizontal_offset_shifts_by_disparity(
        fx in 50.0f64..800.0,
        b in 0.005f64..0.2,
        depths in prop::collection::vec(0.5f32..30.0, 16 * 8),
    ) {
        let (w, h) = (16, 8);
        let src = frame(w, h, |x, y| depths[y * w + x], |_, _| true);
        let a = Camera::pinhole(fx, fx, 7.5, 3.5, w, h).unwrap();
        let bcam = a.clone().with_position(Vector3::new(b, 0.0, 0.0));
        let warp = warp_coordinates(&src, &a, &bcam).unwrap();
        for y in 0..h {
            for x in 0..w {
                let [u, v] = warp.coords[(x, y)];
                let d = f64::from(depths[y * w + x]);
                prop_assert!((v - y as f64).abs() < 1e-9);
                prop_assert!((x as f64 - u - fx * b / d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn every_valid_pixel_lands_on_exactly_one_plane(
        k in 1usize..6,
        depths in prop::collection::vec(1.0f32..10.0, 12 * 8),
        holes in prop::collection::vec(any::<bool>(), 12 * 8),
    ) {
        let (w, h) = (12, 8);
        prop_assume!(holes.iter().any(|&m| m));
        let src = frame(w, h, |x, y| depths[y * w + x], |x, y| holes[y * w + x]);
        let cam = Camera::pinhole(100.0, 100.0, 5.5, 3.5, w, h).unwrap();
        let strata = PlaneStrata::new(k, 1.0, 10.0).unwrap();
        // identity warp: no two source pixels collide
        let mpi = project_to_planes(&src, &cam, &cam, &strata).unwrap();
        for y in 0..h {
            for x in 0..w {
                let hits = mpi.planes.iter().filter(|p| p.mask[(x, y)]).count();
                prop_assert_eq!(hits, usize::from(holes[y * w + x]));
                if hits == 1 {
                    let p = strata.plane_of(f64::from(depths[y * w + x]));
                    prop_assert!(mpi.planes[p].mask[(x, y)]);
                }
            }
        }
    }

    #[test]
    fn repair_is_monotone_and_idempotent(
        bits in prop::collection::vec(prop::bool::weighted(0.6), 20 * 14),
    ) {
        let (w, h) = (20, 14);
        let input = layer_from_bits(w, h, &bits);

        let mut removed = input.clone();
        remove_isolated(&mut removed, 0.5);
        prop_assert!(subset(&removed.mask, &input.mask));
        let again = removed.clone();
        prop_assert_eq!(remove_isolated(&mut removed, 0.5), 0);
        prop_assert_eq!(&removed, &again);

        let mut filled = removed.clone();
        fill_cracks(&mut filled, 0.2, 0.5);
        prop_assert!(subset(&removed.mask, &filled.mask));
        let again = filled.clone();
        prop_assert_eq!(fill_cracks(&mut filled, 0.2, 0.5), 0);
        prop_assert_eq!(&filled, &again);
    }

    #[test]
    fn smoothing_stays_within_the_sampled_range(
        values in prop::collection::vec(1.0f32..10.0, 5 * 6 * 4),
        radius in 1usize..4,
        sigma in 0.3f64..3.0,
    ) {
        let (w, h, n) = (6, 4, 5);
        let clip = DepthClip {
            depths: (0..n)
                .map(|t| DepthMap::from_fn(w, h, |x, y| values[(t * h + y) * w + x]))
                .collect(),
            range: (1.0, 10.0),
        };
        let flows = vec![FlowField::zeros(w, h); n - 1];
        let cfg = SmoothingConfig { radius, sigma };
        let out = temporal_smooth(&clip, &flows, None, &cfg).unwrap();
        for t in 0..n {
            let window = t.saturating_sub(radius)..(t + radius + 1).min(n);
            for y in 0..h {
                for x in 0..w {
                    let samples = window.clone().map(|s| clip.depths[s][(x, y)]);
                    let lo = samples.clone().fold(f32::INFINITY, f32::min);
                    let hi = samples.fold(f32::NEG_INFINITY, f32::max);
                    let v = out.depths[t][(x, y)];
                    prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5, "{v} outside [{lo}, {hi}]");
                }
            }
        }
    }

    #[test]
    fn constant_clips_are_fixed_points(c in 1.0f32..10.0, du in -2.0f32..2.0, dv in -2.0f32..2.0) {
        let (w, h) = (8, 6);
        let clip = DepthClip { depths: vec![DepthMap::filled(w, h, c); 4], range: (1.0, 10.0) };
        let mut flow = FlowField::zeros(w, h);
        flow.flow = framemat::image::Grid::filled(w, h, [du, dv]);
        let out = temporal_smooth(&clip, &vec![flow; 3], None, &SmoothingConfig::default()).unwrap();
        for d in &out.depths {
            prop_assert!(d.data().iter().all(|&v| (v - c).abs() <= 1e-6 * c));
        }
    }

    #[test]
    fn codec_encode_of_decode_is_identity(seed in any::<u64>(), h in 1usize..5, w in 1usize..5) {
        let codec = BoxCodec::new(8).unwrap();
        let z = latent(seed, (h, w, 3));
        let back = codec.encode(&codec.decode(&z).unwrap()).unwrap();
        // images are f32, so the round trip is exact only to single precision
        prop_assert!(back.max_abs_diff(&z).unwrap() < 1e-6 * (1.0 + z.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }

    #[test]
    fn predict_z0_inverts_forward_noise(seed in any::<u64>(), t in 1usize..=1000) {
        let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
        let z0 = latent(seed, (3, 4, 4));
        let eps = latent(seed ^ 0x9e37_79b9, (3, 4, 4));
        let zt = forward_noise(&z0, t, &eps, &sched).unwrap();
        let back = predict_z0(&zt, &DenoiserOutput::deterministic(eps), t, &sched).unwrap();
        let a = sched.alpha_bar(t).unwrap();
        // error is machine epsilon amplified by 1/√ᾱ
        prop_assert!(back.max_abs_diff(&z0).unwrap() < 1e-13 / a.sqrt());
    }

    #[test]
    fn alpha_bar_follows_its_recurrence(steps in 2usize..2000, b0 in 1e-5f64..1e-3, span in 1e-3f64..0.05) {
        let sched = make_schedule(steps, b0, b0 + span).unwrap();
        let mut prev = 1.0;
        for t in 1..=steps {
            let beta = sched.beta(t).unwrap();
            prop_assert!(beta > 0.0 && beta < 1.0);
            let a = sched.alpha_bar(t).unwrap();
            prop_assert_eq!(a, prev * (1.0 - beta));
            prop_assert!(a < prev);
            prev = a;
        }
    }

    #[test]
    fn bridge_carries_finite_floats_bit_exactly(
        bits in prop::collection::vec(any::<u32>(), 1..64),
        t in any::<u32>(),
        condition in any::<u32>(),
    ) {
        let data: Vec<f32> = bits.into_iter().map(f32::from_bits).filter(|v| v.is_finite()).collect();
        prop_assume!(!data.is_empty());
        let req = WireRequest {
            direction: Direction::Spatial,
            t,
            condition,
            frames: vec![WireTensor { shape: (1, data.len() as u16, 1), data: data.clone() }],
        };
        let back = read_request(&mut Cursor::new(encode_request(&req))).unwrap();
        let got: Vec<u32> = back.frames[0].data.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(back, req);
    }

    #[test]
    fn config_hash_tracks_every_field(a in 0usize..OVERRIDES.len(), b in 0usize..OVERRIDES.len()) {
        let make = |i: usize| {
            let mut cfg = PipelineConfig::default();
            if let Some(o) = OVERRIDES[i] {
                cfg.apply_override(o).unwrap();
            }
            cfg
        };
        let (x, y) = (make(a), make(b));
        prop_assert_eq!(x == y, x.hash() == y.hash());
    }
}

/// Each entry changes one field away from its default, except `None`.
const OVERRIDES: &[Option<&str>] = &[
    None,
    Some("seed=1"),
    Some("condition=3"),
    Some("mode=\"spatial\""),
    Some("rig.baseline=0.08"),
    Some("rig.stereo_views=5"),
    Some("rig.spatial_views=12"),
    Some("rig.radius=0.05"),
    Some("depth.near=0.5"),
    Some("depth.far=12.0"),
    Some("depth.smoothing=false"),
    Some("depth.smoothing_radius=3"),
    Some("depth.smoothing_sigma=2.0"),
    Some("warp.planes=3"),
    Some("warp.isolated_threshold=0.4"),
    Some("warp.crack_threshold=0.3"),
    Some("warp.crack_sigma=0.7"),
    Some("schedule.beta_end=0.03"),
    Some("plan.steps=40"),
    Some("plan.jump=10"),
    Some("plan.resamples=[4, 4]"),
    Some("plan.phase_boundary=20"),
    Some("poisson.tol=1e-6"),
    Some("poisson.omega=1.5"),
    Some("outpaint.enabled=false"),
    // stating a default explicitly is not a change
    Some("seed=0"),
];

#[test]
fn resampling_adds_the_transition_variance() {
    let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
    let step = Step { t: 500, prev: 480 };
    let beta = sched.transition_beta(step).unwrap();
    let z = LatentFrame::filled((100, 100, 1), 0.3);
    let noise = NoiseSource::new(11);
    let xi = noise.normal(NoiseKey::new(Purpose::Resample, step.t, 0, 0, 0), z.shape());
    let out = resample_noise(&z, step, &sched, &xi).unwrap();
    let n = out.len() as f64;
    let mean = out.data().iter().sum::<f64>() / n;
    let var = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let want_mean = (1.0 - beta).sqrt() * 0.3;
    // sample variance of n normals has standard error ≈ σ²·√(2/n)
    assert!((var - beta).abs() < 3.0 * beta * (2.0 / n).sqrt(), "{var} vs {beta}");
    assert!((mean - want_mean).abs() < 3.0 * (beta / n).sqrt(), "{mean} vs {want_mean}");
}
