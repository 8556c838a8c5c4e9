use latentnerf::field::{
    render_field, render_view, sample_camera, Camera, CameraConfig, FieldConfig, FieldParams,
    RenderOptions,
};
use latentnerf::geometry::{
    build_bvh, closest_point_on_triangle, surface_query, winding_exact, Bvh, Mesh, NodeKind,
    DEFAULT_LEAF_SIZE,
};
use latentnerf::guidance::bridge::Frame;
use latentnerf::guidance::{
    add_noise, dirac_denoiser, make_schedule, sds_at, sds_gradient, WeightMode,
};
use latentnerf::latent::LatentImage;
use latentnerf::math::Vec3;
use latentnerf::objectives::{
    sketch_loss_labeled, sketch_weight, sparsity_loss, total_loss, LossParts, LossWeights,
};
use latentnerf::paint::{naive_atlas, rasterize, texture_backward, LatentTexture};
use latentnerf::refine::{convert_to_rgb, init_rgb_adapter, rgb_preview};
use latentnerf::trainer::prompt::view_label;
use latentnerf::trainer::{adam_update, AdamConfig, BlobScene, TensorFile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// Rotation about a random unit axis by Rodrigues' formula.
fn rotate(p: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let k = axis.normalized();
    let (s, c) = angle.sin_cos();
    p * c + k.cross(p) * s + k * (k.dot(p) * (1.0 - c))
}

fn closed_mesh(kind: u8, a: Vec3, b: Vec3) -> Mesh {
    let (lo, hi) = (a.min(b) - Vec3::splat(0.1), a.max(b) + Vec3::splat(0.1));
    if kind == 0 {
        Mesh::cuboid(lo, hi)
    } else {
        let r = (hi - lo).norm() * 0.3;
        Mesh::uv_sphere((lo + hi) * 0.5, r, 8, 12)
    }
}

fn brute_distance(m: &Mesh, p: Vec3) -> f64 {
    (0..m.triangle_count())
        .map(|t| (closest_point_on_triangle(p, &m.corners(t)) - p).norm())
        .fold(f64::INFINITY, f64::min)
}

fn tiny_field(seed: u64) -> FieldParams {
    FieldParams::new(
        FieldConfig {
            levels: 3,
            log2_table_size: 10,
            base_resolution: 4,
            hidden_width: 16,
            hidden_layers: 1,
            steps: 12,
            table_init: 0.5,
            density_bias: 0.5,
            ..FieldConfig::default()
        },
        seed,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn watertight_winding_inside_and_outside(kind in 0u8..2, a in vec3(0.5), b in vec3(0.5), dir in vec3(1.0)) {
        let m = closed_mesh(kind, a, b);
        let (lo, hi) = m.bounds().unwrap();
        let center = (lo + hi) * 0.5;
        prop_assert!((winding_exact(&m, center) - 1.0).abs() < 1e-6);
        prop_assume!(dir.norm() > 1e-3);
        let far = center + dir.normalized() * ((hi - lo).norm() * 0.55 * 1.1 + 1e-3);
        prop_assert!(winding_exact(&m, far).abs() < 1e-6);
    }

    #[test]
    fn winding_is_rigid_invariant(kind in 0u8..2, a in vec3(0.5), b in vec3(0.5), p in vec3(1.0),
                                  axis in vec3(1.0), angle in -3.0f64..3.0, shift in vec3(2.0)) {
        prop_assume!(axis.norm() > 1e-2);
        let m = closed_mesh(kind, a, b);
        prop_assume!(brute_distance(&m, p) > 1e-3);
        let t = |q: Vec3| rotate(q, axis, angle) + shift;
        let moved = m.transformed(t);
        prop_assert!((winding_exact(&m, p) - winding_exact(&moved, t(p))).abs() < 1e-9);
    }

    #[test]
    fn closest_point_matches_brute_force(kind in 0u8..2, a in vec3(0.5), b in vec3(0.5),
                                         pts in prop::collection::vec(vec3(1.5), 1..20)) {
        let m = closed_mesh(kind, a, b);
        let bvh = build_bvh(&m, 4);
        for p in pts {
            let q = surface_query(&bvh, p);
            prop_assert!((q.distance - brute_distance(&m, p)).abs() < 1e-9);
            prop_assert!(((q.closest_point - p).norm() - q.distance).abs() < 1e-12);
        }
    }

    #[test]
    fn bvh_structure(kind in 0u8..2, a in vec3(0.5), b in vec3(0.5), leaf in 1usize..10) {
        let m = closed_mesh(kind, a, b);
        let bvh = Bvh::build(&m, leaf);
        let mut seen = vec![0u32; m.triangle_count()];
        for node in bvh.nodes() {
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    prop_assert!(count as usize <= leaf);
                    for i in start..start + count {
                        seen[bvh.triangle_order()[i as usize] as usize] += 1;
                    }
                }
                NodeKind::Internal { left, right } => {
                    for c in [left, right] {
                        prop_assert!(node.aabb.contains_box(&bvh.nodes()[c as usize].aabb));
                    }
                }
            }
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        let brute = (0..m.triangle_count())
            .map(|t| latentnerf::geometry::area_normal(&m.corners(t)))
            .fold(Vec3::ZERO, |s, n| s + n);
        prop_assert!((bvh.root().moments.normal_sum - brute).norm() < 1e-12);
    }

    #[test]
    fn transmittance_conservation(seed in 0u64..1000, az in 0.0f64..std::f64::consts::TAU, el in -1.0f64..1.0) {
        let p = tiny_field(seed);
        let cam = Camera::orbit(az, el, 1.4, 0.8, 6);
        let out = render_view(&p, &cam, 12);
        for (w, t) in out.w_blend.iter().zip(&out.t_end) {
            prop_assert!((0.0..=1.0).contains(w));
            prop_assert!((w + t - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn background_consistency(az in 0.0f64..std::f64::consts::TAU, el in -1.0f64..1.0, r in 1.1f64..2.0) {
        let scene = BlobScene::latent_demo();
        let cam = Camera::orbit(az, el, r, 0.9, 8);
        let bg = vec![0.3, -0.2, 0.1, 0.4];
        let opts = RenderOptions { background: Some(bg.clone()), ..Default::default() };
        let out = render_field(&scene, &cam, 24, &opts);
        let (h, w) = (out.latent.height(), out.latent.width());
        for (c, bgc) in bg.iter().enumerate() {
            let cmax = scene.blobs.iter().map(|b| b.3[c].abs()).fold(0.0, f64::max);
            for y in 0..h {
                for x in 0..w {
                    let wb = out.w_blend[y * w + x];
                    let fg = out.latent.get(c, y, x) - (1.0 - wb) * bgc;
                    prop_assert!(fg.abs() <= wb * cmax + 1e-12);
                }
            }
        }
    }

    #[test]
    fn dirac_sds_closed_form(seed in 0u64..10_000, t in 20usize..=980, uniform in any::<bool>()) {
        let mode = if uniform { WeightMode::Uniform } else { WeightMode::OneMinusAlphaBar };
        let sched = make_schedule(1000, 1e-4, 2e-2, mode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = (4, 5, 7);
        let target = latentnerf::guidance::sample_noise(&mut rng, shape);
        let x = latentnerf::guidance::sample_noise(&mut rng, shape);
        let eps = latentnerf::guidance::sample_noise(&mut rng, shape);
        let mut den = dirac_denoiser(target.clone(), &sched);
        let s = sds_at(&mut den, &x, "", &sched, t, eps).unwrap();
        let a = sched.alpha_bar(t).unwrap();
        let k = sched.weight(t).unwrap() * a.sqrt() / (1.0 - a).sqrt();
        for ((g, xv), zv) in s.grad.data().iter().zip(x.data()).zip(target.data()) {
            prop_assert!((g - k * (xv - zv)).abs() < 1e-9 * (1.0 + k));
        }
        // at the target the gradient vanishes for any draw
        let s = sds_gradient(&mut den, &target, "", &sched, &mut rng).unwrap();
        prop_assert!(s.grad.data().iter().all(|g| g.abs() < 1e-9));
        let (lo, hi) = sched.t_range();
        prop_assert!(s.t >= lo && s.t <= hi);
    }

    #[test]
    fn add_noise_interpolates(x in -3.0f64..3.0, e in -3.0f64..3.0, t in 0usize..1000) {
        let sched = make_schedule(1000, 1e-4, 2e-2, WeightMode::Uniform).unwrap();
        let xi = LatentImage::filled(1, 1, 1, x);
        let ei = LatentImage::filled(1, 1, 1, e);
        let a = sched.alpha_bar(t).unwrap();
        let y = add_noise(&xi, t, &ei, &sched).unwrap().data()[0];
        prop_assert!((y - (a.sqrt() * x + (1.0 - a).sqrt() * e)).abs() < 1e-12);
    }

    #[test]
    fn loss_bounds(ws in prop::collection::vec(-0.5f64..1.5, 1..64),
                   alphas in prop::collection::vec(0.0f64..1.0, 1..64),
                   sigma in 0.01f64..2.0, d in 0.0f64..3.0) {
        let (s, _) = sparsity_loss(&ws);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&s));
        let flipped: Vec<f64> = ws.iter().map(|w| 1.0 - w).collect();
        prop_assert!((sparsity_loss(&flipped).0 - s).abs() < 1e-12);
        let n = alphas.len();
        let labels: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let dist = vec![d; n];
        let (l, _) = sketch_loss_labeled(&alphas, &labels, &dist, sigma).unwrap();
        prop_assert!(l >= 0.0);
        let far = 6.0 * sigma.sqrt();
        prop_assert!(sketch_weight(far + d, sigma) >= 1.0 - 1e-7);
    }

    #[test]
    fn leniency_is_monotone(d in 1e-3f64..3.0) {
        let sig = [0.05, 0.1, 0.3, 0.7, 1.5];
        for p in sig.windows(2) {
            let (a, b) = (sketch_weight(d, p[0]), sketch_weight(d, p[1]));
            prop_assert!(a >= b);
            // beyond d = 1 the tightest weights saturate to 1.0 in f64
            if d <= 1.0 {
                prop_assert!(a > b, "d={} sigma {:?}", d, p);
            }
        }
    }

    #[test]
    fn total_loss_is_linear(k in 0.0f64..4.0, g in prop::collection::vec(-1.0f64..1.0, 4)) {
        let parts = || LossParts {
            sds: Some(LatentImage::from_vec(4, 1, 1, g.clone())),
            sparse: Some(g.clone()),
            sketch: Some(g.clone()),
        };
        let w = LossWeights { lambda_sds: 1.0, lambda_sparse: k, lambda_sketch: 0.0, ..LossWeights::default() };
        let w2 = LossWeights { lambda_sparse: 2.0 * k, ..w };
        let a = total_loss(parts(), &w);
        let b = total_loss(parts(), &w2);
        prop_assert!(a.alpha.is_none());
        prop_assert_eq!(a.pixels.as_ref().unwrap().data(), &g[..]);
        if k > 0.0 {
            for (x, y) in a.w_blend.unwrap().iter().zip(b.w_blend.unwrap()) {
                prop_assert_eq!(2.0 * x, y);
            }
        }
    }

    #[test]
    fn texture_gradient_conservation(az in -0.6f64..0.6, el in -0.5f64..0.5, seed in 0u64..100) {
        let cube = naive_atlas(&Mesh::cuboid(Vec3::splat(-0.4), Vec3::splat(0.4)), 32);
        let cam = Camera::orbit(az, el, 1.6, 0.9, 16);
        let g = rasterize(&cube, &cam, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tex = LatentTexture::random(&mut rng, 32, 32);
        let up = latentnerf::guidance::sample_noise(&mut rng, (4, 16, 16));
        let (grad, touched) = texture_backward(&tex, &g, &up);
        let plane = 32 * 32;
        for c in 0..4 {
            let texel: f64 = grad.data()[c * plane..(c + 1) * plane].iter().sum();
            let mut pix = 0.0;
            let mut pix_abs = 0.0;
            let mut grad_abs = 0.0;
            for p in 0..256 {
                if g.covered(p) {
                    pix += up.data()[c * 256 + p];
                    pix_abs += up.data()[c * 256 + p].abs();
                }
            }
            for v in &grad.data()[c * plane..(c + 1) * plane] {
                grad_abs += v.abs();
            }
            prop_assert!((texel - pix).abs() < 1e-9);
            prop_assert!(grad_abs <= pix_abs + 1e-9);
            for (i, t) in touched.iter().enumerate() {
                if !t {
                    prop_assert_eq!(grad.data()[c * plane + i], 0.0);
                }
            }
        }
        // same-sign upstream: absolute sums agree exactly
        let ones = LatentImage::filled(4, 16, 16, 1.0);
        let (grad, _) = texture_backward(&tex, &g, &ones);
        let total: f64 = grad.data().iter().map(|v| v.abs()).sum();
        prop_assert!((total - 4.0 * g.coverage() as f64).abs() < 1e-9);
        for p in 0..256 {
            if g.covered(p) {
                let b = g.bary[p];
                prop_assert!(b.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
                prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(g.uv[p].iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn preview_matches_rgb_render(seed in 0u64..1000, az in 0.0f64..std::f64::consts::TAU) {
        let p = tiny_field(seed);
        let cam = Camera::orbit(az, 0.3, 1.4, 0.8, 6);
        let latent = render_view(&p, &cam, 12).latent;
        let mut q = p.clone();
        convert_to_rgb(&mut q, true).unwrap();
        let rgb = render_view(&q, &cam, 12).latent;
        let preview = rgb_preview(&latent, &init_rgb_adapter());
        for (a, b) in rgb.data().iter().zip(preview.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn direction_labels(az in -720.0f64..720.0, el in -89.0f64..89.0) {
        let label = view_label(az.to_radians(), el.to_radians());
        let wrapped = (az % 360.0 + 540.0) % 360.0 - 180.0;
        let expect = if el > 60.0 {
            "overhead"
        } else if wrapped.abs() < 45.0 {
            "front"
        } else if (wrapped.abs() - 180.0).abs() < 45.0 {
            "back"
        } else {
            "side"
        };
        // exact 45-degree boundaries can round either way
        prop_assume!((wrapped.abs() - 45.0).abs() > 1e-9 && (wrapped.abs() - 135.0).abs() > 1e-9);
        prop_assert_eq!(label, expect);
    }

    #[test]
    fn adam_zero_gradient_keeps_params(p in prop::collection::vec(-1.0f64..1.0, 1..16), step in 1u64..50) {
        let mut q: Vec<f64> = p.iter().map(|v| *v as f32 as f64).collect();
        let before = q.clone();
        let n = q.len();
        let mut m = vec![0.25f32 as f64; n];
        let mut v = vec![0.0; n];
        let cfg = AdamConfig::default();
        adam_update(&mut q, &vec![0.0; n], &mut m, &mut v, step, 1e-2, &cfg, None);
        // a nonzero first moment still moves the parameters; zero moments do not
        let mut m0 = vec![0.0; n];
        let mut q0 = before.clone();
        adam_update(&mut q0, &vec![0.0; n], &mut m0, &mut v, step, 1e-2, &cfg, None);
        prop_assert_eq!(&q0, &before);
        prop_assert!(m.iter().all(|x| (x - 0.9 * 0.25).abs() < 1e-7));
    }

    #[test]
    fn sampled_cameras_respect_ranges(seed in 0u64..10_000) {
        let cfg = CameraConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = sample_camera(&mut rng, &cfg);
        prop_assert!((0.0..2.0 * std::f64::consts::PI).contains(&c.azimuth));
        prop_assert!(c.elevation >= cfg.elevation_min && c.elevation <= cfg.elevation_max);
        let r = c.position.norm();
        prop_assert!(r >= cfg.radius_min - 1e-12 && r <= cfg.radius_max + 1e-12);
        let mut again = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(sample_camera(&mut again, &cfg), c);
    }

    #[test]
    fn tensor_file_round_trip(tensors in prop::collection::btree_map("[a-z.]{1,12}", prop::collection::vec(-1e6f32..1e6, 0..40), 0..6),
                              meta in prop::collection::btree_map("[a-z_]{1,8}", any::<u64>(), 0..4)) {
        let mut f = TensorFile::default();
        for (k, v) in &tensors {
            f.insert(k.clone(), vec![v.len()], v.iter().map(|x| *x as f64).collect());
        }
        f.meta = meta;
        let bytes = f.to_bytes();
        prop_assert_eq!(TensorFile::from_bytes(&bytes).unwrap(), f);
        for cut in [0, bytes.len() / 2, bytes.len().saturating_sub(1)] {
            if cut < bytes.len() {
                prop_assert!(TensorFile::from_bytes(&bytes[..cut]).is_err());
            }
        }
    }

    #[test]
    fn frame_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = Frame::decode(&bytes);
    }
}

#[test]
fn fast_winding_equals_exact_when_nothing_is_accepted() {
    let m = Mesh::uv_sphere(Vec3::ZERO, 0.5, 10, 16);
    let bvh = Bvh::build(&m, DEFAULT_LEAF_SIZE);
    for p in [
        Vec3::new(0.1, 0.2, -0.1),
        Vec3::new(2.0, 0.0, 0.3),
        Vec3::new(0.0, -0.7, 0.0),
    ] {
        let fast = latentnerf::geometry::winding_fast(&bvh, p, f64::INFINITY);
        let exact = winding_exact(&m, p);
        // leaf order differs from mesh order, so the sums agree to rounding
        assert!((fast - exact).abs() < 1e-12, "{fast} vs {exact}");
    }
}
