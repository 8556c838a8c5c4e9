use latentnerf::field::{Camera, FieldConfig, FieldParams};
use latentnerf::refine::{convert_to_rgb, refine_loop, LATENT_TO_RGB};
use latentnerf::trainer::{
    make_targets, target_mse, BlobScene, Critic, Mode, TargetSet, TrainConfig,
};

fn config(iters: u64) -> TrainConfig {
    let mut c = TrainConfig::for_mode(Mode::Refine);
    c.iterations = iters;
    c.jitter = false;
    c.direction_prompt = false;
    c.field = FieldConfig {
        levels: 4,
        log2_table_size: 10,
        base_resolution: 4,
        hidden_width: 16,
        hidden_layers: 1,
        steps: 16,
        ..FieldConfig::default()
    };
    c
}

fn rgb_field(c: &TrainConfig, learnable: bool) -> FieldParams {
    let mut p = FieldParams::new(c.field.clone(), 3).unwrap();
    convert_to_rgb(&mut p, learnable).unwrap();
    p
}

fn targets() -> TargetSet {
    let cams: Vec<Camera> = (0..4)
        .map(|i| Camera::orbit(i as f64 * std::f64::consts::FRAC_PI_2, 0.3, 1.3, 0.9, 12))
        .collect();
    make_targets(&BlobScene::rgb_demo(), &cams, 16)
}

fn critic(c: &TrainConfig) -> Critic {
    Critic::from_targets(targets(), &c.schedule.build().unwrap())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn refinement_reduces_rgb_error() {
    let c = config(150);
    let p = rgb_field(&c, true);
    let before = mean(&target_mse(&p, &targets()));
    let mut log = Vec::new();
    let q = refine_loop(p, critic(&c), &c, &mut log).unwrap();
    let after = mean(&target_mse(&q, &targets()));
    assert!(after < before, "mse {before} -> {after}");
    assert!(after < 0.5 * before, "mse {before} -> {after}");
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 150);
}

#[test]
fn zero_iterations_leave_parameters_bitwise() {
    let c = config(0);
    let p = rgb_field(&c, true);
    let q = refine_loop(p.clone(), critic(&c), &c, &mut std::io::sink()).unwrap();
    for (a, b) in p.tensors().iter().zip(q.tensors().iter()) {
        assert_eq!(a.name, b.name);
        assert!(
            a.data
                .iter()
                .zip(b.data)
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            "{}",
            a.name
        );
    }
}

#[test]
fn frozen_adapter_keeps_matrix_while_trunk_moves() {
    let c = config(20);
    let p = rgb_field(&c, false);
    let q = refine_loop(p.clone(), critic(&c), &c, &mut std::io::sink()).unwrap();
    let (a, b) = (
        p.rgb_adapter.as_ref().unwrap(),
        q.rgb_adapter.as_ref().unwrap(),
    );
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.bias, b.bias);
    for (m, k) in b.matrix.iter().zip(LATENT_TO_RGB) {
        assert_eq!(m.to_bits(), (k as f32 as f64).to_bits());
    }
    let moved = p
        .tensors()
        .iter()
        .zip(q.tensors().iter())
        .filter(|(x, y)| !x.name.starts_with("rgb.") && x.data != y.data)
        .count();
    assert!(moved > 0);

    // learnable adapter does move
    let c = config(20);
    let p = rgb_field(&c, true);
    let q = refine_loop(p.clone(), critic(&c), &c, &mut std::io::sink()).unwrap();
    assert_ne!(p.rgb_adapter.unwrap().matrix, q.rgb_adapter.unwrap().matrix);
}

#[test]
fn refine_rejects_latent_fields_and_wrong_mode() {
    let c = config(1);
    let p = FieldParams::new(c.field.clone(), 3).unwrap();
    assert!(refine_loop(p, critic(&c), &c, &mut std::io::sink()).is_err());
    let mut g = config(1);
    g.mode = Mode::LatentNerf;
    assert!(refine_loop(rgb_field(&g, true), critic(&g), &g, &mut std::io::sink()).is_err());
    let mut q = rgb_field(&c, true);
    assert!(convert_to_rgb(&mut q, true).is_err());
}
