//! Writes a Dirac target file rendered from the built-in blob scene.
//!
//! cargo run --example blob_targets -- targets.bin [--views 8] [--resolution 64] [--steps 64] [--rgb]

use std::path::PathBuf;

use clap::Parser;
use latentnerf::field::Camera;
use latentnerf::trainer::{make_targets, BlobScene};

#[derive(Parser)]
struct Args {
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 64)]
    steps: usize,
    /// Three-channel targets for refinement
    #[arg(long)]
    rgb: bool,
}

fn main() {
    let a = Args::parse();
    let scene = if a.rgb {
        BlobScene::rgb_demo()
    } else {
        BlobScene::latent_demo()
    };
    let cams: Vec<Camera> = (0..a.views)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / a.views as f64;
            let el = if i % 2 == 0 { 0.15 } else { 0.45 };
            Camera::orbit(az, el, 1.3, 50f64.to_radians(), a.resolution)
        })
        .collect();
    let set = make_targets(&scene, &cams, a.steps);
    set.write(&a.out).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        std::process::exit(2);
    });
    println!("wrote {} targets to {}", set.targets.len(), a.out.display());
}
