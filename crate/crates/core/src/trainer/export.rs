use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::field::{render_field, render_view, Camera, FieldParams, RadianceField, RenderOptions};
use crate::geometry::write_obj;
use crate::guidance::Decoder;
use crate::latent::LATENT_CHANNELS;
use crate::refine::{display_map, init_rgb_adapter, rgb_preview};
use crate::trainer::checkpoint::{quantize_camera, TargetSet};
use crate::trainer::mcubes::marching_cubes;

/// Orbit used for turntable renders. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turntable {
    pub elevation: f64,
    pub radius: f64,
    pub fov_y: f64,
    pub resolution: usize,
}

impl Default for Turntable {
    fn default() -> Self {
        Self {
            elevation: 15f64.to_radians(),
            radius: 1.3,
            fov_y: 50f64.to_radians(),
            resolution: crate::latent::LATENT_SIZE,
        }
    }
}

/// `n` cameras at equally spaced azimuths starting from the front.
pub fn turntable_cameras(n: usize, t: &Turntable) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            Camera::orbit(az, t.elevation, t.radius, t.fov_y, t.resolution)
        })
        .collect()
}

/// Renders `n_views` PNGs named `view_000.png`, ... into `out_dir`. RGB-mode
/// fields are written directly; latent fields go through the decoder when
/// one is given and through the linear preview otherwise.
pub fn render_turntable(
    params: &FieldParams,
    n_views: usize,
    out_dir: &Path,
    mut decoder: Option<&mut dyn Decoder>,
    t: &Turntable,
) -> Result<Vec<PathBuf>, Error> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let steps = params.config().steps;
    let mut paths = Vec::with_capacity(n_views);
    for (i, cam) in turntable_cameras(n_views, t).iter().enumerate() {
        let img = render_view(params, cam, steps).latent;
        let rgb = if params.is_rgb() {
            img.map(display_map)
        } else if let Some(d) = decoder.as_deref_mut() {
            d.decode(&img)?
        } else {
            rgb_preview(&img, &init_rgb_adapter()).map(display_map)
        };
        let p = out_dir.join(format!("view_{i:03}.png"));
        crate::image_io::write_png(&p, &rgb, false)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Extracts the occupancy isosurface and writes it as an OBJ file.
pub fn export_mesh(
    params: &FieldParams,
    res: usize,
    iso: f64,
    path: &Path,
) -> Result<usize, Error> {
    let mesh = marching_cubes(params, res, iso);
    write_obj(&mesh, path, None)?;
    Ok(mesh.triangle_count())
}

/// Renders Dirac targets of `field` from `cameras`. Cameras are rounded to
/// single precision first, so the stored cameras reproduce the targets.
pub fn make_targets(field: &dyn RadianceField, cameras: &[Camera], steps: usize) -> TargetSet {
    let cameras: Vec<Camera> = cameras.iter().map(quantize_camera).collect();
    let targets = cameras
        .iter()
        .map(|c| {
            let mut img = render_field(field, c, steps, &RenderOptions::default()).latent;
            crate::math::quantize_slice(img.data_mut());
            img
        })
        .collect();
    TargetSet { targets, cameras }
}

/// Smooth analytic scene: a few Gaussian density blobs, each with its own
/// colour. Useful as a known ground truth for Dirac targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobScene {
    /// `(center, radius, peak density, colour)`.
    pub blobs: Vec<([f64; 3], f64, f64, Vec<f64>)>,
    pub background: Vec<f64>,
    pub bound: f64,
}

impl BlobScene {
    /// Three overlapping blobs with distinct 4-channel colours.
    pub fn latent_demo() -> Self {
        Self {
            blobs: vec![
                ([0.0, 0.0, 0.0], 0.3, 30.0, vec![0.8, -0.4, 0.3, 0.1]),
                ([0.25, 0.15, 0.05], 0.18, 40.0, vec![-0.5, 0.6, 0.2, -0.3]),
                ([-0.2, -0.15, 0.15], 0.15, 40.0, vec![0.1, 0.2, -0.7, 0.5]),
            ],
            background: vec![0.0; LATENT_CHANNELS],
            bound: 1.0,
        }
    }

    /// The demo scene seen through the fixed latent-to-RGB matrix.
    pub fn rgb_demo() -> Self {
        let mut s = Self::latent_demo();
        let a = init_rgb_adapter();
        for b in &mut s.blobs {
            b.3 = a.apply(&b.3).to_vec();
        }
        s.background = vec![0.0; 3];
        s
    }
}

impl RadianceField for BlobScene {
    fn channels(&self) -> usize {
        self.background.len()
    }

    fn background(&self) -> Vec<f64> {
        self.background.clone()
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn evaluator(&self) -> Box<dyn FnMut(crate::math::Vec3, &mut [f64]) -> f64 + '_> {
        Box::new(move |p, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            let mut sigma = 0.0;
            for (c, r, peak, col) in &self.blobs {
                let d2 = (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2) + (p.z - c[2]).powi(2);
                let s = peak * (-d2 / (2.0 * r * r)).exp();
                sigma += s;
                for (o, v) in out.iter_mut().zip(col) {
                    *o += s * v;
                }
            }
            if sigma > 1e-12 {
                out.iter_mut().for_each(|v| *v /= sigma);
            }
            sigma
        })
    }
}

/// Per-view mean squared error between renders of `params` and the target
/// set.
pub fn target_mse(params: &FieldParams, set: &TargetSet) -> Vec<f64> {
    set.cameras
        .iter()
        .zip(&set.targets)
        .map(|(c, t)| render_view(params, c, params.config().steps).latent.mse(t))
        .collect()
}
