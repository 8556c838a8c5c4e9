use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Pinhole camera. Position is derived from spherical coordinates around the
/// look-at point for sampled cameras; azimuth and elevation are kept for
/// prompt augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    /// Square image side in pixels.
    pub resolution: usize,
    pub azimuth: f64,
    pub elevation: f64,
}

impl Camera {
    /// Camera on a sphere of `radius` around the origin, looking at it.
    /// Azimuth 0 looks along -z from +z; elevation is measured from the
    /// horizontal plane towards +y.
    pub fn orbit(azimuth: f64, elevation: f64, radius: f64, fov_y: f64, resolution: usize) -> Self {
        let position = Vec3::new(
            radius * elevation.cos() * azimuth.sin(),
            radius * elevation.sin(),
            radius * elevation.cos() * azimuth.cos(),
        );
        Self {
            position,
            look_at: Vec3::ZERO,
            up: Vec3::new(0.0, 1.0, 0.0),
            fov_y,
            resolution,
            azimuth,
            elevation,
        }
    }

    /// Orthonormal `(right, up, forward)` frame.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalized();
        let mut right = forward.cross(self.up);
        if right.norm() < 1e-9 {
            // Looking straight along `up`; any perpendicular will do.
            right = forward.cross(Vec3::new(0.0, 0.0, -1.0));
        }
        let right = right.normalized();
        let up = right.cross(forward);
        (right, up, forward)
    }

    /// Unit ray direction through the center of pixel `(row, col)`.
    pub fn ray_direction(&self, row: usize, col: usize) -> Vec3 {
        let (right, up, forward) = self.basis();
        self.ray_direction_in(row as f64 + 0.5, col as f64 + 0.5, right, up, forward)
    }

    /// Ray direction through continuous pixel coordinates (pixel centers at
    /// half-integers).
    #[inline]
    pub fn ray_direction_in(
        &self,
        row: f64,
        col: f64,
        right: Vec3,
        up: Vec3,
        forward: Vec3,
    ) -> Vec3 {
        let tan = (0.5 * self.fov_y).tan();
        let res = self.resolution as f64;
        let x = (2.0 * col / res - 1.0) * tan;
        let y = (1.0 - 2.0 * row / res) * tan;
        (forward + right * x + up * y).normalized()
    }

    /// Projects a world point to `(row, col, depth)` in continuous pixel
    /// coordinates; depth is along the view axis. `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let (right, up, forward) = self.basis();
        let d = p - self.position;
        let z = d.dot(forward);
        if z <= 0.0 {
            return None;
        }
        let tan = (0.5 * self.fov_y).tan();
        let res = self.resolution as f64;
        let x = d.dot(right) / (z * tan);
        let y = d.dot(up) / (z * tan);
        Some(((1.0 - y) * 0.5 * res, (x + 1.0) * 0.5 * res, z))
    }

    pub fn is_valid(&self) -> bool {
        self.position != self.look_at && self.fov_y > 0.0 && self.fov_y < PI && self.resolution > 0
    }
}

/// Ranges for random viewpoints. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub radius_min: f64,
    pub radius_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub fov_y: f64,
    pub resolution: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            radius_min: 1.0,
            radius_max: 1.5,
            elevation_min: (-10.0f64).to_radians(),
            elevation_max: 60.0f64.to_radians(),
            fov_y: 50.0f64.to_radians(),
            resolution: crate::latent::LATENT_SIZE,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(format!(
                "camera radius range [{}, {}] invalid",
                self.radius_min, self.radius_max
            ));
        }
        if !(self.elevation_min <= self.elevation_max
            && self.elevation_min > -PI / 2.0
            && self.elevation_max < PI / 2.0)
        {
            return Err("camera elevation range must lie in (-90, 90) degrees".into());
        }
        if !(self.fov_y > 0.0 && self.fov_y < PI) {
            return Err("camera fov must lie in (0, 180) degrees".into());
        }
        if self.resolution == 0 {
            return Err("camera resolution must be positive".into());
        }
        Ok(())
    }
}

/// Draws a camera: azimuth uniform in [0, 2π), elevation and radius uniform in
/// their ranges, looking at the origin.
pub fn sample_camera<R: Rng + ?Sized>(rng: &mut R, cfg: &CameraConfig) -> Camera {
    let azimuth = rng.random::<f64>() * 2.0 * PI;
    let elevation = uniform(rng, cfg.elevation_min, cfg.elevation_max);
    let radius = uniform(rng, cfg.radius_min, cfg.radius_max);
    Camera::orbit(azimuth, elevation, radius, cfg.fov_y, cfg.resolution)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    // Always consume one draw so degenerate ranges keep the stream aligned.
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}
