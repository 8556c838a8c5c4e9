//! Occupancy loss against a guiding shape, background-mask entropy, and the
//! weighted combination of per-term gradients.
//!
//! Clamps are straight-through: the returned gradient is the derivative of
//! the loss formula evaluated at the clamped value.

use serde::{Deserialize, Serialize};

use crate::error::ObjectiveError;
use crate::geometry::{SurfaceQuery, DEFAULT_WINDING_THRESHOLD};
use crate::latent::LatentImage;

pub const ALPHA_CLAMP: f64 = 1e-5;
pub const BLEND_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_sds: f64,
    pub lambda_sparse: f64,
    pub lambda_sketch: f64,
    /// Leniency of the sketch constraint near the surface (scene units squared).
    pub sigma_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sds: 1.0,
            lambda_sparse: 5e-4,
            lambda_sketch: 1.0,
            sigma_s: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_sds", self.lambda_sds),
            ("lambda_sparse", self.lambda_sparse),
            ("lambda_sketch", self.lambda_sketch),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return Err(format!("sigma_s must be positive, got {}", self.sigma_s));
        }
        Ok(())
    }
}

/// Surface-distance decay `1 - exp(-d^2 / (2 sigma_s))`.
#[inline]
pub fn sketch_weight(d: f64, sigma_s: f64) -> f64 {
    -(-d * d / (2.0 * sigma_s)).exp_m1()
}

#[inline]
fn bce(a: f64, label: f64) -> f64 {
    -(label * a.ln() + (1.0 - label) * (1.0 - a).ln())
}

#[inline]
fn bce_grad(a: f64, label: f64) -> f64 {
    -(label / a - (1.0 - label) / (1.0 - a))
}

/// Sketch loss with explicit labels and distances. Returns the mean loss and
/// `dL/dalpha` per point.
pub fn sketch_loss_labeled(
    alphas: &[f64],
    labels: &[f64],
    distances: &[f64],
    sigma_s: f64,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    if !(sigma_s > 0.0 && sigma_s.is_finite()) {
        return Err(ObjectiveError::BadSigma(sigma_s));
    }
    if alphas.len() != labels.len() || alphas.len() != distances.len() {
        return Err(ObjectiveError::LengthMismatch(
            alphas.len(),
            labels.len().min(distances.len()),
        ));
    }
    if alphas.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = alphas.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(alphas.len());
    for ((&a, &l), &d) in alphas.iter().zip(labels).zip(distances) {
        let w = sketch_weight(d, sigma_s);
        let a = a.clamp(ALPHA_CLAMP, 1.0 - ALPHA_CLAMP);
        total += bce(a, l) * w;
        grad.push(bce_grad(a, l) * w / n);
    }
    Ok((total / n, grad))
}

/// Sketch loss with hard labels from the winding number of each query.
pub fn sketch_loss(
    alphas: &[f64],
    queries: &[SurfaceQuery],
    sigma_s: f64,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    if alphas.len() != queries.len() {
        return Err(ObjectiveError::LengthMismatch(alphas.len(), queries.len()));
    }
    let labels: Vec<f64> = queries
        .iter()
        .map(|q| f64::from(u8::from(q.inside(DEFAULT_WINDING_THRESHOLD))))
        .collect();
    let d: Vec<f64> = queries.iter().map(|q| q.distance).collect();
    sketch_loss_labeled(alphas, &labels, &d, sigma_s)
}

/// Mean binary entropy of the clamped blend weights, and its gradient.
pub fn sparsity_loss(w_blend: &[f64]) -> (f64, Vec<f64>) {
    if w_blend.is_empty() {
        return (0.0, Vec::new());
    }
    let n = w_blend.len() as f64;
    let mut total = 0.0;
    let grad = w_blend
        .iter()
        .map(|&w| {
            let w = w.clamp(BLEND_CLAMP, 1.0 - BLEND_CLAMP);
            total += -(w * w.ln() + (1.0 - w) * (1.0 - w).ln());
            ((1.0 - w) / w).ln() / n
        })
        .collect();
    (total / n, grad)
}

/// Unweighted per-term gradients from one iteration. `None` means the term
/// was not evaluated.
#[derive(Debug, Clone, Default)]
pub struct LossParts {
    /// Per-pixel SDS gradient on the rendered image.
    pub sds: Option<LatentImage>,
    /// Sparsity gradient w.r.t. `w_blend`.
    pub sparse: Option<Vec<f64>>,
    /// Sketch gradient w.r.t. per-sample occupancy.
    pub sketch: Option<Vec<f64>>,
}

/// Weighted gradients ready for the renderer's backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CombinedGrads {
    pub pixels: Option<LatentImage>,
    pub w_blend: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
}

/// Scales each part by its weight. Terms with zero weight are dropped
/// entirely rather than multiplied by zero.
pub fn total_loss(parts: LossParts, weights: &LossWeights) -> CombinedGrads {
    fn scaled(v: Vec<f64>, k: f64) -> Vec<f64> {
        v.into_iter().map(|x| k * x).collect()
    }
    CombinedGrads {
        pixels: parts
            .sds
            .filter(|_| weights.lambda_sds != 0.0)
            .map(|g| g.map(|x| weights.lambda_sds * x)),
        w_blend: parts
            .sparse
            .filter(|_| weights.lambda_sparse != 0.0)
            .map(|g| scaled(g, weights.lambda_sparse)),
        alpha: parts
            .sketch
            .filter(|_| weights.lambda_sketch != 0.0)
            .map(|g| scaled(g, weights.lambda_sketch)),
    }
}

/// Logged stand-in for the SDS term: `<grad, x>`.
pub fn sds_proxy(grad: &LatentImage, x: &LatentImage) -> f64 {
    grad.dot(x)
}
