//! Linear latent-to-RGB adapter, conversion of a trained field to RGB mode,
//! and the display mapping used for previews.

use crate::error::{Error, FieldError, TrainError};
use crate::field::FieldParams;
use crate::latent::{LatentImage, LATENT_CHANNELS};
use crate::math::quantize_slice;
use crate::trainer::adam::AdamState;
use crate::trainer::checkpoint::{Checkpoint, Trainable};
use crate::trainer::config::{Mode, TrainConfig};
use crate::trainer::train::{train_from, Critic};

/// Row-major 3x4 map from the four latent channels to RGB.
pub const LATENT_TO_RGB: [f64; 12] = [
    0.298, 0.187, -0.158, -0.184, //
    0.207, 0.286, 0.189, -0.271, //
    0.208, 0.173, 0.264, -0.473,
];

/// `rgb = matrix * latent + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbAdapter {
    pub matrix: [f64; 12],
    pub bias: [f64; 3],
    pub learnable: bool,
}

impl RgbAdapter {
    #[inline]
    pub fn apply(&self, latent: &[f64]) -> [f64; 3] {
        let mut out = self.bias;
        for (r, o) in out.iter_mut().enumerate() {
            for c in 0..LATENT_CHANNELS {
                *o += self.matrix[r * LATENT_CHANNELS + c] * latent[c];
            }
        }
        out
    }

    /// `matrix^T * g`.
    #[inline]
    pub fn apply_transpose(&self, g: &[f64]) -> [f64; LATENT_CHANNELS] {
        let mut out = [0.0; LATENT_CHANNELS];
        for r in 0..3 {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.matrix[r * LATENT_CHANNELS + c] * g[r];
            }
        }
        out
    }
}

/// The adapter at its initial value: the fixed matrix and zero bias.
pub fn init_rgb_adapter() -> RgbAdapter {
    RgbAdapter {
        matrix: LATENT_TO_RGB,
        bias: [0.0; 3],
        learnable: true,
    }
}

/// Switches `params` to RGB mode by appending the adapter after the latent
/// head. The installed values are rounded to single precision like every
/// other trainable tensor.
pub fn convert_to_rgb(params: &mut FieldParams, learnable: bool) -> Result<(), FieldError> {
    if params.is_rgb() {
        return Err(FieldError::AlreadyRgb);
    }
    let mut a = init_rgb_adapter();
    a.learnable = learnable;
    quantize_slice(&mut a.matrix);
    params.rgb_adapter = Some(a);
    Ok(())
}

/// Continues optimizing an RGB-mode field against an RGB critic for
/// `cfg.iterations` steps, with the same loss assembly as latent training.
/// The adapter trains along unless it was converted as frozen.
pub fn refine_loop(
    params: FieldParams,
    critic: Critic,
    cfg: &TrainConfig,
    metrics: &mut dyn std::io::Write,
) -> Result<FieldParams, Error> {
    if !params.is_rgb() {
        return Err(FieldError::NotRgb.into());
    }
    if cfg.mode != Mode::Refine {
        return Err(TrainError::Config("refine_loop needs a refine-mode config".into()).into());
    }
    cfg.validate_settings()?;
    let ck = Checkpoint {
        state: Trainable::Field(params),
        adam: AdamState::new(),
        iteration: 0,
        seed: cfg.seed,
        config_hash: cfg.trajectory_hash(),
    };
    match train_from(cfg, ck, critic, metrics)?.state {
        Trainable::Field(p) => Ok(p),
        Trainable::Texture(_) => unreachable!("field in, field out"),
    }
}

/// Per-pixel linear preview of a 4-channel latent image.
pub fn rgb_preview(latent: &LatentImage, adapter: &RgbAdapter) -> LatentImage {
    assert_eq!(latent.channels(), LATENT_CHANNELS);
    let (h, w) = (latent.height(), latent.width());
    let mut out = LatentImage::zeros(3, h, w);
    let mut px = [0.0; LATENT_CHANNELS];
    for y in 0..h {
        for x in 0..w {
            for (c, v) in px.iter_mut().enumerate() {
                *v = latent.get(c, y, x);
            }
            let rgb = adapter.apply(&px);
            for (c, v) in rgb.iter().enumerate() {
                out.set(c, y, x, *v);
            }
        }
    }
    out
}

/// Maps a linear value in `[-1, 1]` to `[0, 1]`, clamped.
#[inline]
pub fn display_map(x: f64) -> f64 {
    ((x + 1.0) * 0.5).clamp(0.0, 1.0)
}
