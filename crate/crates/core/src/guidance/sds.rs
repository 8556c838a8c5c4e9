use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::GuidanceError;
use crate::guidance::denoiser::{checked_predict, Denoiser};
use crate::guidance::schedule::{noise_with, DiffusionSchedule};
use crate::latent::LatentImage;

#[derive(Debug, Clone, PartialEq)]
pub struct SdsSample {
    pub t: usize,
    pub eps: LatentImage,
    pub grad: LatentImage,
}

/// Standard normal image of the given shape.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize, usize)) -> LatentImage {
    let (c, h, w) = shape;
    let data = (0..c * h * w)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    LatentImage::from_vec(c, h, w, data)
}

/// One score-distillation sample at the rendered image `x`. The timestep is
/// drawn before the noise.
pub fn sds_gradient<R: Rng + ?Sized>(
    den: &mut dyn Denoiser,
    x: &LatentImage,
    prompt: &str,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<SdsSample, GuidanceError> {
    let t = sched.sample_timestep(rng);
    let eps = sample_noise(rng, x.shape());
    sds_at(den, x, prompt, sched, t, eps)
}

/// SDS gradient for a given timestep and noise.
pub fn sds_at(
    den: &mut dyn Denoiser,
    x: &LatentImage,
    prompt: &str,
    sched: &DiffusionSchedule,
    t: usize,
    eps: LatentImage,
) -> Result<SdsSample, GuidanceError> {
    x.check_same_shape(&eps)?;
    let a = sched.alpha_bar(t)?;
    let w = sched.weight(t)?;
    let x_t = noise_with(x, &eps, a);
    let pred = checked_predict(den, &x_t, t, prompt)?;
    let grad = pred.zip_map(&eps, |p, e| w * (p - e));
    Ok(SdsSample { t, eps, grad })
}
