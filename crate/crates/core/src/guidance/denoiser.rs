use crate::error::GuidanceError;
use crate::guidance::schedule::DiffusionSchedule;
use crate::latent::LatentImage;

/// Noise predictor `eps_phi(x_t, t, prompt)`.
pub trait Denoiser: Send {
    fn predict_eps(
        &mut self,
        x_t: &LatentImage,
        t: usize,
        prompt: &str,
    ) -> Result<LatentImage, GuidanceError>;
}

/// Latent-to-image decoder. Returns a 3-channel image with values in [0, 1].
pub trait Decoder {
    fn decode(&mut self, latent: &LatentImage) -> Result<LatentImage, GuidanceError>;
}

/// Exact denoiser for a data distribution concentrated on one target:
/// `eps = (x_t - sqrt(abar_t) target) / sqrt(1 - abar_t)`.
#[derive(Debug, Clone)]
pub struct DiracDenoiser {
    target: LatentImage,
    schedule: DiffusionSchedule,
}

pub fn dirac_denoiser(target: LatentImage, schedule: &DiffusionSchedule) -> DiracDenoiser {
    DiracDenoiser {
        target,
        schedule: schedule.clone(),
    }
}

impl DiracDenoiser {
    pub fn target(&self) -> &LatentImage {
        &self.target
    }
}

impl Denoiser for DiracDenoiser {
    fn predict_eps(
        &mut self,
        x_t: &LatentImage,
        t: usize,
        _prompt: &str,
    ) -> Result<LatentImage, GuidanceError> {
        self.target.check_same_shape(x_t)?;
        let a = self.schedule.alpha_bar(t)?;
        let one_minus = 1.0 - a;
        if one_minus < super::schedule::MIN_NOISE {
            return Err(GuidanceError::SingularTimestep { t, one_minus });
        }
        let (sa, inv) = (a.sqrt(), 1.0 / one_minus.sqrt());
        Ok(x_t.zip_map(&self.target, |x, z| (x - sa * z) * inv))
    }
}

/// Calls `den` and enforces the interface contract on its output.
pub fn checked_predict(
    den: &mut dyn Denoiser,
    x_t: &LatentImage,
    t: usize,
    prompt: &str,
) -> Result<LatentImage, GuidanceError> {
    let eps = den.predict_eps(x_t, t, prompt)?;
    x_t.check_same_shape(&eps)?;
    if !eps.is_finite() {
        return Err(GuidanceError::NonFiniteOutput);
    }
    Ok(eps)
}
