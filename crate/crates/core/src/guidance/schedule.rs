use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GuidanceError;
use crate::latent::LatentImage;

/// Timesteps closer to the data end than this are never drawn.
pub const MIN_NOISE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Uniform,
    #[default]
    OneMinusAlphaBar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub weight_mode: WeightMode,
    /// Drawn timesteps lie in `[t_min_frac * T, t_max_frac * T]`.
    pub t_min_frac: f64,
    pub t_max_frac: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            weight_mode: WeightMode::OneMinusAlphaBar,
            t_min_frac: 0.02,
            t_max_frac: 0.98,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule, GuidanceError> {
        make_schedule(
            self.timesteps,
            self.beta_start,
            self.beta_end,
            self.weight_mode,
        )?
        .with_range(self.t_min_frac, self.t_max_frac)
    }
}

/// Cumulative signal levels of a linear-beta DDPM schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
    weight_mode: WeightMode,
    t_min: usize,
    t_max: usize,
}

/// Linear betas from `beta_start` to `beta_end` over `timesteps` steps.
pub fn make_schedule(
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    weight_mode: WeightMode,
) -> Result<DiffusionSchedule, GuidanceError> {
    if timesteps == 0 {
        return Err(GuidanceError::InvalidSchedule(
            "need at least one timestep".into(),
        ));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(GuidanceError::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(timesteps);
    let mut prod = 1.0;
    for t in 0..timesteps {
        let beta = if timesteps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * t as f64 / (timesteps - 1) as f64
        };
        prod *= 1.0 - beta;
        alpha_bar.push(prod);
    }
    let mut s = DiffusionSchedule {
        alpha_bar,
        weight_mode,
        t_min: 0,
        t_max: timesteps - 1,
    };
    s.skip_singular();
    Ok(s)
}

impl DiffusionSchedule {
    /// Restricts drawn timesteps to `[lo * T, hi * T]` (clipped to valid
    /// indices and away from near-noiseless steps).
    pub fn with_range(mut self, lo: f64, hi: f64) -> Result<Self, GuidanceError> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(GuidanceError::InvalidSchedule(format!(
                "timestep range fractions [{lo}, {hi}] invalid"
            )));
        }
        let n = self.alpha_bar.len();
        self.t_min = ((lo * n as f64).floor() as usize).min(n - 1);
        self.t_max = ((hi * n as f64).floor() as usize).min(n - 1);
        self.skip_singular();
        if self.t_min > self.t_max {
            return Err(GuidanceError::InvalidSchedule(
                "no usable timestep in range".into(),
            ));
        }
        Ok(self)
    }

    fn skip_singular(&mut self) {
        while self.t_min < self.alpha_bar.len() - 1 && 1.0 - self.alpha_bar[self.t_min] < MIN_NOISE
        {
            self.t_min += 1;
        }
        self.t_max = self.t_max.max(self.t_min);
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    pub fn t_range(&self) -> (usize, usize) {
        (self.t_min, self.t_max)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, GuidanceError> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(GuidanceError::TimestepOutOfRange {
                t,
                len: self.alpha_bar.len(),
            })
    }

    /// SDS weight `w(t)`.
    pub fn weight(&self, t: usize) -> Result<f64, GuidanceError> {
        let a = self.alpha_bar(t)?;
        Ok(match self.weight_mode {
            WeightMode::Uniform => 1.0,
            WeightMode::OneMinusAlphaBar => 1.0 - a,
        })
    }

    /// Uniform draw from the configured timestep range.
    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.t_min..=self.t_max)
    }
}

/// `sqrt(abar_t) x + sqrt(1 - abar_t) eps`.
pub fn add_noise(
    x: &LatentImage,
    t: usize,
    eps: &LatentImage,
    sched: &DiffusionSchedule,
) -> Result<LatentImage, GuidanceError> {
    x.check_same_shape(eps)?;
    let a = sched.alpha_bar(t)?;
    Ok(noise_with(x, eps, a))
}

pub(crate) fn noise_with(x: &LatentImage, eps: &LatentImage, alpha_bar: f64) -> LatentImage {
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x.zip_map(eps, |a, e| sa * a + sn * e)
}
