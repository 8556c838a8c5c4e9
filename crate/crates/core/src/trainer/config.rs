use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TrainError;
use crate::field::{CameraConfig, FieldConfig};
use crate::guidance::ScheduleConfig;
use crate::objectives::LossWeights;
use crate::paint::PaintConfig;
use crate::trainer::adam::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    LatentNerf,
    Sketch,
    Paint,
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Dirac,
    #[default]
    External,
}

/// Everything a run depends on. Loaded from a TOML file with one level of
/// tables (`[field]`, `[camera]`, `[schedule]`, `[adam]`, `[loss]`,
/// `[paint]`); angles are in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub iterations: u64,
    pub seed: u64,
    pub prompt: String,
    /// Append a view suffix to the prompt per sampled camera.
    pub direction_prompt: bool,
    /// Guiding shape for sketch mode.
    pub sketch_mesh: Option<PathBuf>,
    /// Mesh to texture in paint mode.
    pub paint_mesh: Option<PathBuf>,
    pub denoiser: DenoiserKind,
    /// Target file for the Dirac denoiser.
    pub target: Option<PathBuf>,
    /// `host:port` of the external denoiser; falls back to `LNRF_BRIDGE`.
    pub endpoint: Option<String>,
    /// Bridge connect and read timeout.
    pub endpoint_timeout_s: f64,
    /// Starting checkpoint. Refine mode requires one (a latent field);
    /// other modes resume from it.
    pub init_checkpoint: Option<PathBuf>,
    /// Refine mode: train the adapter together with the rest.
    pub adapter_learnable: bool,
    /// Write `ckpt_<iteration>.bin` every this many iterations; 0 disables.
    pub checkpoint_every: u64,
    /// Jitter sample positions along each ray.
    pub jitter: bool,
    /// Composite field renders over a fresh random background every step.
    pub random_background: bool,
    pub out_dir: Option<PathBuf>,
    pub field: FieldConfig,
    pub camera: CameraConfig,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub paint: PaintConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::LatentNerf,
            iterations: 5000,
            seed: 0,
            prompt: String::new(),
            direction_prompt: true,
            sketch_mesh: None,
            paint_mesh: None,
            denoiser: DenoiserKind::External,
            target: None,
            endpoint: None,
            endpoint_timeout_s: 30.0,
            init_checkpoint: None,
            adapter_learnable: true,
            checkpoint_every: 0,
            jitter: true,
            random_background: false,
            out_dir: None,
            field: FieldConfig::default(),
            camera: CameraConfig::default(),
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            paint: PaintConfig::default(),
        }
    }
}

impl Mode {
    /// Iteration count used when none is given.
    pub fn default_iterations(self) -> u64 {
        match self {
            Mode::LatentNerf | Mode::Sketch => 5000,
            Mode::Paint => 2000,
            Mode::Refine => 1000,
        }
    }
}

impl TrainConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            iterations: mode.default_iterations(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks mode-required fields and every sub-config.
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        match self.mode {
            Mode::Sketch if self.sketch_mesh.is_none() => {
                return bad("sketch mode requires --mesh (sketch_mesh)".into())
            }
            Mode::Paint if self.paint_mesh.is_none() => {
                return bad("paint mode requires --mesh (paint_mesh)".into())
            }
            Mode::Refine if self.init_checkpoint.is_none() => return bad(
                "refine mode requires --checkpoint (init_checkpoint) with a trained latent field"
                    .into(),
            ),
            _ => {}
        }
        if self.denoiser == DenoiserKind::Dirac && self.target.is_none() {
            return bad("the dirac denoiser requires --target".into());
        }
        self.validate_settings()
    }

    /// Checks the numeric settings only, not the mode's input paths.
    pub fn validate_settings(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.endpoint_timeout_s > 0.0 && self.endpoint_timeout_s.is_finite()) {
            return bad("endpoint_timeout_s must be positive".into());
        }
        self.field
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.camera.validate().map_err(TrainError::Config)?;
        self.schedule
            .build()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        self.adam.validate().map_err(TrainError::Config)?;
        self.loss.validate().map_err(TrainError::Config)?;
        if self.paint.texture_size == 0 || self.paint.render_size == 0 {
            return bad("paint texture_size and render_size must be positive".into());
        }
        if !(self.paint.lr > 0.0 && self.paint.lr.is_finite()) {
            return bad("paint lr must be positive".into());
        }
        Ok(())
    }

    /// Hash of everything that shapes the trajectory. Iteration count,
    /// checkpoint cadence, output location and the starting checkpoint are
    /// excluded so a shorter run can be resumed into a longer one.
    pub fn trajectory_hash(&self) -> u64 {
        let mut c = self.clone();
        c.iterations = 0;
        c.checkpoint_every = 0;
        c.out_dir = None;
        c.init_checkpoint = None;
        c.endpoint = None;
        c.endpoint_timeout_s = 0.0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
