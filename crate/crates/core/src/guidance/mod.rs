//! Diffusion schedule, denoisers and the score-distillation gradient.

pub mod bridge;
pub mod denoiser;
pub mod schedule;
pub mod sds;

pub use bridge::{resolve_endpoint, BridgeClient, BRIDGE_ENV};
pub use denoiser::{checked_predict, dirac_denoiser, Decoder, Denoiser, DiracDenoiser};
pub use schedule::{add_noise, make_schedule, DiffusionSchedule, ScheduleConfig, WeightMode};
pub use sds::{sample_noise, sds_at, sds_gradient, SdsSample};
