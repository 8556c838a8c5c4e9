//! Optimization loops for all modes, checkpoints, and exports.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod export;
pub mod mc_tables;
pub mod mcubes;
pub mod prompt;
pub mod train;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{quantize_camera, Checkpoint, TargetSet, Tensor, TensorFile, Trainable};
pub use config::{DenoiserKind, Mode, TrainConfig};
pub use export::{
    export_mesh, make_targets, render_turntable, target_mse, turntable_cameras, BlobScene,
    Turntable,
};
pub use mcubes::{marching_cubes, marching_cubes_fn, DEFAULT_ISO};
pub use prompt::direction_prompt;
pub use train::{
    build_critic, initial_checkpoint, iteration_rng, train, train_from, train_with, Critic,
    MetricsRecord,
};
