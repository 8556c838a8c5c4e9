//! The latent radiance field: hash-grid encoding, MLP head, cameras and
//! volume rendering.

pub mod camera;
pub mod encoding;
pub mod mlp;
pub mod params;
pub mod render;

pub use camera::{sample_camera, Camera, CameraConfig};
pub use encoding::{HashGrid, HashGridConfig};
pub use mlp::{Linear, Mlp};
pub use params::{
    occupancy_from_sigma, EvalScratch, FieldConfig, FieldParams, TensorView, TensorViewMut,
    HEAD_WIDTH,
};
pub use render::{
    ray_ball, render_backward, render_field, render_traced, render_view, Evaluator, RadianceField,
    RaySample, RenderGrads, RenderOptions, RenderOutput, RenderTrace,
};
