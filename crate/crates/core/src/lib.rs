#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::manual_is_multiple_of
)]

pub mod cli;
pub mod error;
pub mod field;
pub mod geometry;
pub mod guidance;
pub mod image_io;
pub mod latent;
pub mod math;
pub mod objectives;
pub mod paint;
pub mod refine;
pub mod trainer;

pub use error::{Error, Result};
