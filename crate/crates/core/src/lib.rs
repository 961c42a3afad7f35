//! Differentiable surfel splatting with a frequency-encoded deformation field.
//!
//! The crate is generic over the scalar type: production code runs in `f32`
//! while gradient checks and oracles reuse the same routines in `f64`.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::should_implement_trait,
    clippy::type_complexity
)]

pub mod camera;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod pimi;
pub mod raster;
pub mod real;
pub mod sh;
pub mod surfel;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;

/// Single-precision types used by the trainer and the command line.
pub type Surfel = surfel::GaussianSurfel<f32>;
pub type Camera = camera::CameraModel<f32>;
pub type Scene = model::SceneModel<f32>;
pub type Network = mlp::DeformationNetwork<f32>;
pub type Frame = pimi::FrameBundle<f32>;
pub type RgbImage = image::Image<f32>;
