//! Entropy-driven unsupervised keypoint discovery in videos.
//!
//! The pipeline turns raw RGB frames into per-pixel spatial-entropy maps
//! (differentiable soft histograms over local neighborhoods), defines a family
//! of information-theoretic losses over keypoint heatmaps, and discovers
//! keypoint trajectories by direct gradient descent on keypoint parameters.
//! Detection/tracking quality is scored against ground-truth object masks,
//! and a deterministic synthetic scene generator provides verifiable inputs.
//!
//! Core numerics are generic over the scalar type (`f32` / `f64`) through the
//! [`Scalar`] trait; [`Real`] is the concrete alias used by the CLI and the
//! default throughout.

pub mod discover;
pub mod entropy;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grad;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod synth;

use std::fmt;

pub use error::Error;
pub use field::ScalarField;

/// Floating-point scalar the numeric core is generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossless-enough conversion from `f64` constants.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant not representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default concrete scalar for the pipeline.
pub type Real = f64;
/// Frame with the default scalar.
pub type RealFrame = image_io::Frame<Real>;
/// Scalar field (entropy map, heatmap, mask, ...) with the default scalar.
pub type RealField = ScalarField<Real>;
/// Keypoint trajectory with the default scalar.
pub type RealTrajectory = discover::Trajectory<Real>;
