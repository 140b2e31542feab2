//! Learned sphere tracing of multiple scattering in homogeneous media.
//!
//! Three conditional variational auto-encoders summarize the random walk of
//! a photon from the center of a sphere to its boundary: the number of
//! scattering events, the exit position and direction, and one
//! representative event for next-event estimation. A renderer uses them to
//! replace long scattering chains by a single step whose radius comes from a
//! conservative distance field, and compares against brute-force volumetric
//! path tracing.
//!
//! The numerical layers ([`vec3`], [`optics`], [`walker`], [`nn`], [`cvae`])
//! are generic over [`Real`]; the aliases below fix the precisions used by
//! the renderer and the shipped models.

pub mod cvae;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod num;
pub mod optics;
pub mod render;
pub mod rng;
pub mod scatter;
pub mod stats;
pub mod vec3;
pub mod walker;

pub use error::{Error, Result};
pub use num::Real;

/// Geometry and transport precision.
pub type Vec3d = vec3::Vec3<f64>;
pub type Unit3d = vec3::UnitVec3<f64>;
pub type Medium = optics::MediumParams<f64>;

/// Stored weights are single precision.
pub type Mlp32 = nn::MlpWeights<f32>;
/// Double precision networks, used for gradient checks.
pub type Mlp64 = nn::MlpWeights<f64>;

pub type Cvae32 = cvae::CvaeModel<f32>;
pub type Cvae64 = cvae::CvaeModel<f64>;
/// Render-time decoders evaluate in single precision.
pub type ScatterModels32 = scatter::ScatterModels<f32>;
