//! Partial-to-global curriculum for open-vocabulary 3D semantic segmentation,
//! end to end on synthetic RGB-D scenes: scene synthesis, pinhole rendering and
//! backprojection, pixel-entity labeling, a point encoder with hand-written
//! gradients, two-stage alignment/consistency training, voxel-resampled pseudo
//! labels, and segmentation metrics.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`) via the
//! [`Real`] trait; the aliases at the crate root fix the default `f64`
//! precision used by the pipeline binary.

pub mod embed;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod pseudo;
pub mod scalar;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default pipeline precision.
pub type Scalar = f64;

pub type Vec3 = linalg::Vec3<Scalar>;
pub type Mat3 = linalg::Mat3<Scalar>;
pub type Matrix = linalg::Matrix<Scalar>;
pub type SceneSpec = scene::SceneSpec<Scalar>;
pub type GlobalScene = scene::GlobalScene<Scalar>;
pub type CameraTrajectory = scene::CameraTrajectory<Scalar>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<Scalar>;
pub type CameraPose = geometry::CameraPose<Scalar>;
pub type Frame = geometry::Frame<Scalar>;
pub type PartialCloud = geometry::PartialCloud<Scalar>;
pub type TextEmbeddingTable = embed::TextEmbeddingTable<Scalar>;
pub type EncoderParams = embed::EncoderParams<Scalar>;
pub type SceneNormalizer = embed::SceneNormalizer<Scalar>;
pub type PseudoLabelSet = pseudo::PseudoLabelSet<Scalar>;
