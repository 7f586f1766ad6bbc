//! Texture reconstruction for triangle meshes from posed keyframes.
//!
//! Given a mesh, a set of RGB keyframes and their camera poses, the pipeline
//! assigns the best keyframe to every face by minimizing a Potts-regularized
//! labeling energy, decomposes the labeling into fragments, matches 3D-lifted
//! keypoints across fragment borders, solves one sparse regularized
//! least-squares system for per-fragment rigid correction vectors, levels
//! seam colours, and packs the corrected texture into an atlas.
//!
//! The [`synth`] module generates ground-truth scenes with known pose
//! perturbations so the whole pipeline can be verified quantitatively.

pub mod align;
pub mod atlas;
pub mod camera;
pub mod colour;
pub mod error;
pub mod features;
pub mod io;
pub mod labeling;
pub mod maxflow;
pub mod mesh;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod sparse;
pub mod synth;

pub use error::Error;

/// Scalar type used for all geometry.
pub type Real = f64;
pub type Vec3 = nalgebra::Vector3<Real>;
pub type Point3 = nalgebra::Point3<Real>;
pub type Mat3 = nalgebra::Matrix3<Real>;
pub type Mat4 = nalgebra::Matrix4<Real>;
