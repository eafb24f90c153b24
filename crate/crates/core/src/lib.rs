//! Multi-object 3D reconstruction by exemplar shape selection.
//!
//! The crate covers the numerical core of the pipeline: a shape-exemplar
//! database built by clustering signed distance fields, hard and soft
//! selection labels, 9-DoF pose losses with SVD projection onto SO(3), a
//! differentiable SDF collision energy, keypoint heatmap utilities, a
//! synthetic scene generator, a first-order pose optimizer, and evaluation
//! metrics (voxel IoU, oriented-box mAP, intersecting volume).

pub mod collision;
pub mod detect;
pub mod error;
pub mod eval;
pub mod geom;
pub mod losses;
pub mod optim;
pub mod scene;
pub mod shape_db;
pub mod toy;
pub mod voxel;

pub use error::{Error, Result};
