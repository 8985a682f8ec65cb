//! Deformable mesh-to-image registration.
//!
//! The crate covers the full offline and online path:
//!
//! - [`mesh`]: triangle meshes, OBJ/PLY I/O, normals, rigid transforms
//! - [`icp`]: rigid ICP used to prealign a shape corpus
//! - [`nicp`]: non-rigid ICP with a coarse-to-fine stiffness schedule
//! - [`shape_model`]: PCA deformation model over NICP-registered meshes
//! - [`render`]: pinhole z-buffer renderer for masks, depth and labeled contours
//! - [`objective`]: weighted Hausdorff cost, surface MSE and target registration error
//! - [`cmaes`]: bounded CMA-ES
//! - [`augment`]: contour, mask and depth augmentation
//! - [`pipeline`]: model building, dataset generation, refinement, tracking, evaluation

// Validation uses `!(a <= b)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod camera;
pub mod cmaes;
pub mod error;
pub mod icp;
pub mod imaging;
pub mod labels;
pub mod mesh;
pub mod nicp;
pub mod objective;
pub mod pipeline;
pub mod pose;
pub mod render;
pub mod shape_model;
pub mod spatial;

pub use camera::CameraIntrinsics;
pub use cmaes::{OptConfig, OptResult, Termination};
pub use error::{Error, Result};
pub use imaging::{BinaryImage, DepthImage};
pub use labels::{AnatomicalLabel, Channel};
pub use mesh::TriMesh;
pub use nicp::NicpConfig;
pub use pose::RigidPose;
pub use render::LabelImageSet;
pub use shape_model::ShapeModel;
