//! Instance-centric grasp detection and object reconstruction from
//! single-view pointclouds, at desk scale.
//!
//! The crate is organized around the data flow of the system:
//!
//! - [`geom`] — contact-grasp geometry: frames, approach-angle grids, pose sets.
//! - [`cloud`] — pointcloud processing: downsampling, denoising, normals,
//!   sampling, neighbor queries, positional encodings, augmentation, PLY I/O.
//! - [`fields`] — analytic occupancy/SDF for primitives, field composition,
//!   marching cubes, reconstruction metrics, gripper collision checks,
//!   implicit-surface resampling.
//! - [`net`] — a self-contained differentiable network: encoders, token
//!   aggregation, masked query refinement, classifier, interpolation, and the
//!   implicit occupancy/affordance decoders, with reverse-mode autodiff.
//! - [`losses`] — training losses, DICE/BCE mask costs, and exact Hungarian
//!   assignment between predicted and ground-truth instances.
//! - [`sim`] — synthetic data factory: primitive scenes, single-view depth
//!   rendering, the antipodal grasp oracle, occupancy label sampling, and the
//!   on-disk dataset format.
//! - [`pipeline`] — end-to-end orchestration: dataset generation, training,
//!   grasp selection with the confidence cascade and resampling fallback, and
//!   the declutter / reconstruction evaluations.

pub mod cloud;
pub mod error;
pub mod fields;
pub mod geom;
pub mod losses;
pub mod net;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
