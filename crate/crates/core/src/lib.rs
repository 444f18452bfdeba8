//! Online open-vocabulary dense mapping.
//!
//! Posed RGB-D frames carrying per-region semantic embeddings are fused into a
//! hybrid map: a sparse voxel grid storing a truncated signed distance field
//! plus confidence-weighted semantic features, and a set of anisotropic
//! Gaussian primitives anchored to those voxels. Free-text object queries are
//! answered by thresholding the per-voxel similarity field, clustering the
//! matching primitives, and refining the threshold per object with a
//! render-and-judge loop driven by a pluggable [`query::ThresholdOracle`].
//!
//! Module map:
//!
//! - [`sparse_grid`]: voxel storage, ray traversal, binary snapshots.
//! - [`fusion`]: TSDF integration and semantic feature fusion.
//! - [`gaussian_map`]: primitive initialization, admission, pruning.
//! - [`splat_render`]: forward Gaussian splatting.
//! - [`query`]: similarity field, DBSCAN, viewpoint scoring, adaptive thresholds.
//! - [`edit`]: structured edits of query results.
//! - [`dataset`]: on-disk RGB-D datasets and the synthetic scene generator.
//! - [`eval`]: segmentation and rendering metrics.
//! - [`pipeline`]: the per-frame mapping driver and map persistence.

// `!(x > 0.0)` is used deliberately so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod dataset;
pub mod edit;
pub mod eval;
pub mod fusion;
pub mod gaussian_map;
pub mod pipeline;
pub mod ply;
pub mod query;
pub mod spatial;
pub mod sparse_grid;
pub mod splat_render;

pub use camera::{CameraIntrinsics, PoseError};
pub use config::EngineConfig;
pub use gaussian_map::{GaussianMap, GaussianPrimitive};
pub use sparse_grid::{GaussianId, SparseVoxelGrid, Voxel, VoxelKey};
