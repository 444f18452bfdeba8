//! Open-vocabulary object queries.
//!
//! A query embedding is compared against every semantic voxel, seeds above a
//! high threshold are clustered with DBSCAN, and each cluster's threshold is
//! refined by rendering candidate selections from its best keyframes and
//! letting a [`ThresholdOracle`] pick the best one per view.

mod adaptive;
mod dbscan;
mod oracle;
mod similarity;
mod threshold;
mod viewpoints;

use thiserror::Error;

use crate::gaussian_map::{GaussianMap, Keyframe};
use crate::sparse_grid::SparseVoxelGrid;

pub use adaptive::{
    adaptive_query, cluster_region, evaluate_round, fixed_query, seed_clusters, select_at, Cluster, ClusterResult,
    QueryResult, RoundTrace, ViewChoice,
};
pub use dbscan::{dbscan, DbscanResult, NOISE};
#[cfg(feature = "http")]
pub use oracle::HttpOracle;
pub use oracle::{mask_iou, ConstantOracle, Mask, MaskIouOracle, OracleError, OracleRequest, ThresholdOracle};
pub use similarity::{seed_selection, similarity_field, SimilarityField};
pub use threshold::{lower_median, sample_thresholds, ThresholdWindow};
pub use viewpoints::{coverage, keyframe_score, score_keyframes, ScoredKeyframe};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("empty semantic map")]
    EmptySemanticMap,
    #[error("query embedding must be unit length (norm {0})")]
    NotUnitNorm(f64),
    #[error("query embedding has {got} components, map features have {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no match for query '{0}'")]
    NoMatch(String),
    #[error("invalid threshold window [{lo}, {hi}]")]
    InvalidWindow { lo: f64, hi: f64 },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("oracle failed on every viewpoint: {0}")]
    OracleFailure(String),
}

/// Read-only view of a map for querying.
#[derive(Debug, Clone, Copy)]
pub struct QueryContext<'a> {
    pub grid: &'a SparseVoxelGrid,
    pub map: &'a GaussianMap,
    pub keyframes: &'a [Keyframe],
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryConfig {
    /// Stage-one seeding threshold δ₁.
    pub seed_threshold: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Keyframes kept per cluster (u).
    pub keyframes_per_cluster: usize,
    /// ε in the keyframe score `Cov / (d + ε)`.
    pub coverage_epsilon: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    /// Half width ξ of the window after each round.
    pub window_half_width: f64,
    pub iterations: usize,
    pub background: [f64; 3],
    /// Keep candidate renders in the round traces.
    pub keep_renders: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            seed_threshold: 0.8,
            dbscan_eps: 0.1,
            dbscan_min_pts: 10,
            keyframes_per_cluster: 3,
            coverage_epsilon: 0.01,
            window_lo: 0.5,
            window_hi: 1.0,
            window_half_width: 0.2,
            iterations: 2,
            background: [0.5, 0.5, 0.5],
            keep_renders: false,
        }
    }
}
