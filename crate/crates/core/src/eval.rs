//! Segmentation and rendering metrics, and the fixed-versus-adaptive
//! segmentation benchmark.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Point3;
use serde::Serialize;
use thiserror::Error;

use crate::config::EngineConfig;
use crate::dataset::GroundTruthSegmentation;
use crate::gaussian_map::GaussianMap;
use crate::query::{
    adaptive_query, fixed_query, lower_median, Mask, MaskIouOracle, QueryContext, QueryError, QueryResult,
    ThresholdOracle,
};
use crate::sparse_grid::GaussianId;
use crate::splat_render::render;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Alpha at which a rendered pixel counts as covered in masks.
pub const MASK_ALPHA: f32 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label {0} is absent from the ground truth")]
    UnknownLabel(u32),
    #[error("match radius must be positive")]
    InvalidRadius,
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("no valid pixels")]
    EmptyMask,
    #[error("unknown strategy '{0}' (expected 'adaptive' or 'fixed[:δ]')")]
    Strategy(String),
}

type Cell = (i64, i64, i64);

fn cells<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>, r: f64) -> HashSet<Cell> {
    points
        .into_iter()
        .map(|p| ((p.x / r).floor() as i64, (p.y / r).floor() as i64, (p.z / r).floor() as i64))
        .collect()
}

/// Occupancy IoU of two point sets voxelized at `r`. Two empty sets score 1.
pub fn iou3d_points(a: &[Point3<f64>], b: &[Point3<f64>], r: f64) -> f64 {
    let (ca, cb) = (cells(a, r), cells(b, r));
    let union = ca.union(&cb).count();
    if union == 0 {
        return 1.0;
    }
    ca.intersection(&cb).count() as f64 / union as f64
}

/// IoU of the means of `ids` against the ground-truth points of `label`.
pub fn iou3d(
    ids: &[GaussianId],
    map: &GaussianMap,
    gt: &GroundTruthSegmentation,
    label: u32,
    match_radius: f64,
) -> Result<f64, EvalError> {
    if !(match_radius > 0.0) {
        return Err(EvalError::InvalidRadius);
    }
    let truth: Vec<Point3<f64>> = gt.points_of(label).copied().collect();
    if truth.is_empty() {
        return Err(EvalError::UnknownLabel(label));
    }
    let pred: Vec<Point3<f64>> = ids.iter().filter_map(|&id| map.get(id)).map(|p| p.mean).collect();
    Ok(iou3d_points(&pred, &truth, match_radius))
}

/// `10·log10(255² / MSE)` over 8-bit samples, capped at [`PSNR_CAP`].
pub fn psnr_u8(a: &[u8], b: &[u8]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let sse: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute depth difference over pixels where `valid` is set.
pub fn depth_l1(a: &[f32], b: &[f32], valid: &[bool]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::SizeMismatch(a.len(), b.len()));
    }
    if valid.len() != a.len() {
        return Err(EvalError::SizeMismatch(a.len(), valid.len()));
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for i in 0..a.len() {
        if valid[i] {
            sum += (a[i] as f64 - b[i] as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// How thresholds are chosen for a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Adaptive,
    Fixed(f64),
}

impl Strategy {
    pub const DEFAULT_FIXED: f64 = 0.6;
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "adaptive" {
            return Ok(Self::Adaptive);
        }
        if s == "fixed" {
            return Ok(Self::Fixed(Self::DEFAULT_FIXED));
        }
        let delta = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|d| (0.0..=1.0).contains(d))
            .ok_or_else(|| EvalError::Strategy(s.into()))?;
        Ok(Self::Fixed(delta))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Adaptive => f.write_str("adaptive"),
            Self::Fixed(d) => write!(f, "fixed:{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelScore {
    pub label: String,
    pub iou: f64,
    /// Lower median of the per-cluster thresholds; absent when the query failed.
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationScore {
    pub per_label: Vec<LabelScore>,
    pub miou: f64,
    pub macc: f64,
    pub strategy: String,
    pub config_hash: String,
}

impl SegmentationScore {
    /// Aggregates per-label scores; mAcc counts IoU strictly above `cutoff`.
    pub fn aggregate(per_label: Vec<LabelScore>, cutoff: f64, strategy: String, config_hash: String) -> Self {
        let n = per_label.len().max(1) as f64;
        let miou = per_label.iter().map(|s| s.iou).sum::<f64>() / n;
        let macc = per_label.iter().filter(|s| s.iou > cutoff).count() as f64 / n;
        Self { per_label, miou, macc, strategy, config_hash }
    }
}

/// Primitives whose mean falls in a match cell occupied by the label's
/// ground-truth points, ascending.
pub fn gt_primitive_ids(map: &GaussianMap, gt: &GroundTruthSegmentation, label: u32, match_radius: f64) -> Vec<GaussianId> {
    let truth = cells(gt.points_of(label), match_radius);
    map.iter()
        .filter(|p| truth.contains(&cells([&p.mean], match_radius).into_iter().next().expect("one cell")))
        .map(|p| p.id)
        .collect()
}

/// Display name of a label, falling back to `label<N>`.
pub fn label_name(gt: &GroundTruthSegmentation, label: u32) -> String {
    gt.label_names.get(label as usize).cloned().unwrap_or_else(|| format!("label{label}"))
}

/// A scripted judge whose hidden mask for each (label, keyframe) is the
/// silhouette of the label's ground-truth primitives seen from that keyframe.
pub fn mask_oracle_for(ctx: &QueryContext<'_>, gt: &GroundTruthSegmentation, match_radius: f64) -> MaskIouOracle {
    let mut oracle = MaskIouOracle::new(MASK_ALPHA);
    for label in 0..gt.label_count() as u32 {
        let ids = gt_primitive_ids(ctx.map, gt, label, match_radius);
        let name = label_name(gt, label);
        for kf in ctx.keyframes {
            let out = render(&ids, ctx.map, &kf.pose, &kf.intrinsics, [0.0; 3]);
            oracle.insert(&name, kf.frame_id, Mask::from_render(&out, MASK_ALPHA));
        }
    }
    oracle
}

/// Runs one query per label.
pub fn run_query(
    ctx: &QueryContext<'_>,
    gt: &GroundTruthSegmentation,
    label: u32,
    config: &EngineConfig,
    strategy: Strategy,
    oracle: &dyn ThresholdOracle,
) -> Result<QueryResult, QueryError> {
    let text = &gt.label_embeddings[label as usize];
    let name = label_name(gt, label);
    let qc = config.query_config();
    match strategy {
        Strategy::Adaptive => adaptive_query(ctx, text, &name, oracle, &qc),
        Strategy::Fixed(d) => fixed_query(ctx, text, &name, d, &qc),
    }
}

/// Issues one query per ground-truth label and scores each by 3D IoU. A failed
/// query scores 0. Labels are evaluated concurrently and reported in label
/// order.
pub fn segmentation_benchmark(
    ctx: &QueryContext<'_>,
    gt: &GroundTruthSegmentation,
    config: &EngineConfig,
    strategy: Strategy,
    oracle: &dyn ThresholdOracle,
) -> SegmentationScore {
    let r = config.match_radius();
    let score = |label: u32| -> LabelScore {
        let name = label_name(gt, label);
        match run_query(ctx, gt, label, config, strategy, oracle) {
            Ok(result) => {
                let iou = iou3d(&result.all_ids(), ctx.map, gt, label, r).unwrap_or(0.0);
                let thresholds: Vec<f64> = result.clusters.iter().map(|c| c.threshold).collect();
                LabelScore { label: name, iou, threshold: lower_median(&thresholds), error: None }
            }
            Err(e) => {
                log::warn!("query '{name}' failed: {e}");
                LabelScore { label: name, iou: 0.0, threshold: None, error: Some(e.to_string()) }
            }
        }
    };
    let labels: Vec<u32> = (0..gt.label_count() as u32).collect();
    #[cfg(feature = "parallel")]
    let per_label: Vec<LabelScore> = {
        use rayon::prelude::*;
        labels.par_iter().map(|&l| score(l)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_label: Vec<LabelScore> = labels.iter().map(|&l| score(l)).collect();
    SegmentationScore::aggregate(per_label, config.macc_cutoff, strategy.to_string(), config.hash())
}

/// Several benchmark runs over the same map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub runs: Vec<SegmentationScore>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (strategy, label) with the run's aggregates repeated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,label,iou,threshold,miou,macc,config_hash\n");
        for run in &self.runs {
            for s in &run.per_label {
                let t = s.threshold.map(|t| t.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    run.strategy, s.label, s.iou, t, run.miou, run.macc, run.config_hash
                );
            }
        }
        out
    }
}
