//! TSDF integration along sensor rays and confidence-weighted semantic fusion.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::Point3;
use thiserror::Error;

use crate::camera::{CameraIntrinsics, PoseError};
use crate::dataset::Frame;
use crate::sparse_grid::{dda_traverse, GridError, SparseVoxelGrid, Voxel, VoxelKey};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("surface point coincides with the sensor origin")]
    DegenerateRay,
    #[error("truncation must be positive, got {0}")]
    InvalidTruncation(f64),
    #[error("semantic confidence must be positive, got {0}")]
    NonPositiveConfidence(f32),
    #[error("embedding has {got} components, grid expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFiniteEmbedding,
    #[error("frame {index} does not match the intrinsics: {cause}")]
    FrameShape { index: usize, cause: String },
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// How a new TSDF sample is blended into a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlendMode {
    /// `φ_k = (φ_{k−1}·ω_{k−1} + φ·ω_k) / (ω_{k−1} + ω_k)`: the new sample is
    /// weighted by the updated weight.
    #[default]
    Paper,
    /// Conventional running average, the new sample carrying unit weight.
    UnitSample,
}

impl FromStr for BlendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "paper" => Ok(Self::Paper),
            "unit_sample" => Ok(Self::UnitSample),
            other => Err(format!("unknown blend mode '{other}' (expected paper | unit_sample)")),
        }
    }
}

impl fmt::Display for BlendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Paper => "paper",
            Self::UnitSample => "unit_sample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub blend_mode: BlendMode,
    pub downsample_step: f64,
}

/// A back-projected depth pixel in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    pub pixel: (u32, u32),
    pub point: Point3<f64>,
    pub color: [f32; 3],
    pub region: Option<i32>,
}

/// One TSDF observation applied to a voxel, in application order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsdfUpdate {
    pub key: VoxelKey,
    pub sample: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub rays_cast: usize,
    pub updates: usize,
    pub voxels_touched: usize,
    pub voxels_created: usize,
}

/// Back-projects valid depth pixels and keeps the first one (row-major) in
/// every `grid_step`-sized world cell.
pub fn downsample_depth(frame: &Frame, intrinsics: &CameraIntrinsics, grid_step: f64) -> Vec<DepthSample> {
    assert!(grid_step > 0.0, "downsample step must be positive");
    let mut occupied = HashSet::new();
    let mut out = Vec::new();
    for v in 0..frame.height {
        for u in 0..frame.width {
            let z = frame.depth_at(u, v);
            if !(z > 0.0) || !z.is_finite() {
                continue;
            }
            let cam = intrinsics.back_project(u as f64, v as f64, z as f64);
            let world = frame.pose * cam;
            let cell = (
                (world.x / grid_step).floor() as i64,
                (world.y / grid_step).floor() as i64,
                (world.z / grid_step).floor() as i64,
            );
            if !occupied.insert(cell) {
                continue;
            }
            let [r, g, b] = frame.color_at(u, v);
            out.push(DepthSample {
                pixel: (u, v),
                point: world,
                color: [r as f32 / 255.0, g as f32 / 255.0, b as f32 / 255.0],
                region: frame.region_at(u, v),
            });
        }
    }
    out
}

/// Projective signed distance of `voxel_center` to the surface along the ray
/// from `sensor_origin` through `surface_point`, positive in front of the
/// surface. `None` when the voxel lies more than `truncation` behind it;
/// otherwise the value is clamped to `[−τ, +τ]`.
pub fn tsdf_sample(
    sensor_origin: &Point3<f64>,
    surface_point: &Point3<f64>,
    voxel_center: &Point3<f64>,
    truncation: f64,
) -> Result<Option<f64>, FusionError> {
    if !(truncation > 0.0) {
        return Err(FusionError::InvalidTruncation(truncation));
    }
    let ray = surface_point - sensor_origin;
    let depth = ray.norm();
    if !(depth > 1e-12) {
        return Err(FusionError::DegenerateRay);
    }
    let along = (voxel_center - sensor_origin).dot(&ray) / depth;
    let sdf = depth - along;
    if sdf < -truncation {
        return Ok(None);
    }
    Ok(Some(sdf.min(truncation)))
}

/// Applies one sample to a `(φ, ω)` pair, returning the new pair.
pub fn blend_tsdf(tsdf: f64, weight: f64, sample: f64, max_weight: f64, mode: BlendMode) -> (f64, f64) {
    let new_weight = max_weight.min(weight + 1.0);
    let new_tsdf = match mode {
        BlendMode::Paper => (tsdf * weight + sample * new_weight) / (weight + new_weight),
        BlendMode::UnitSample => (tsdf * weight + sample) / (weight + 1.0),
    };
    (new_tsdf, new_weight)
}

/// TSDF samples for every band voxel of one ray, in traversal order.
pub fn ray_updates(
    sensor_origin: &Point3<f64>,
    surface_point: &Point3<f64>,
    voxel_size: f64,
    truncation: f64,
) -> Result<Vec<TsdfUpdate>, FusionError> {
    let ray = surface_point - sensor_origin;
    let depth = ray.norm();
    if !(depth > 1e-12) {
        return Err(FusionError::DegenerateRay);
    }
    let dir = ray / depth;
    let t_min = (depth - truncation).max(0.0);
    let keys = dda_traverse(sensor_origin, &dir, t_min, depth + truncation, voxel_size)?;
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        if let Some(sample) = tsdf_sample(sensor_origin, surface_point, &key.center(voxel_size), truncation)? {
            out.push(TsdfUpdate { key, sample });
        }
    }
    Ok(out)
}

/// Integrates pre-computed samples seen from `sensor_origin`. Ray traversal
/// may run in parallel; updates are applied in sample order so the result is
/// deterministic. When `log` is given every applied update is appended to it.
pub fn integrate_samples(
    grid: &mut SparseVoxelGrid,
    sensor_origin: &Point3<f64>,
    samples: &[DepthSample],
    blend_mode: BlendMode,
    log: Option<&mut Vec<TsdfUpdate>>,
) -> Result<IntegrationStats, FusionError> {
    let (s, tau) = (grid.voxel_size(), grid.truncation());
    let per_ray = |sample: &DepthSample| ray_updates(sensor_origin, &sample.point, s, tau);

    #[cfg(feature = "parallel")]
    let rays: Vec<Vec<TsdfUpdate>> = {
        use rayon::prelude::*;
        samples.par_iter().map(per_ray).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rays: Vec<Vec<TsdfUpdate>> = samples.iter().map(per_ray).collect::<Result<_, _>>()?;

    let max_weight = grid.max_weight() as f64;
    let mut stats = IntegrationStats { rays_cast: samples.len(), ..Default::default() };
    let mut touched = HashSet::new();
    let before = grid.len();
    let mut log = log;
    for update in rays.iter().flatten() {
        let voxel = grid.get_or_insert(update.key);
        let (tsdf, weight) =
            blend_tsdf(voxel.tsdf as f64, voxel.weight as f64, update.sample, max_weight, blend_mode);
        voxel.tsdf = tsdf as f32;
        voxel.weight = weight as f32;
        touched.insert(update.key);
        stats.updates += 1;
        if let Some(log) = log.as_deref_mut() {
            log.push(*update);
        }
    }
    stats.voxels_touched = touched.len();
    stats.voxels_created = grid.len() - before;
    Ok(stats)
}

/// Downsamples a frame and integrates it into the grid.
pub fn integrate_frame(
    grid: &mut SparseVoxelGrid,
    frame: &Frame,
    intrinsics: &CameraIntrinsics,
    params: &FusionParams,
) -> Result<IntegrationStats, FusionError> {
    check_frame(frame, intrinsics)?;
    let samples = downsample_depth(frame, intrinsics, params.downsample_step);
    integrate_samples(grid, &frame.camera_center(), &samples, params.blend_mode, None)
}

pub(crate) fn check_frame(frame: &Frame, intrinsics: &CameraIntrinsics) -> Result<(), FusionError> {
    crate::camera::check_rotation(frame.pose.rotation.to_rotation_matrix().matrix())?;
    if frame.width != intrinsics.width || frame.height != intrinsics.height {
        return Err(FusionError::FrameShape {
            index: frame.index,
            cause: format!(
                "{}x{} frame, {}x{} intrinsics",
                frame.width, frame.height, intrinsics.width, intrinsics.height
            ),
        });
    }
    if frame.depth.len() != intrinsics.pixel_count() {
        return Err(FusionError::FrameShape { index: frame.index, cause: "depth buffer size".into() });
    }
    Ok(())
}

/// Confidence-weighted running mean of the voxel feature:
/// `f̄ ← (c̄·f̄ + c·e) / (c̄ + c)`, `c̄ ← c̄ + c`.
pub fn fuse_semantics(voxel: &mut Voxel, embedding: &[f32], confidence: f32) -> Result<(), FusionError> {
    if !(confidence > 0.0) || !confidence.is_finite() {
        return Err(FusionError::NonPositiveConfidence(confidence));
    }
    if embedding.iter().any(|x| !x.is_finite()) {
        return Err(FusionError::NonFiniteEmbedding);
    }
    if !voxel.feature().is_empty() && voxel.feature().len() != embedding.len() {
        return Err(FusionError::DimensionMismatch { expected: voxel.feature().len(), got: embedding.len() });
    }
    let prev = voxel.confidence as f64;
    let total = prev + confidence as f64;
    let feature = voxel.feature_mut(embedding.len());
    for (f, &e) in feature.iter_mut().zip(embedding) {
        *f = ((prev * *f as f64 + confidence as f64 * e as f64) / total) as f32;
    }
    voxel.confidence = total as f32;
    Ok(())
}
