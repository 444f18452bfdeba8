//! Gaussian primitives anchored to voxels: initialization from keyframe
//! samples, TSDF-gated admission with overlap rejection, and pruning.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Isometry3, Matrix3, Point3, SymmetricEigen};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::fusion::DepthSample;
use crate::ply::PlyGaussian;
use crate::spatial::PointIndex;
use crate::sparse_grid::{world_to_voxel, GaussianId, SparseVoxelGrid, VoxelKey};

/// Opacity given to every new primitive.
pub const INITIAL_OPACITY: f64 = 0.5;
/// Smallest covariance eigenvalue kept after the k-NN estimate, m².
pub const EIGENVALUE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("unknown primitive ids: {0:?}")]
    UnknownIds(Vec<GaussianId>),
    #[error("inconsistent map: {0}")]
    Inconsistent(String),
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
}

/// A live primitive. Geometry and color are held at `f32` precision so that
/// PLY round trips reproduce the same home voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub id: GaussianId,
    pub mean: Point3<f64>,
    pub cov: Matrix3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
    pub home_voxel: VoxelKey,
    pub source_keyframe: usize,
}

/// A primitive proposed from a keyframe sample, before admission.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCandidate {
    pub mean: Point3<f64>,
    pub cov: Matrix3<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
    pub source_keyframe: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub frame_id: usize,
    /// Camera-to-world.
    pub pose: Isometry3<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl Keyframe {
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }
}

pub fn is_keyframe(frame_index: usize, interval: usize) -> bool {
    assert!(interval >= 1, "keyframe interval must be at least 1");
    frame_index.is_multiple_of(interval)
}

fn q32(x: f64) -> f64 {
    x as f32 as f64
}

fn quantize_point(p: &Point3<f64>) -> Point3<f64> {
    p.map(q32)
}

fn quantize_cov(c: &Matrix3<f64>) -> Matrix3<f64> {
    let s = (c + c.transpose()) * 0.5;
    s.map(q32)
}

/// Symmetrizes `c` and lifts every eigenvalue to at least `floor`.
pub fn regularize_covariance(c: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let m = eig.eigenvectors * Matrix3::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (m + m.transpose()) * 0.5
}

/// One candidate per sample. The covariance is the sample covariance of the
/// sample and its `k_neighbors` nearest neighbors, with eigenvalues floored at
/// [`EIGENVALUE_FLOOR`]. With fewer than `k_neighbors + 1` samples every
/// candidate is isotropic with standard deviation `voxel_size / 2`.
pub fn init_gaussians(
    samples: &[DepthSample],
    k_neighbors: usize,
    voxel_size: f64,
    source_keyframe: usize,
) -> Vec<GaussianCandidate> {
    let points: Vec<Point3<f64>> = samples.iter().map(|s| s.point).collect();
    let isotropic = Matrix3::identity() * (voxel_size / 2.0).powi(2);
    let index = (points.len() > k_neighbors).then(|| PointIndex::new(&points, voxel_size));
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cov = match &index {
                None => isotropic,
                Some(index) => {
                    let mut hood = index.knn(&s.point, k_neighbors, Some(i));
                    hood.push(i);
                    let n = hood.len() as f64;
                    let mean = hood.iter().fold(nalgebra::Vector3::zeros(), |a, &j| a + points[j].coords) / n;
                    let mut c = Matrix3::zeros();
                    for &j in &hood {
                        let d = points[j].coords - mean;
                        c += d * d.transpose();
                    }
                    regularize_covariance(&(c / n), EIGENVALUE_FLOOR)
                }
            };
            GaussianCandidate {
                mean: s.point,
                cov,
                opacity: INITIAL_OPACITY,
                color: [s.color[0] as f64, s.color[1] as f64, s.color[2] as f64],
                source_keyframe,
            }
        })
        .collect()
}

type Cell = (i64, i64, i64);

/// The live primitive set with a spatial hash for overlap queries.
#[derive(Debug, Clone)]
pub struct GaussianMap {
    voxel_size: f64,
    hash_cell: f64,
    next_id: GaussianId,
    primitives: BTreeMap<GaussianId, GaussianPrimitive>,
    buckets: HashMap<Cell, Vec<GaussianId>>,
}

impl GaussianMap {
    /// `hash_cell` sizes the overlap hash; use the overlap radius.
    pub fn new(voxel_size: f64, hash_cell: f64) -> Self {
        assert!(voxel_size > 0.0 && hash_cell > 0.0);
        Self { voxel_size, hash_cell, next_id: 0, primitives: BTreeMap::new(), buckets: HashMap::new() }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn get(&self, id: GaussianId) -> Option<&GaussianPrimitive> {
        self.primitives.get(&id)
    }

    pub fn contains(&self, id: GaussianId) -> bool {
        self.primitives.contains_key(&id)
    }

    /// Primitives in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &GaussianPrimitive> {
        self.primitives.values()
    }

    pub fn ids(&self) -> Vec<GaussianId> {
        self.primitives.keys().copied().collect()
    }

    pub fn next_id(&self) -> GaussianId {
        self.next_id
    }

    fn cell(&self, p: &Point3<f64>) -> Cell {
        let c = self.hash_cell;
        ((p.x / c).floor() as i64, (p.y / c).floor() as i64, (p.z / c).floor() as i64)
    }

    /// Whether any live primitive's mean is within `radius` of `p`.
    pub fn has_neighbor_within(&self, p: &Point3<f64>, radius: f64) -> bool {
        let reach = (radius / self.hash_cell).ceil() as i64;
        let c = self.cell(p);
        let r2 = radius * radius;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        if bucket.iter().any(|id| (self.primitives[id].mean - p).norm_squared() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    fn hash_insert(&mut self, id: GaussianId, p: &Point3<f64>) {
        let cell = self.cell(p);
        self.buckets.entry(cell).or_default().push(id);
    }

    fn hash_remove(&mut self, id: GaussianId, p: &Point3<f64>) {
        let cell = self.cell(p);
        if let Some(bucket) = self.buckets.get_mut(&cell) {
            bucket.retain(|&x| x != id);
            if bucket.is_empty() {
                self.buckets.remove(&cell);
            }
        }
    }

    /// Inserts a primitive and links it into its home voxel, creating the
    /// voxel if needed. Returns the new id.
    pub fn insert(&mut self, grid: &mut SparseVoxelGrid, candidate: &GaussianCandidate) -> GaussianId {
        let id = self.next_id;
        self.next_id += 1;
        let mean = quantize_point(&candidate.mean);
        let home = world_to_voxel(&mean, self.voxel_size);
        let prim = GaussianPrimitive {
            id,
            mean,
            cov: quantize_cov(&candidate.cov),
            opacity: q32(candidate.opacity),
            color: candidate.color.map(q32),
            home_voxel: home,
            source_keyframe: candidate.source_keyframe,
        };
        self.hash_insert(id, &mean);
        self.primitives.insert(id, prim);
        grid.get_or_insert(home).gaussians.push(id);
        id
    }

    /// Restores a primitive with a fixed id, e.g. when loading a saved map.
    pub fn restore(&mut self, grid: &mut SparseVoxelGrid, prim: GaussianPrimitive) -> Result<(), MapError> {
        if self.primitives.contains_key(&prim.id) {
            return Err(MapError::InvalidPrimitive(format!("duplicate id {}", prim.id)));
        }
        let home = world_to_voxel(&prim.mean, self.voxel_size);
        if home != prim.home_voxel {
            return Err(MapError::InvalidPrimitive(format!("id {} has a stale home voxel", prim.id)));
        }
        let voxel = grid.get_or_insert(home);
        if !voxel.gaussians.contains(&prim.id) {
            voxel.gaussians.push(prim.id);
        }
        self.next_id = self.next_id.max(prim.id + 1);
        self.hash_insert(prim.id, &prim.mean);
        self.primitives.insert(prim.id, prim);
        Ok(())
    }

    /// Removes a primitive from the map and its home voxel.
    pub fn remove(&mut self, grid: &mut SparseVoxelGrid, id: GaussianId) -> Option<GaussianPrimitive> {
        let prim = self.primitives.remove(&id)?;
        self.hash_remove(id, &prim.mean);
        if let Some(v) = grid.get_mut(&prim.home_voxel) {
            v.gaussians.retain(|&x| x != id);
        }
        Some(prim)
    }

    /// Moves a primitive, relinking it to its new home voxel.
    pub fn update_geometry(
        &mut self,
        grid: &mut SparseVoxelGrid,
        id: GaussianId,
        mean: Point3<f64>,
        cov: Matrix3<f64>,
    ) -> Result<(), MapError> {
        let old = self.primitives.get(&id).ok_or(MapError::UnknownIds(vec![id]))?.clone();
        let mean = quantize_point(&mean);
        let home = world_to_voxel(&mean, self.voxel_size);
        self.hash_remove(id, &old.mean);
        self.hash_insert(id, &mean);
        if home != old.home_voxel {
            if let Some(v) = grid.get_mut(&old.home_voxel) {
                v.gaussians.retain(|&x| x != id);
            }
            grid.get_or_insert(home).gaussians.push(id);
        }
        let prim = self.primitives.get_mut(&id).expect("checked above");
        prim.mean = mean;
        prim.cov = quantize_cov(&cov);
        prim.home_voxel = home;
        Ok(())
    }

    pub fn to_ply(&self) -> Vec<PlyGaussian> {
        self.iter()
            .map(|p| PlyGaussian {
                id: p.id as u32,
                mean: p.mean,
                cov: p.cov,
                opacity: p.opacity,
                color: p.color.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8),
            })
            .collect()
    }
}

/// Admits `candidate` when its home voxel exists with `φ > gamma` and no live
/// primitive lies within `overlap_radius`. Returns the new id on admission.
pub fn admit(
    map: &mut GaussianMap,
    grid: &mut SparseVoxelGrid,
    candidate: &GaussianCandidate,
    gamma: f64,
    overlap_radius: f64,
) -> Option<GaussianId> {
    let mean = quantize_point(&candidate.mean);
    let home = world_to_voxel(&mean, map.voxel_size);
    let voxel = grid.get(&home)?;
    if !(voxel.tsdf as f64 > gamma) {
        return None;
    }
    if map.has_neighbor_within(&mean, overlap_radius) {
        return None;
    }
    Some(map.insert(grid, candidate))
}

/// Removes every primitive whose home voxel has `φ < theta`. Returns the count.
pub fn prune(grid: &mut SparseVoxelGrid, map: &mut GaussianMap, theta: f64) -> usize {
    let doomed: Vec<GaussianId> = map
        .iter()
        .filter(|p| grid.get(&p.home_voxel).is_some_and(|v| (v.tsdf as f64) < theta))
        .map(|p| p.id)
        .collect();
    for id in &doomed {
        map.remove(grid, *id);
    }
    doomed.len()
}

/// Union of the Gaussian lists of `keys`, ascending and deduplicated.
pub fn primitives_in_voxels<'a>(grid: &SparseVoxelGrid, keys: impl IntoIterator<Item = &'a VoxelKey>) -> Vec<GaussianId> {
    let mut ids = BTreeSet::new();
    for key in keys {
        if let Some(v) = grid.get(key) {
            ids.extend(v.gaussians.iter().copied());
        }
    }
    ids.into_iter().collect()
}

/// Checks that every live primitive is listed exactly once in its home voxel
/// and every listed id is live and at home there.
pub fn check_consistency(grid: &SparseVoxelGrid, map: &GaussianMap) -> Result<(), MapError> {
    let mut listed = 0usize;
    for (key, voxel) in grid.iter() {
        for id in &voxel.gaussians {
            let prim = map.get(*id).ok_or_else(|| MapError::Inconsistent(format!("voxel {key:?} lists dead id {id}")))?;
            if prim.home_voxel != *key {
                return Err(MapError::Inconsistent(format!("id {id} listed in {key:?}, home is {:?}", prim.home_voxel)));
            }
            listed += 1;
        }
    }
    for prim in map.iter() {
        if world_to_voxel(&prim.mean, map.voxel_size) != prim.home_voxel {
            return Err(MapError::Inconsistent(format!("id {} home voxel is stale", prim.id)));
        }
        let voxel = grid
            .get(&prim.home_voxel)
            .ok_or_else(|| MapError::Inconsistent(format!("id {} home voxel is missing", prim.id)))?;
        if voxel.gaussians.iter().filter(|&&x| x == prim.id).count() != 1 {
            return Err(MapError::Inconsistent(format!("id {} not listed once in its home voxel", prim.id)));
        }
    }
    if listed != map.len() {
        return Err(MapError::Inconsistent(format!("{listed} listed ids for {} live primitives", map.len())));
    }
    Ok(())
}
