//! Sparse voxel storage keyed by integer coordinates.
//!
//! Each allocated voxel carries a TSDF value with its integration weight, a
//! confidence-weighted semantic feature, and the ids of the Gaussian
//! primitives whose mean falls inside it. Voxels are only created by
//! integration (or by edits moving a primitive into fresh space), so the map
//! stays proportional to observed surface area.

use std::io::{self, Read, Write};

use indexmap::IndexMap;
use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub type GaussianId = u64;

const SNAPSHOT_MAGIC: &[u8; 4] = b"GSFG";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid parameters: {0}")]
    InvalidParameters(String),
    #[error("degenerate ray direction")]
    DegenerateDirection,
    #[error("invalid ray segment: t_min={t_min} t_max={t_max}")]
    InvalidSegment { t_min: f64, t_max: f64 },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Integer voxel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn center(&self, voxel_size: f64) -> Point3<f64> {
        Point3::new(
            (self.i as f64 + 0.5) * voxel_size,
            (self.j as f64 + 0.5) * voxel_size,
            (self.k as f64 + 0.5) * voxel_size,
        )
    }

    pub fn offset(&self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }

    /// Largest per-axis index difference.
    pub fn chebyshev(&self, other: &Self) -> i32 {
        (self.i - other.i).abs().max((self.j - other.j).abs()).max((self.k - other.k).abs())
    }

    /// The 26 face, edge and corner neighbors.
    pub fn neighbors26(&self) -> impl Iterator<Item = VoxelKey> + '_ {
        (-1..=1).flat_map(move |di| {
            (-1..=1).flat_map(move |dj| {
                (-1..=1).filter_map(move |dk| {
                    if di == 0 && dj == 0 && dk == 0 {
                        None
                    } else {
                        Some(self.offset(di, dj, dk))
                    }
                })
            })
        })
    }
}

/// Voxel containing `p`: `floor(p / s)` componentwise. A point on a boundary
/// belongs to the cell whose lower face it lies on.
pub fn world_to_voxel(p: &Point3<f64>, voxel_size: f64) -> VoxelKey {
    VoxelKey::new(
        (p.x / voxel_size).floor() as i32,
        (p.y / voxel_size).floor() as i32,
        (p.z / voxel_size).floor() as i32,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    pub weight: f32,
    pub tsdf: f32,
    pub confidence: f32,
    // Empty until the first semantic observation; an empty vector is the zero feature.
    feature: Vec<f32>,
    pub gaussians: Vec<GaussianId>,
}

impl Voxel {
    pub fn new(truncation: f32) -> Self {
        Self { weight: 0.0, tsdf: truncation, confidence: 0.0, feature: Vec::new(), gaussians: Vec::new() }
    }

    /// Fused semantic feature; empty when the voxel has never been observed
    /// semantically.
    pub fn feature(&self) -> &[f32] {
        &self.feature
    }

    pub fn has_semantics(&self) -> bool {
        self.confidence > 0.0 && !self.feature.is_empty()
    }

    pub(crate) fn feature_mut(&mut self, dim: usize) -> &mut Vec<f32> {
        if self.feature.is_empty() {
            self.feature.resize(dim, 0.0);
        }
        &mut self.feature
    }
}

#[derive(Debug, Clone)]
pub struct SparseVoxelGrid {
    voxel_size: f64,
    truncation: f64,
    max_weight: f32,
    feature_dim: usize,
    voxels: IndexMap<VoxelKey, Voxel>,
}

impl SparseVoxelGrid {
    pub fn new(voxel_size: f64, truncation: f64, max_weight: f32, feature_dim: usize) -> Result<Self, GridError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(GridError::InvalidParameters(format!("voxel size {voxel_size} must be positive")));
        }
        if !(truncation >= voxel_size && truncation.is_finite()) {
            return Err(GridError::InvalidParameters(format!(
                "truncation {truncation} must be at least the voxel size {voxel_size}"
            )));
        }
        if !(max_weight > 0.0) {
            return Err(GridError::InvalidParameters(format!("max weight {max_weight} must be positive")));
        }
        Ok(Self { voxel_size, truncation, max_weight, feature_dim, voxels: IndexMap::new() })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn max_weight(&self) -> f32 {
        self.max_weight
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Fixes the feature dimension once the first embedding is seen. Fails if
    /// semantic voxels of another dimension already exist.
    pub fn set_feature_dim(&mut self, dim: usize) -> Result<(), GridError> {
        if let Some((key, _)) = self.semantic_voxels().find(|(_, v)| v.feature().len() != dim) {
            return Err(GridError::InvalidParameters(format!(
                "voxel {key:?} has a feature of another dimension than {dim}"
            )));
        }
        self.feature_dim = dim;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn key_of(&self, p: &Point3<f64>) -> VoxelKey {
        world_to_voxel(p, self.voxel_size)
    }

    pub fn center_of(&self, key: &VoxelKey) -> Point3<f64> {
        key.center(self.voxel_size)
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&Voxel> {
        self.voxels.get(key)
    }

    pub fn get_mut(&mut self, key: &VoxelKey) -> Option<&mut Voxel> {
        self.voxels.get_mut(key)
    }

    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.voxels.contains_key(key)
    }

    /// Returns the voxel at `key`, allocating `{ω=0, φ=+τ, c̄=0, f̄=0}` if absent.
    pub fn get_or_insert(&mut self, key: VoxelKey) -> &mut Voxel {
        let tau = self.truncation as f32;
        self.voxels.entry(key).or_insert_with(|| Voxel::new(tau))
    }

    /// Iterates voxels in allocation order.
    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &Voxel)> {
        self.voxels.iter()
    }

    /// Keys in ascending `(i, j, k)` order.
    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<VoxelKey> = self.voxels.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Voxels that carry a semantic feature.
    pub fn semantic_voxels(&self) -> impl Iterator<Item = (&VoxelKey, &Voxel)> {
        self.voxels.iter().filter(|(_, v)| v.has_semantics())
    }

    /// Writes the little-endian binary snapshot. Voxels are written in
    /// ascending key order so equal grids give identical bytes.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&self.voxel_size.to_le_bytes())?;
        w.write_all(&self.truncation.to_le_bytes())?;
        w.write_all(&(self.feature_dim as u32).to_le_bytes())?;
        w.write_all(&(self.voxels.len() as u64).to_le_bytes())?;
        let zeros = vec![0f32; self.feature_dim];
        for key in self.sorted_keys() {
            let v = &self.voxels[&key];
            for c in [key.i, key.j, key.k] {
                w.write_all(&c.to_le_bytes())?;
            }
            for x in [v.weight, v.tsdf, v.confidence] {
                w.write_all(&x.to_le_bytes())?;
            }
            let feature = if v.feature.is_empty() { &zeros } else { &v.feature };
            if feature.len() != self.feature_dim {
                return Err(GridError::Snapshot(format!(
                    "voxel {key:?} has feature length {} (expected {})",
                    feature.len(),
                    self.feature_dim
                )));
            }
            for x in feature {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&(v.gaussians.len() as u32).to_le_bytes())?;
            for id in &v.gaussians {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a snapshot written by [`write_snapshot`](Self::write_snapshot).
    /// The weight cap is not part of the format and must be supplied.
    pub fn read_snapshot<R: Read>(mut r: R, max_weight: f32) -> Result<Self, GridError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(GridError::Snapshot("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(GridError::Snapshot(format!("unsupported version {version}")));
        }
        let voxel_size = f64::from_le_bytes(read_array(&mut r)?);
        let truncation = f64::from_le_bytes(read_array(&mut r)?);
        let dim = read_u32(&mut r)? as usize;
        let count = u64::from_le_bytes(read_array(&mut r)?);
        let mut grid = Self::new(voxel_size, truncation, max_weight, dim)?;
        for _ in 0..count {
            let i = i32::from_le_bytes(read_array(&mut r)?);
            let j = i32::from_le_bytes(read_array(&mut r)?);
            let k = i32::from_le_bytes(read_array(&mut r)?);
            let weight = read_f32(&mut r)?;
            let tsdf = read_f32(&mut r)?;
            let confidence = read_f32(&mut r)?;
            let mut feature = Vec::with_capacity(dim);
            for _ in 0..dim {
                feature.push(read_f32(&mut r)?);
            }
            if confidence == 0.0 {
                if feature.iter().any(|&x| x != 0.0) {
                    return Err(GridError::Snapshot(format!("voxel ({i},{j},{k}) has a feature but zero confidence")));
                }
                feature.clear();
            }
            let n = read_u32(&mut r)? as usize;
            let mut gaussians = Vec::with_capacity(n);
            for _ in 0..n {
                gaussians.push(u64::from_le_bytes(read_array(&mut r)?));
            }
            let key = VoxelKey::new(i, j, k);
            let voxel = Voxel { weight, tsdf, confidence, feature, gaussians };
            if grid.voxels.insert(key, voxel).is_some() {
                return Err(GridError::Snapshot(format!("duplicate voxel {key:?}")));
            }
        }
        Ok(grid)
    }
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f32<R: Read>(r: &mut R) -> io::Result<f32> {
    Ok(f32::from_le_bytes(read_array(r)?))
}

/// Enumerates the voxels crossed by the segment `origin + t·dir`,
/// `t ∈ [t_min, t_max]`, in increasing `t`, each exactly once.
///
/// Amanatides-Woo stepping. When several axes cross a boundary at exactly the
/// same `t` (the ray passes through an edge or corner) they are stepped
/// together, so consecutive keys may differ on more than one axis. A boundary
/// reached at `t_max` itself does not add the next cell.
pub fn dda_traverse(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    t_min: f64,
    t_max: f64,
    voxel_size: f64,
) -> Result<Vec<VoxelKey>, GridError> {
    if !(voxel_size > 0.0) {
        return Err(GridError::InvalidParameters(format!("voxel size {voxel_size} must be positive")));
    }
    let norm = dir.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(GridError::DegenerateDirection);
    }
    if !(t_min <= t_max) || !t_min.is_finite() || !t_max.is_finite() {
        return Err(GridError::InvalidSegment { t_min, t_max });
    }

    let start = origin + dir * t_min;
    let mut key = [
        (start.x / voxel_size).floor() as i64,
        (start.y / voxel_size).floor() as i64,
        (start.z / voxel_size).floor() as i64,
    ];
    let end = origin + dir * t_max;
    let end_key = [
        (end.x / voxel_size).floor() as i64,
        (end.y / voxel_size).floor() as i64,
        (end.z / voxel_size).floor() as i64,
    ];
    let to_key = |k: &[i64; 3]| VoxelKey::new(k[0] as i32, k[1] as i32, k[2] as i32);

    let mut out = vec![to_key(&key)];
    if t_max == t_min {
        return Ok(out);
    }

    let o = [origin.x, origin.y, origin.z];
    let d = [dir.x, dir.y, dir.z];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let boundary_t = |axis: usize, k: i64, step: i64| -> f64 {
        let plane = if step > 0 { (k + 1) as f64 } else { k as f64 } * voxel_size;
        (plane - o[axis]) / d[axis]
    };
    for a in 0..3 {
        if d[a] > 0.0 {
            step[a] = 1;
        } else if d[a] < 0.0 {
            step[a] = -1;
        }
        if step[a] != 0 {
            t_next[a] = boundary_t(a, key[a], step[a]);
        }
    }

    // Ignore boundary crossings within a hair of the segment end.
    let end_eps = 1e-9 * voxel_size / norm;
    // Upper bound on the number of steps, guards against runaway loops.
    let budget: i64 = (0..3).map(|a| (end_key[a] - key[a]).abs() + 2).sum();
    for _ in 0..budget {
        let t = t_next[0].min(t_next[1]).min(t_next[2]);
        if !(t < t_max - end_eps) {
            break;
        }
        for a in 0..3 {
            if t_next[a] == t {
                key[a] += step[a];
                t_next[a] = boundary_t(a, key[a], step[a]);
            }
        }
        out.push(to_key(&key));
    }
    Ok(out)
}
