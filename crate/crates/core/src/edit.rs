//! Structured edits of query results and oriented object descriptors.

use nalgebra::{Matrix3, Point3, Rotation3, SymmetricEigen, Unit, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::gaussian_map::GaussianMap;
use crate::query::QueryResult;
use crate::sparse_grid::{GaussianId, SparseVoxelGrid};

#[derive(Debug, Error, PartialEq)]
pub enum EditError {
    #[error("cluster {target} does not exist ({count} clusters)")]
    NoSuchCluster { target: usize, count: usize },
    #[error("stale primitive ids: {0:?}")]
    StaleIds(Vec<GaussianId>),
    #[error("nothing to edit")]
    Empty,
}

/// Center, extents along the principal axes (descending), and roll, pitch,
/// yaw of the principal frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectDescriptor {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub angles: [f64; 3],
    #[serde(skip)]
    pub axes: Matrix3<f64>,
}

impl ObjectDescriptor {
    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(&self.center);
        out[3..6].copy_from_slice(&self.dims);
        out[6..].copy_from_slice(&self.angles);
        out
    }
}

/// Relative eigenvalue gap below which two principal directions are treated
/// as interchangeable.
const DEGENERATE_GAP: f64 = 1e-9;

/// Principal axes as columns, ordered by eigenvalue descending, with
/// degenerate subspaces snapped toward world axes.
fn principal_axes(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut axes: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let scale = vals[0].abs().max(1e-300);
    let same = |a: f64, b: f64| (a - b).abs() <= DEGENERATE_GAP * scale;
    let world = [Vector3::x(), Vector3::y(), Vector3::z()];
    if same(vals[0], vals[2]) {
        axes = world.to_vec();
    } else if same(vals[0], vals[1]) || same(vals[1], vals[2]) {
        let (pair, unique) = if same(vals[0], vals[1]) { ([0, 1], 2) } else { ([1, 2], 0) };
        let n = axes[unique];
        // world axis with the largest projection onto the degenerate plane
        let proj = |e: &Vector3<f64>| e - n * n.dot(e);
        let e = world.iter().max_by(|a, b| proj(a).norm().total_cmp(&proj(b).norm())).unwrap();
        let first = proj(e).normalize();
        axes[pair[0]] = first;
        axes[pair[1]] = n.cross(&first).normalize();
    }
    Matrix3::from_columns(&axes)
}

/// Oriented bounding box of `points` from their principal axes. Extents are
/// sorted descending; equal extents keep world-axis order. Each axis is
/// signed so its largest component is positive, then the frame is made
/// right-handed by flipping the last axis if needed. `None` for no points.
pub fn object_descriptor(points: &[Point3<f64>]) -> Option<ObjectDescriptor> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    if cov.abs().max() == 0.0 {
        return Some(ObjectDescriptor {
            center: [mean.x, mean.y, mean.z],
            dims: [0.0; 3],
            angles: [0.0; 3],
            axes: Matrix3::identity(),
        });
    }
    let axes = principal_axes(&cov);

    let mut boxes: Vec<(f64, f64, Vector3<f64>, usize)> = (0..3)
        .map(|k| {
            let a: Vector3<f64> = axes.column(k).into_owned();
            let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let t = a.dot(&(p.coords - mean));
                (lo.min(t), hi.max(t))
            });
            let dominant = (0..3).max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs()).then(j.cmp(&i))).unwrap();
            (hi - lo, (hi + lo) / 2.0, a, dominant)
        })
        .collect();
    let tol = 1e-9 * boxes.iter().map(|b| b.0).fold(0.0, f64::max);
    boxes.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= tol {
            a.3.cmp(&b.3)
        } else {
            b.0.total_cmp(&a.0)
        }
    });

    let mut center = mean;
    let mut cols = Vec::with_capacity(3);
    for (_, mid, a, dominant) in &boxes {
        center += a * *mid;
        cols.push(if a[*dominant] < 0.0 { -a } else { *a });
    }
    let mut r = Matrix3::from_columns(&cols);
    if r.determinant() < 0.0 {
        r.set_column(2, &(-r.column(2)));
    }
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(r).euler_angles();
    Some(ObjectDescriptor {
        center: [center.x, center.y, center.z],
        dims: [boxes[0].0, boxes[1].0, boxes[2].0],
        angles: [roll, pitch, yaw],
        axes: r,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EditVerb {
    Translate(Vector3<f64>),
    /// Rotation about the centroid of the edited means.
    Rotate(Rotation3<f64>),
    Delete,
}

impl EditVerb {
    pub fn rotate_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::Rotate(Rotation3::from_euler_angles(roll, pitch, yaw))
    }

    pub fn rotate_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        Self::Rotate(Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Translate(_) => "translate",
            Self::Rotate(_) => "rotate",
            Self::Delete => "delete",
        }
    }
}

/// An edit aimed at one cluster of a query result.
#[derive(Debug, Clone, PartialEq)]
pub struct EditCommand {
    pub target: usize,
    pub verb: EditVerb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditReport {
    pub verb: String,
    pub target: usize,
    pub ids: Vec<GaussianId>,
    pub centroid: [f64; 3],
}

pub fn apply_edit(
    map: &mut GaussianMap,
    grid: &mut SparseVoxelGrid,
    result: &QueryResult,
    command: &EditCommand,
) -> Result<EditReport, EditError> {
    let cluster = result
        .clusters
        .get(command.target)
        .ok_or(EditError::NoSuchCluster { target: command.target, count: result.clusters.len() })?;
    let mut report = edit_ids(map, grid, &cluster.ids, &command.verb)?;
    report.target = command.target;
    Ok(report)
}

/// Applies `verb` to primitives `ids`. Voxel TSDF and semantic fields are left
/// untouched; home voxels and voxel lists follow the moved means.
pub fn edit_ids(
    map: &mut GaussianMap,
    grid: &mut SparseVoxelGrid,
    ids: &[GaussianId],
    verb: &EditVerb,
) -> Result<EditReport, EditError> {
    if ids.is_empty() {
        return Err(EditError::Empty);
    }
    let missing: Vec<GaussianId> = ids.iter().copied().filter(|&id| !map.contains(id)).collect();
    if !missing.is_empty() {
        return Err(EditError::StaleIds(missing));
    }
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let centroid =
        ids.iter().fold(Vector3::zeros(), |a, &id| a + map.get(id).expect("checked").mean.coords) / ids.len() as f64;
    match verb {
        EditVerb::Translate(t) => {
            for &id in &ids {
                let p = map.get(id).expect("checked").clone();
                map.update_geometry(grid, id, p.mean + t, p.cov).expect("live id");
            }
        }
        EditVerb::Rotate(r) => {
            let c = Point3::from(centroid);
            for &id in &ids {
                let p = map.get(id).expect("checked").clone();
                let mean = c + r * (p.mean - c);
                let cov = r.matrix() * p.cov * r.matrix().transpose();
                map.update_geometry(grid, id, mean, cov).expect("live id");
            }
        }
        EditVerb::Delete => {
            for &id in &ids {
                map.remove(grid, id);
            }
        }
    }
    Ok(EditReport { verb: verb.name().into(), target: 0, ids, centroid: [centroid.x, centroid.y, centroid.z] })
}
