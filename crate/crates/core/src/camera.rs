//! Pinhole intrinsics and rigid pose helpers.

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `RᵀR = I` and `det R = 1` for a pose to count as rigid.
pub const RIGID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("pose is not a rigid transform: {0}")]
    NotRigid(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, PoseError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(PoseError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(PoseError::InvalidIntrinsics("zero image size".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(PoseError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Back-projects pixel `(u, v)` at z-depth `depth` into the camera frame.
    /// Pixel centers sit at integer coordinates.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Whether a projected coordinate falls on the image (pixel centers at integers).
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }
}

/// Converts a 4x4 homogeneous matrix into an isometry, rejecting anything
/// that is not a proper rigid transform.
pub fn rigid_from_matrix(m: &Matrix4<f64>) -> Result<Isometry3<f64>, PoseError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(PoseError::NotRigid("non-finite entries".into()));
    }
    let last = m.row(3);
    if last[0].abs() > RIGID_TOLERANCE
        || last[1].abs() > RIGID_TOLERANCE
        || last[2].abs() > RIGID_TOLERANCE
        || (last[3] - 1.0).abs() > RIGID_TOLERANCE
    {
        return Err(PoseError::NotRigid("last row is not [0 0 0 1]".into()));
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    check_rotation(&r)?;
    let t = m.fixed_view::<3, 1>(0, 3).into_owned();
    let rot = Rotation3::from_matrix_unchecked(r);
    Ok(Isometry3::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&rot)))
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<(), PoseError> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > RIGID_TOLERANCE {
        return Err(PoseError::NotRigid(format!("RᵀR deviates from identity by {err:.3e}")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > RIGID_TOLERANCE {
        return Err(PoseError::NotRigid(format!("det R = {det}")));
    }
    Ok(())
}

/// Camera-to-world pose looking from `eye` toward `target` with `up` as the
/// world up direction. Camera axes follow the x-right, y-down, z-forward
/// convention.
pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>, up: &nalgebra::Vector3<f64>) -> Isometry3<f64> {
    let forward = (target - eye).normalize();
    let right = forward.cross(up).normalize();
    let down = forward.cross(&right);
    let r = Matrix3::from_columns(&[right, down, forward]);
    let rot = Rotation3::from_matrix_unchecked(r);
    Isometry3::from_parts(Translation3::from(eye.coords), UnitQuaternion::from_rotation_matrix(&rot))
}
