//! Posed RGB-D frames with per-region embeddings, on-disk datasets, and the
//! deterministic synthetic scene generator.

mod io;
pub mod synth;

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{Isometry3, Point3};
use thiserror::Error;

use crate::camera::PoseError;

pub use io::{read_region_table, write_dataset, write_region_table, Dataset, FrameIter};
pub use synth::{synth_scene, ObjectSpec, SceneSpec, Shape, SupportSpec, SyntheticScene};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing intrinsics file {0}")]
    MissingIntrinsics(PathBuf),
    #[error("frame {index}: {cause}")]
    Frame { index: usize, cause: String },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("ground truth: {0}")]
    GroundTruth(String),
    #[error("scene specification: {0}")]
    Scene(String),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DatasetError {
    pub(crate) fn frame(index: usize, cause: impl Into<String>) -> Self {
        Self::Frame { index, cause: cause.into() }
    }
}

/// One region's semantic embedding and the extractor's confidence in it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionEntry {
    pub embedding: Vec<f32>,
    pub confidence: f32,
}

pub type RegionTable = BTreeMap<i32, RegionEntry>;

/// A posed RGB-D frame. Pixel buffers are row-major.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub width: u32,
    pub height: u32,
    /// RGB, 3 bytes per pixel.
    pub color: Vec<u8>,
    /// Meters, 0 marks an invalid pixel.
    pub depth: Vec<f32>,
    /// Camera-to-world.
    pub pose: Isometry3<f64>,
    /// Region id per pixel, -1 for none. Empty when the frame carries no
    /// semantics.
    pub region_map: Vec<i32>,
    pub region_table: RegionTable,
}

impl Frame {
    /// Checks buffer sizes, region references and embedding finiteness.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.width as usize * self.height as usize;
        if self.color.len() != 3 * n {
            return Err(DatasetError::frame(self.index, format!("color has {} bytes, expected {}", self.color.len(), 3 * n)));
        }
        if self.depth.len() != n {
            return Err(DatasetError::frame(self.index, format!("depth has {} pixels, expected {n}", self.depth.len())));
        }
        if !self.region_map.is_empty() && self.region_map.len() != n {
            return Err(DatasetError::frame(
                self.index,
                format!("region map has {} pixels, expected {n}", self.region_map.len()),
            ));
        }
        for &id in &self.region_map {
            if id != -1 && !self.region_table.contains_key(&id) {
                return Err(DatasetError::frame(self.index, format!("region {id} has no table entry")));
            }
        }
        let mut dim = None;
        for (id, entry) in &self.region_table {
            if entry.embedding.iter().any(|x| !x.is_finite()) {
                return Err(DatasetError::frame(self.index, format!("region {id} embedding is not finite")));
            }
            if !(entry.confidence > 0.0) {
                return Err(DatasetError::frame(self.index, format!("region {id} confidence must be positive")));
            }
            match dim {
                None => dim = Some(entry.embedding.len()),
                Some(d) if d != entry.embedding.len() => {
                    return Err(DatasetError::frame(self.index, "region embeddings differ in dimension"));
                }
                _ => {}
            }
        }
        crate::camera::check_rotation(self.pose.rotation.to_rotation_matrix().matrix())?;
        Ok(())
    }

    pub fn depth_at(&self, u: u32, v: u32) -> f32 {
        self.depth[(v * self.width + u) as usize]
    }

    pub fn color_at(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v * self.width + u) as usize;
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    /// Region id at a pixel, `None` for unlabeled pixels or frames without semantics.
    pub fn region_at(&self, u: u32, v: u32) -> Option<i32> {
        if self.region_map.is_empty() {
            return None;
        }
        let id = self.region_map[(v * self.width + u) as usize];
        (id >= 0).then_some(id)
    }

    pub fn has_semantics(&self) -> bool {
        !self.region_map.is_empty()
    }

    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }
}

/// Labeled surface points plus the text embedding of every label.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSegmentation {
    pub points: Vec<Point3<f64>>,
    pub labels: Vec<u32>,
    pub label_embeddings: Vec<Vec<f32>>,
    pub label_names: Vec<String>,
}

impl GroundTruthSegmentation {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.points.len() != self.labels.len() {
            return Err(DatasetError::GroundTruth(format!(
                "{} points but {} labels",
                self.points.len(),
                self.labels.len()
            )));
        }
        let n = self.label_embeddings.len() as u32;
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= n) {
            return Err(DatasetError::GroundTruth(format!("label {bad} has no embedding ({n} labels)")));
        }
        if !self.label_names.is_empty() && self.label_names.len() != self.label_embeddings.len() {
            return Err(DatasetError::GroundTruth("label name count differs from embedding count".into()));
        }
        Ok(())
    }

    pub fn label_count(&self) -> usize {
        self.label_embeddings.len()
    }

    pub fn points_of(&self, label: u32) -> impl Iterator<Item = &Point3<f64>> {
        self.points.iter().zip(&self.labels).filter(move |(_, &l)| l == label).map(|(p, _)| p)
    }

    /// Looks a label up by name, case-insensitively.
    pub fn label_by_name(&self, name: &str) -> Option<u32> {
        self.label_names.iter().position(|n| n.eq_ignore_ascii_case(name.trim())).map(|i| i as u32)
    }
}
