use std::collections::HashMap;

use super::QueryError;
use crate::sparse_grid::{SparseVoxelGrid, VoxelKey};

/// Tolerance on the query embedding's norm.
const UNIT_TOLERANCE: f64 = 1e-6;

/// Per-voxel cosine similarity to a query, min-max normalized to `[0, 1]`.
/// Entries are held in ascending key order.
#[derive(Debug, Clone)]
pub struct SimilarityField {
    keys: Vec<VoxelKey>,
    raw: Vec<f64>,
    normalized: Vec<f64>,
    index: HashMap<VoxelKey, usize>,
    min_raw: f64,
    max_raw: f64,
}

impl SimilarityField {
    /// Builds a field from raw values. A degenerate range normalizes to 0.5.
    pub fn from_raw(mut entries: Vec<(VoxelKey, f64)>) -> Result<Self, QueryError> {
        if entries.is_empty() {
            return Err(QueryError::EmptySemanticMap);
        }
        entries.sort_by_key(|e| e.0);
        let min_raw = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let max_raw = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        let range = max_raw - min_raw;
        let normalized = entries.iter().map(|e| if range > 0.0 { (e.1 - min_raw) / range } else { 0.5 }).collect();
        let index = entries.iter().enumerate().map(|(i, e)| (e.0, i)).collect();
        let (keys, raw) = entries.into_iter().unzip();
        Ok(Self { keys, raw, normalized, index, min_raw, max_raw })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.keys
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.min_raw, self.max_raw)
    }

    pub fn raw(&self, key: &VoxelKey) -> Option<f64> {
        self.index.get(key).map(|&i| self.raw[i])
    }

    pub fn normalized(&self, key: &VoxelKey) -> Option<f64> {
        self.index.get(key).map(|&i| self.normalized[i])
    }

    /// `(key, raw, normalized)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (VoxelKey, f64, f64)> + '_ {
        (0..self.keys.len()).map(|i| (self.keys[i], self.raw[i], self.normalized[i]))
    }

    /// Keys with normalized similarity at least `threshold`, ascending.
    pub fn at_least(&self, threshold: f64) -> Vec<VoxelKey> {
        self.iter().filter(|e| e.2 >= threshold).map(|e| e.0).collect()
    }
}

/// Cosine similarity of every semantic voxel's feature with `text`.
pub fn similarity_field(grid: &SparseVoxelGrid, text: &[f32]) -> Result<SimilarityField, QueryError> {
    let norm = text.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(QueryError::NotUnitNorm(norm));
    }
    let mut entries = Vec::new();
    for (key, voxel) in grid.semantic_voxels() {
        let f = voxel.feature();
        if f.len() != text.len() {
            return Err(QueryError::DimensionMismatch { expected: f.len(), got: text.len() });
        }
        let (mut dot, mut ff) = (0.0f64, 0.0f64);
        for (&a, &b) in f.iter().zip(text) {
            dot += a as f64 * b as f64;
            ff += a as f64 * a as f64;
        }
        let cos = if ff > 0.0 { dot / (ff.sqrt() * norm) } else { 0.0 };
        entries.push((*key, cos));
    }
    SimilarityField::from_raw(entries)
}

/// Seed voxels: normalized similarity at least `threshold`.
pub fn seed_selection(field: &SimilarityField, threshold: f64) -> Vec<VoxelKey> {
    field.at_least(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::fuse_semantics;

    fn grid_with(features: &[[f32; 2]]) -> SparseVoxelGrid {
        let mut grid = SparseVoxelGrid::new(0.05, 0.07, 64.0, 2).unwrap();
        for (i, f) in features.iter().enumerate() {
            fuse_semantics(grid.get_or_insert(VoxelKey::new(i as i32, 0, 0)), f, 1.0).unwrap();
        }
        grid.get_or_insert(VoxelKey::new(-1, 0, 0));
        grid
    }

    #[test]
    fn identical_feature_has_unit_cosine() {
        let grid = grid_with(&[[0.6, 0.8], [1.0, 0.0]]);
        let field = similarity_field(&grid, &[0.6, 0.8]).unwrap();
        assert_eq!(field.len(), 2);
        assert!((field.raw(&VoxelKey::new(0, 0, 0)).unwrap() - 1.0).abs() < 1e-7);
        assert!(field.raw(&VoxelKey::new(-1, 0, 0)).is_none());
    }

    #[test]
    fn min_max_normalization() {
        let field = SimilarityField::from_raw(vec![
            (VoxelKey::new(0, 0, 0), 1.0),
            (VoxelKey::new(1, 0, 0), 0.0),
            (VoxelKey::new(2, 0, 0), 0.5),
        ])
        .unwrap();
        let n: Vec<f64> = field.iter().map(|e| e.2).collect();
        assert_eq!(n, vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn degenerate_range_is_half() {
        let grid = grid_with(&[[1.0, 0.0], [1.0, 0.0]]);
        let field = similarity_field(&grid, &[0.0, 1.0]).unwrap();
        assert!(field.iter().all(|e| e.2 == 0.5));
    }

    #[test]
    fn seed_selection_examples() {
        let field =
            SimilarityField::from_raw(vec![(VoxelKey::new(0, 0, 0), 0.9), (VoxelKey::new(1, 0, 0), 0.7), (VoxelKey::new(2, 0, 0), 0.0), (VoxelKey::new(3, 0, 0), 1.0)])
                .unwrap();
        // normalized: 0.9, 0.7, 0, 1
        assert_eq!(seed_selection(&field, 0.8).len(), 2);
        assert_eq!(seed_selection(&field, 0.0).len(), 4);
        assert_eq!(seed_selection(&field, 1.0), vec![VoxelKey::new(3, 0, 0)]);
    }

    #[test]
    fn errors() {
        let empty = SparseVoxelGrid::new(0.05, 0.07, 64.0, 2).unwrap();
        assert!(matches!(similarity_field(&empty, &[1.0, 0.0]), Err(QueryError::EmptySemanticMap)));
        let grid = grid_with(&[[1.0, 0.0]]);
        assert!(matches!(similarity_field(&grid, &[2.0, 0.0]), Err(QueryError::NotUnitNorm(_))));
        assert!(matches!(similarity_field(&grid, &[1.0, 0.0, 0.0]), Err(QueryError::DimensionMismatch { .. })));
    }

    #[test]
    fn scaling_features_keeps_raw_values() {
        let a = grid_with(&[[0.3, 0.4], [1.0, 0.5], [-0.2, 0.9]]);
        let b = grid_with(&[[3.0, 4.0], [10.0, 5.0], [-2.0, 9.0]]);
        let q = [0.8f32, 0.6];
        let fa = similarity_field(&a, &q).unwrap();
        let fb = similarity_field(&b, &q).unwrap();
        for (x, y) in fa.iter().zip(fb.iter()) {
            assert!((x.1 - y.1).abs() < 1e-6);
        }
    }
}
