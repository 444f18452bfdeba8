//! Uniform-grid point index for radius and k-nearest-neighbor queries.

use std::collections::HashMap;

use nalgebra::Point3;

type Cell = (i64, i64, i64);

/// Buckets points into cubic cells of a fixed size. Queries return point
/// indices in the order the points were given, so results are deterministic.
#[derive(Debug, Clone)]
pub struct PointIndex {
    cell_size: f64,
    cells: HashMap<Cell, Vec<usize>>,
    points: Vec<Point3<f64>>,
}

impl PointIndex {
    pub fn new(points: &[Point3<f64>], cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (idx, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, cell_size)).or_default().push(idx);
        }
        Self { cell_size, cells, points: points.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, idx: usize) -> &Point3<f64> {
        &self.points[idx]
    }

    /// Indices of all points with `‖q − p‖ ≤ radius`, ascending.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let reach = (radius / self.cell_size).ceil() as i64;
        let c = cell_of(q, self.cell_size);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        out.extend(bucket.iter().copied().filter(|&i| (self.points[i] - q).norm_squared() <= r2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The `k` nearest points to `q` other than `exclude`, ordered by distance
    /// then index.
    pub fn knn(&self, q: &Point3<f64>, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let available = self.points.len() - usize::from(exclude.is_some_and(|e| e < self.points.len()));
        let k = k.min(available);
        if k == 0 {
            return Vec::new();
        }
        let c = cell_of(q, self.cell_size);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring = 0i64;
        loop {
            // add the shell at Chebyshev distance `ring`
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            for &i in bucket {
                                if Some(i) != exclude {
                                    found.push(((self.points[i] - q).norm_squared(), i));
                                }
                            }
                        }
                    }
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                // every point closer than `ring * cell` is already collected
                let safe = ring as f64 * self.cell_size;
                if found[k - 1].0 <= safe * safe || found.len() == available {
                    found.truncate(k);
                    return found.into_iter().map(|(_, i)| i).collect();
                }
            }
            ring += 1;
        }
    }
}

fn cell_of(p: &Point3<f64>, size: f64) -> Cell {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64)
}
