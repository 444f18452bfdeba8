use std::collections::VecDeque;

use nalgebra::Point3;

use crate::spatial::PointIndex;

pub const NOISE: i32 = -1;
const UNVISITED: i32 = -2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbscanResult {
    /// Cluster id per point, [`NOISE`] for noise. Ids are assigned in order of
    /// each cluster's first core point.
    pub labels: Vec<i32>,
    pub clusters: usize,
}

impl DbscanResult {
    pub fn is_noise(&self, i: usize) -> bool {
        self.labels[i] == NOISE
    }

    /// Point indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == c as i32).map(|(i, _)| i).collect()
    }
}

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Border points join the first cluster
/// that reaches them, so the output depends only on the input order.
pub fn dbscan(points: &[Point3<f64>], eps: f64, min_pts: usize) -> DbscanResult {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let index = PointIndex::new(points, eps);
    let mut labels = vec![UNVISITED; points.len()];
    let mut cluster = 0i32;
    for i in 0..points.len() {
        if labels[i] != UNVISITED {
            continue;
        }
        let hood = index.within(&points[i], eps);
        if hood.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = hood.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster;
                continue;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let hood = index.within(&points[j], eps);
            if hood.len() >= min_pts {
                queue.extend(hood);
            }
        }
        cluster += 1;
    }
    DbscanResult { labels, clusters: cluster as usize }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = 0.1;
        let mut pts = Vec::new();
        for b in 0..3 {
            let c = Point3::new(b as f64 * 10.0 * eps + b as f64 * 0.2, 0.0, 0.0);
            for _ in 0..20 {
                pts.push(c + nalgebra::Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), 0.0));
            }
        }
        let r = dbscan(&pts, eps, 5);
        assert_eq!(r.clusters, 3);
        assert!(r.labels.iter().all(|&l| l != NOISE));
        assert_eq!(r.members(1), (20..40).collect::<Vec<_>>());
    }

    #[test]
    fn isolated_point_is_noise() {
        let r = dbscan(&[Point3::origin()], 0.1, 2);
        assert_eq!(r.labels, vec![NOISE]);
        assert_eq!(r.clusters, 0);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let r = dbscan(&vec![Point3::new(1.0, 2.0, 3.0); 12], 0.01, 10);
        assert_eq!(r.clusters, 1);
        assert!(r.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // the middle point reaches a core point of each group but is not core itself
        let at = |x: f64, n: usize| vec![Point3::new(x, 0.0, 0.0); n];
        let mut pts = [at(-0.9, 8), at(0.0, 2), at(1.9, 2), at(2.8, 8)].concat();
        pts.push(Point3::new(0.95, 0.0, 0.0));
        let r = dbscan(&pts, 1.0, 6);
        assert_eq!(r.clusters, 2);
        assert_eq!(r.labels[20], 0);
    }
}
