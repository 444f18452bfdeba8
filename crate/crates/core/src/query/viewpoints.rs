use nalgebra::Point3;
use serde::Serialize;

use crate::gaussian_map::Keyframe;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredKeyframe {
    pub frame_id: usize,
    pub score: f64,
    pub coverage: f64,
    pub distance: f64,
}

/// Fraction of `points` in front of the keyframe camera and inside its image.
pub fn coverage(points: &[Point3<f64>], keyframe: &Keyframe) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let visible = points
        .iter()
        .filter(|p| {
            let pc = keyframe.pose.inverse_transform_point(p);
            keyframe.intrinsics.project(&pc).is_some_and(|(u, v)| keyframe.intrinsics.contains(u, v))
        })
        .count();
    visible as f64 / points.len() as f64
}

/// `E = Cov / (d + ε)`.
pub fn keyframe_score(coverage: f64, distance: f64, epsilon: f64) -> f64 {
    coverage / (distance + epsilon)
}

/// The `u` best keyframes for a cluster by `E`, highest first, ties by
/// frame id. Keyframes that see none of the cluster are never returned.
pub fn score_keyframes(
    members: &[Point3<f64>],
    centroid: &Point3<f64>,
    keyframes: &[Keyframe],
    u: usize,
    epsilon: f64,
) -> Vec<ScoredKeyframe> {
    let mut scored: Vec<ScoredKeyframe> = keyframes
        .iter()
        .map(|kf| {
            let cov = coverage(members, kf);
            let distance = (kf.camera_center() - centroid).norm();
            ScoredKeyframe { frame_id: kf.frame_id, score: keyframe_score(cov, distance, epsilon), coverage: cov, distance }
        })
        .filter(|s| s.coverage > 0.0)
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.frame_id.cmp(&b.frame_id)));
    scored.truncate(u);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{look_at, CameraIntrinsics};
    use nalgebra::Vector3;

    fn kf(id: usize, eye: Point3<f64>, target: Point3<f64>) -> Keyframe {
        Keyframe {
            frame_id: id,
            pose: look_at(&eye, &target, &Vector3::z()),
            intrinsics: CameraIntrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap(),
        }
    }

    #[test]
    fn score_arithmetic() {
        assert!((keyframe_score(1.0, 0.0, 0.01) - 100.0).abs() < 1e-9);
        assert_eq!(keyframe_score(0.0, 3.0, 0.01), 0.0);
        assert!((keyframe_score(0.5, 0.99, 0.01) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ranking_prefers_close_visible_views() {
        let members = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.05, 0.0, 0.0)];
        let c = Point3::new(0.025, 0.0, 0.0);
        let kfs = vec![
            kf(0, Point3::new(3.0, 0.1, 0.5), Point3::origin()),
            kf(1, Point3::new(1.0, 0.1, 0.5), Point3::origin()),
            kf(2, Point3::new(1.0, 0.1, 0.5), Point3::new(5.0, 0.0, 0.5)), // looking away
            kf(3, Point3::new(-1.0, 0.1, 0.5), Point3::origin()),
        ];
        let top = score_keyframes(&members, &c, &kfs, 3, 0.01);
        assert_eq!(top.iter().map(|s| s.frame_id).collect::<Vec<_>>(), vec![1, 3, 0]);
        assert!(top.iter().all(|s| s.coverage == 1.0));
        assert_eq!(score_keyframes(&members, &c, &kfs, 10, 0.01).len(), 3);
    }

    #[test]
    fn ties_broken_by_frame_id() {
        let members = vec![Point3::origin()];
        let kfs = vec![
            kf(5, Point3::new(1.0, 0.0, 0.5), Point3::origin()),
            kf(2, Point3::new(-1.0, 0.0, 0.5), Point3::origin()),
        ];
        let top = score_keyframes(&members, &Point3::origin(), &kfs, 1, 0.01);
        assert_eq!(top[0].frame_id, 2);
    }
}
