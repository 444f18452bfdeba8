use std::collections::{BTreeSet, VecDeque};

use nalgebra::{Point3, Vector3};
use serde::Serialize;

use super::dbscan::dbscan;
use super::oracle::{OracleError, OracleRequest, ThresholdOracle};
use super::similarity::{similarity_field, SimilarityField};
use super::threshold::{lower_median, sample_thresholds, ThresholdWindow};
use super::viewpoints::{score_keyframes, ScoredKeyframe};
use super::{QueryConfig, QueryContext, QueryError};
use crate::edit::{object_descriptor, ObjectDescriptor};
use crate::gaussian_map::{primitives_in_voxels, Keyframe};
use crate::sparse_grid::{GaussianId, VoxelKey};
use crate::splat_render::{render, RenderOutput};

/// A density cluster of seed primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: usize,
    /// Ascending.
    pub members: Vec<GaussianId>,
    pub centroid: Point3<f64>,
    /// Home voxels of the members, ascending.
    pub voxels: Vec<VoxelKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewChoice {
    pub viewpoint_id: usize,
    /// `None` when the oracle failed on this view.
    pub best_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub window: ThresholdWindow,
    pub thresholds: Vec<f64>,
    pub choices: Vec<ViewChoice>,
    pub delta: f64,
    /// Candidate renders per viewpoint, in `choices` order. Empty unless
    /// requested.
    #[serde(skip)]
    pub renders: Vec<Vec<RenderOutput>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub cluster_id: usize,
    /// Selected primitives, ascending.
    pub ids: Vec<GaussianId>,
    pub threshold: f64,
    pub descriptor: Option<ObjectDescriptor>,
    pub centroid: [f64; 3],
    pub viewpoints: Vec<ScoredKeyframe>,
    pub rounds: Vec<RoundTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub query: String,
    pub strategy: String,
    pub clusters: Vec<ClusterResult>,
}

impl QueryResult {
    /// Union of every cluster's selection, ascending.
    pub fn all_ids(&self) -> Vec<GaussianId> {
        let set: BTreeSet<GaussianId> = self.clusters.iter().flat_map(|c| c.ids.iter().copied()).collect();
        set.into_iter().collect()
    }
}

/// Clusters the primitives living in voxels at or above `threshold`. Noise
/// primitives are dropped.
pub fn seed_clusters(
    ctx: &QueryContext<'_>,
    field: &SimilarityField,
    threshold: f64,
    eps: f64,
    min_pts: usize,
) -> Vec<Cluster> {
    let seeds = field.at_least(threshold);
    let ids = primitives_in_voxels(ctx.grid, &seeds);
    let means: Vec<Point3<f64>> = ids.iter().map(|&id| ctx.map.get(id).expect("listed id is live").mean).collect();
    if means.is_empty() {
        return Vec::new();
    }
    let labels = dbscan(&means, eps, min_pts);
    (0..labels.clusters)
        .map(|c| {
            let idx = labels.members(c);
            let members: Vec<GaussianId> = idx.iter().map(|&i| ids[i]).collect();
            let centroid = idx.iter().fold(Vector3::zeros(), |a, &i| a + means[i].coords) / idx.len() as f64;
            let voxels: BTreeSet<VoxelKey> =
                members.iter().map(|&id| ctx.map.get(id).expect("live").home_voxel).collect();
            Cluster { id: c, members, centroid: Point3::from(centroid), voxels: voxels.into_iter().collect() }
        })
        .collect()
}

/// Voxels 26-connected to a seed through voxels of normalized similarity at
/// least `threshold`. Seeds below the threshold do not start a flood.
pub fn cluster_region(field: &SimilarityField, seeds: &[VoxelKey], threshold: f64) -> Vec<VoxelKey> {
    let passes = |k: &VoxelKey| field.normalized(k).is_some_and(|s| s >= threshold);
    let mut region: BTreeSet<VoxelKey> = BTreeSet::new();
    let mut queue: VecDeque<VoxelKey> = VecDeque::new();
    for seed in seeds.iter().filter(|k| passes(k)) {
        if region.insert(*seed) {
            queue.push_back(*seed);
        }
    }
    while let Some(key) = queue.pop_front() {
        for n in key.neighbors26() {
            if passes(&n) && region.insert(n) {
                queue.push_back(n);
            }
        }
    }
    region.into_iter().collect()
}

/// Primitives of the cluster's region at `threshold`, ascending.
pub fn select_at(ctx: &QueryContext<'_>, field: &SimilarityField, cluster: &Cluster, threshold: f64) -> Vec<GaussianId> {
    primitives_in_voxels(ctx.grid, &cluster_region(field, &cluster.voxels, threshold))
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), QueryError> {
    for &t in thresholds {
        if !(0.0..=1.0).contains(&t) {
            return Err(QueryError::InvalidThreshold(t));
        }
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QueryError::InvalidWindow {
            lo: thresholds.first().copied().unwrap_or(f64::NAN),
            hi: thresholds.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// One judging round: every viewpoint renders the cluster's selection at each
/// threshold, the oracle picks a best index per view, and the round's
/// threshold is the lower median of the picks. Views where the oracle fails
/// are skipped.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_round(
    ctx: &QueryContext<'_>,
    field: &SimilarityField,
    cluster: &Cluster,
    thresholds: &[f64],
    viewpoints: &[&Keyframe],
    oracle: &dyn ThresholdOracle,
    query: &str,
    config: &QueryConfig,
) -> Result<RoundTrace, QueryError> {
    check_thresholds(thresholds)?;
    if viewpoints.is_empty() {
        return Err(QueryError::OracleFailure("no viewpoints".into()));
    }
    let window = ThresholdWindow::new(thresholds[0], thresholds[thresholds.len() - 1])
        .unwrap_or(ThresholdWindow { lo: thresholds[0], hi: thresholds[0] });
    let selections: Vec<Vec<GaussianId>> = thresholds.iter().map(|&t| select_at(ctx, field, cluster, t)).collect();

    let judge = |kf: &&Keyframe| -> (Result<usize, OracleError>, Vec<RenderOutput>) {
        let renders: Vec<RenderOutput> =
            selections.iter().map(|ids| render(ids, ctx.map, &kf.pose, &kf.intrinsics, config.background)).collect();
        let request = OracleRequest { query, viewpoint_id: kf.frame_id, thresholds, renders: &renders };
        let choice = oracle.best_index(&request).and_then(|i| {
            if i < thresholds.len() {
                Ok(i)
            } else {
                Err(OracleError::OutOfRange { index: i, count: thresholds.len() })
            }
        });
        (choice, renders)
    };
    #[cfg(feature = "parallel")]
    let judged: Vec<(Result<usize, OracleError>, Vec<RenderOutput>)> = {
        use rayon::prelude::*;
        viewpoints.par_iter().map(judge).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let judged: Vec<(Result<usize, OracleError>, Vec<RenderOutput>)> = viewpoints.iter().map(judge).collect();

    let mut choices = Vec::with_capacity(judged.len());
    let mut picks = Vec::new();
    let mut renders = Vec::new();
    let mut last_error = None;
    for (kf, (choice, views)) in viewpoints.iter().zip(judged) {
        match choice {
            Ok(i) => {
                picks.push(thresholds[i]);
                choices.push(ViewChoice { viewpoint_id: kf.frame_id, best_index: Some(i) });
            }
            Err(e) => {
                log::warn!("cluster {}: oracle failed on viewpoint {}: {e}", cluster.id, kf.frame_id);
                choices.push(ViewChoice { viewpoint_id: kf.frame_id, best_index: None });
                last_error = Some(e);
            }
        }
        if config.keep_renders {
            renders.push(views);
        }
    }
    let delta = lower_median(&picks).ok_or_else(|| {
        QueryError::OracleFailure(last_error.map(|e| e.to_string()).unwrap_or_else(|| "no picks".into()))
    })?;
    Ok(RoundTrace { window, thresholds: thresholds.to_vec(), choices, delta, renders })
}

fn finish(
    ctx: &QueryContext<'_>,
    field: &SimilarityField,
    cluster: &Cluster,
    threshold: f64,
    viewpoints: Vec<ScoredKeyframe>,
    rounds: Vec<RoundTrace>,
) -> ClusterResult {
    let ids = select_at(ctx, field, cluster, threshold);
    let means: Vec<Point3<f64>> = ids.iter().map(|&id| ctx.map.get(id).expect("live").mean).collect();
    ClusterResult {
        cluster_id: cluster.id,
        descriptor: object_descriptor(&means),
        ids,
        threshold,
        centroid: [cluster.centroid.x, cluster.centroid.y, cluster.centroid.z],
        viewpoints,
        rounds,
    }
}

fn refine_cluster(
    ctx: &QueryContext<'_>,
    field: &SimilarityField,
    cluster: &Cluster,
    oracle: &dyn ThresholdOracle,
    query: &str,
    config: &QueryConfig,
) -> Result<Option<ClusterResult>, QueryError> {
    let points: Vec<Point3<f64>> = cluster.members.iter().map(|&id| ctx.map.get(id).expect("live").mean).collect();
    let scored =
        score_keyframes(&points, &cluster.centroid, ctx.keyframes, config.keyframes_per_cluster, config.coverage_epsilon);
    if scored.is_empty() {
        log::warn!("cluster {} is not visible from any keyframe; dropped", cluster.id);
        return Ok(None);
    }
    let views: Vec<&Keyframe> = scored
        .iter()
        .map(|s| ctx.keyframes.iter().find(|k| k.frame_id == s.frame_id).expect("scored keyframe exists"))
        .collect();
    let mut window = ThresholdWindow::new(config.window_lo, config.window_hi)?;
    let mut rounds = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let thresholds = sample_thresholds(&window);
        let trace = evaluate_round(ctx, field, cluster, &thresholds, &views, oracle, query, config)?;
        window = ThresholdWindow::recentered(trace.delta, config.window_half_width)?;
        rounds.push(trace);
    }
    // with no rounds the window's midpoint stands in for the judged threshold
    let threshold = rounds.last().map_or((window.lo + window.hi) / 2.0, |r| r.delta);
    Ok(Some(finish(ctx, field, cluster, threshold, scored, rounds)))
}

/// Seed clusters can grow into the same region; such duplicates are reported
/// once, under the lowest cluster id.
fn drop_duplicates(results: Vec<ClusterResult>) -> Vec<ClusterResult> {
    let mut out: Vec<ClusterResult> = Vec::with_capacity(results.len());
    for r in results {
        if out.iter().any(|o| o.ids == r.ids) {
            log::debug!("cluster {} repeats an earlier selection", r.cluster_id);
            continue;
        }
        out.push(r);
    }
    out
}

/// Seeds at the high threshold, clusters, picks viewpoints per cluster, and
/// refines each cluster's threshold over `config.iterations` judged rounds.
/// Clusters are processed concurrently and reported in cluster-id order.
pub fn adaptive_query(
    ctx: &QueryContext<'_>,
    text: &[f32],
    query: &str,
    oracle: &dyn ThresholdOracle,
    config: &QueryConfig,
) -> Result<QueryResult, QueryError> {
    if !(0.0..=1.0).contains(&config.seed_threshold) {
        return Err(QueryError::InvalidThreshold(config.seed_threshold));
    }
    let field = similarity_field(ctx.grid, text)?;
    let clusters = seed_clusters(ctx, &field, config.seed_threshold, config.dbscan_eps, config.dbscan_min_pts);
    if clusters.is_empty() {
        return Err(QueryError::NoMatch(query.into()));
    }
    let refine = |c: &Cluster| refine_cluster(ctx, &field, c, oracle, query, config);
    #[cfg(feature = "parallel")]
    let refined: Vec<Result<Option<ClusterResult>, QueryError>> = {
        use rayon::prelude::*;
        clusters.par_iter().map(refine).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let refined: Vec<Result<Option<ClusterResult>, QueryError>> = clusters.iter().map(refine).collect();

    let mut results = Vec::new();
    for r in refined {
        if let Some(c) = r? {
            results.push(c);
        }
    }
    if results.is_empty() {
        return Err(QueryError::NoMatch(query.into()));
    }
    Ok(QueryResult { query: query.into(), strategy: "adaptive".into(), clusters: drop_duplicates(results) })
}

/// One-shot selection at a fixed threshold. DBSCAN still discards noise.
pub fn fixed_query(
    ctx: &QueryContext<'_>,
    text: &[f32],
    query: &str,
    threshold: f64,
    config: &QueryConfig,
) -> Result<QueryResult, QueryError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(QueryError::InvalidThreshold(threshold));
    }
    let field = similarity_field(ctx.grid, text)?;
    let clusters = seed_clusters(ctx, &field, threshold, config.dbscan_eps, config.dbscan_min_pts);
    if clusters.is_empty() {
        return Err(QueryError::NoMatch(query.into()));
    }
    let results = clusters.iter().map(|c| finish(ctx, &field, c, threshold, Vec::new(), Vec::new())).collect();
    Ok(QueryResult { query: query.into(), strategy: format!("fixed:{threshold}"), clusters: drop_duplicates(results) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{look_at, CameraIntrinsics};
    use crate::fusion::fuse_semantics;
    use crate::gaussian_map::{GaussianCandidate, GaussianMap};
    use crate::query::ConstantOracle;
    use crate::sparse_grid::SparseVoxelGrid;
    use nalgebra::Matrix3;

    const S: f64 = 0.05;

    /// A 4x4x4 block of voxels with one primitive each. Features rotate from
    /// the query direction toward an orthogonal one along +x, so normalized
    /// similarity falls off with i.
    fn scene() -> (SparseVoxelGrid, GaussianMap, Vec<Keyframe>) {
        let mut grid = SparseVoxelGrid::new(S, 0.07, 64.0, 2).unwrap();
        let mut map = GaussianMap::new(S, 0.01);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let key = VoxelKey::new(i, j, k);
                    let a = i as f32 * 0.4;
                    fuse_semantics(grid.get_or_insert(key), &[a.cos(), a.sin()], 1.0).unwrap();
                    map.insert(
                        &mut grid,
                        &GaussianCandidate {
                            mean: key.center(S),
                            cov: Matrix3::identity() * 1e-4,
                            opacity: 0.5,
                            color: [0.8, 0.2, 0.2],
                            source_keyframe: 0,
                        },
                    );
                }
            }
        }
        let intr = CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap();
        let target = Point3::new(0.1, 0.1, 0.1);
        let keyframes = [(1.0, 0.2, 0.6), (-0.8, 0.3, 0.7), (0.1, 1.0, 0.5), (0.2, -0.9, 0.8)]
            .iter()
            .enumerate()
            .map(|(f, &(x, y, z))| Keyframe {
                frame_id: f * 10,
                pose: look_at(&Point3::new(x, y, z), &target, &Vector3::z()),
                intrinsics: intr,
            })
            .collect();
        (grid, map, keyframes)
    }

    fn config() -> QueryConfig {
        QueryConfig { dbscan_eps: 2.0 * S, dbscan_min_pts: 3, ..QueryConfig::default() }
    }

    #[test]
    fn region_is_monotone_in_threshold() {
        let (grid, map, kfs) = scene();
        let ctx = QueryContext { grid: &grid, map: &map, keyframes: &kfs };
        let field = similarity_field(&grid, &[1.0, 0.0]).unwrap();
        let clusters = seed_clusters(&ctx, &field, 0.8, 2.0 * S, 3);
        assert_eq!(clusters.len(), 1);
        let mut prev: Option<BTreeSet<GaussianId>> = None;
        for t in [0.0, 0.3, 0.6, 0.9, 1.0] {
            let sel: BTreeSet<GaussianId> = select_at(&ctx, &field, &clusters[0], t).into_iter().collect();
            if let Some(p) = &prev {
                assert!(sel.is_subset(p));
            }
            prev = Some(sel);
        }
        assert_eq!(select_at(&ctx, &field, &clusters[0], 0.0).len(), 64);
        assert_eq!(select_at(&ctx, &field, &clusters[0], 1.0).len(), 16);
    }

    #[test]
    fn constant_oracle_converges() {
        let (grid, map, kfs) = scene();
        let ctx = QueryContext { grid: &grid, map: &map, keyframes: &kfs };
        for target in [0.55, 0.7, 0.85] {
            let r = adaptive_query(&ctx, &[1.0, 0.0], "q", &ConstantOracle { target }, &config()).unwrap();
            let c = &r.clusters[0];
            assert_eq!(c.rounds.len(), 2);
            assert!((c.threshold - target).abs() <= 0.05 + 1e-12);
            for round in &c.rounds {
                assert!(round.window.contains(round.delta));
            }
            // 2ξ wide unless clipped at 1
            let w = c.rounds[1].window;
            assert!(w.width() <= 0.4 + 1e-12);
            assert!(w.hi == 1.0 || (w.width() - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn window_update_arithmetic() {
        let w = ThresholdWindow::recentered(0.7, 0.2).unwrap();
        assert!((w.lo - 0.5).abs() < 1e-12 && (w.hi - 0.9).abs() < 1e-12);
    }

    struct Scripted(Vec<usize>);

    impl ThresholdOracle for Scripted {
        fn best_index(&self, request: &OracleRequest<'_>) -> Result<usize, OracleError> {
            match self.0.get(request.viewpoint_id / 10) {
                Some(&i) if i < 99 => Ok(i),
                _ => Err(OracleError::Transport("down".into())),
            }
        }
    }

    #[test]
    fn round_uses_lower_median_and_skips_failures() {
        let (grid, map, kfs) = scene();
        let ctx = QueryContext { grid: &grid, map: &map, keyframes: &kfs };
        let field = similarity_field(&grid, &[1.0, 0.0]).unwrap();
        let cluster = &seed_clusters(&ctx, &field, 0.8, 2.0 * S, 3)[0];
        let t = sample_thresholds(&ThresholdWindow::new(0.5, 1.0).unwrap());
        let views: Vec<&Keyframe> = kfs.iter().collect();
        let r = evaluate_round(&ctx, &field, cluster, &t, &views[..3], &Scripted(vec![1, 2, 3]), "q", &config()).unwrap();
        assert_eq!(r.delta, 0.75);
        let r = evaluate_round(&ctx, &field, cluster, &t, &views[..1], &Scripted(vec![3]), "q", &config()).unwrap();
        assert_eq!(r.delta, 0.875);
        let r = evaluate_round(&ctx, &field, cluster, &t, &views, &Scripted(vec![1, 99, 4, 99]), "q", &config()).unwrap();
        assert_eq!(r.delta, 0.625);
        assert_eq!(r.choices[1].best_index, None);
        let err = evaluate_round(&ctx, &field, cluster, &t, &views[..2], &Scripted(vec![99, 99]), "q", &config());
        assert!(matches!(err, Err(QueryError::OracleFailure(_))));
        let bad = evaluate_round(&ctx, &field, cluster, &t, &views[..1], &Scripted(vec![7]), "q", &config());
        assert!(matches!(bad, Err(QueryError::OracleFailure(_))));
    }

    #[test]
    fn fixed_query_and_no_match() {
        let (grid, map, kfs) = scene();
        let ctx = QueryContext { grid: &grid, map: &map, keyframes: &kfs };
        let r = fixed_query(&ctx, &[1.0, 0.0], "q", 1.0, &config()).unwrap();
        assert_eq!(r.all_ids().len(), 16);
        let d = r.clusters[0].descriptor.unwrap();
        assert!((d.center[0] - 0.025).abs() < 1e-6);
        // only one voxel column is at the top, too sparse to cluster
        let strict = QueryConfig { dbscan_min_pts: 100, ..config() };
        assert!(matches!(adaptive_query(&ctx, &[1.0, 0.0], "q", &ConstantOracle { target: 0.7 }, &strict), Err(QueryError::NoMatch(_))));
    }

    #[test]
    fn invisible_cluster_is_dropped() {
        let (grid, map, mut kfs) = scene();
        for kf in &mut kfs {
            kf.pose = look_at(&Point3::new(5.0, 5.0, 5.0), &Point3::new(10.0, 10.0, 10.0), &Vector3::z());
        }
        let ctx = QueryContext { grid: &grid, map: &map, keyframes: &kfs };
        let r = adaptive_query(&ctx, &[1.0, 0.0], "q", &ConstantOracle { target: 0.7 }, &config());
        assert!(matches!(r, Err(QueryError::NoMatch(_))));
    }

    #[test]
    fn feature_scale_does_not_change_result() {
        let (grid, map, kfs) = scene();
        let ctx = QueryContext { grid: &grid, map: &map, keyframes: &kfs };
        let a = adaptive_query(&ctx, &[0.6, 0.8], "q", &ConstantOracle { target: 0.7 }, &config()).unwrap();
        let mut scaled = SparseVoxelGrid::new(S, 0.07, 64.0, 2).unwrap();
        for key in grid.sorted_keys() {
            let v = grid.get(&key).unwrap();
            let f: Vec<f32> = v.feature().iter().map(|x| x * 3.0).collect();
            let dst = scaled.get_or_insert(key);
            fuse_semantics(dst, &f, 1.0).unwrap();
            dst.gaussians = v.gaussians.clone();
        }
        let ctx = QueryContext { grid: &scaled, map: &map, keyframes: &kfs };
        let b = adaptive_query(&ctx, &[0.6, 0.8], "q", &ConstantOracle { target: 0.7 }, &config()).unwrap();
        assert_eq!(a.all_ids(), b.all_ids());
        assert_eq!(a.clusters[0].threshold, b.clusters[0].threshold);
    }
}
