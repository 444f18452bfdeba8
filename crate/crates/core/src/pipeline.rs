//! The per-frame mapping driver and on-disk map persistence.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix4;
use serde::Serialize;
use thiserror::Error;

use crate::camera::{rigid_from_matrix, CameraIntrinsics};
use crate::config::{ConfigError, EngineConfig};
use crate::dataset::{Dataset, DatasetError, Frame};
use crate::fusion::{check_frame, downsample_depth, fuse_semantics, integrate_samples, FusionError, IntegrationStats};
use crate::gaussian_map::{admit, init_gaussians, is_keyframe, prune, GaussianMap, GaussianPrimitive, Keyframe, MapError};
use crate::ply::{read_gaussians, write_gaussians, PlyError};
use crate::query::QueryContext;
use crate::sparse_grid::{world_to_voxel, GridError, SparseVoxelGrid};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no frames")]
    NoFrames,
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("map file {file}: {cause}")]
    MapFile { file: String, cause: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Running counters over a mapping session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MapStats {
    pub frames: usize,
    pub keyframes: usize,
    pub voxels: usize,
    pub semantic_voxels: usize,
    pub primitives: usize,
    pub admitted: usize,
    pub pruned: usize,
}

/// What one frame contributed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameReport {
    pub keyframe: bool,
    pub integration: IntegrationStats,
    pub candidates: usize,
    pub admitted: usize,
    pub fused: usize,
    pub pruned: usize,
}

/// A built map: grid, primitives and the keyframes they were seen from.
#[derive(Debug, Clone)]
pub struct SceneMap {
    pub config: EngineConfig,
    pub grid: SparseVoxelGrid,
    pub gaussians: GaussianMap,
    pub keyframes: Vec<Keyframe>,
}

/// Single-writer mapping state. Every frame is integrated; every
/// `keyframe_interval`-th frame (by arrival order) additionally seeds
/// primitives, fuses semantics and prunes.
#[derive(Debug, Clone)]
pub struct Mapper {
    scene: SceneMap,
    intrinsics: CameraIntrinsics,
    stats: MapStats,
}

impl Mapper {
    pub fn new(config: EngineConfig, intrinsics: CameraIntrinsics) -> Result<Self, PipelineError> {
        config.validate()?;
        intrinsics.validate().map_err(FusionError::from)?;
        let grid = SparseVoxelGrid::new(config.voxel_size, config.truncation, config.max_weight as f32, 0)?;
        let gaussians = GaussianMap::new(config.voxel_size, config.overlap_radius());
        Ok(Self {
            scene: SceneMap { config, grid, gaussians, keyframes: Vec::new() },
            intrinsics,
            stats: MapStats::default(),
        })
    }

    pub fn stats(&self) -> MapStats {
        let mut s = self.stats;
        s.voxels = self.scene.grid.len();
        s.semantic_voxels = self.scene.grid.semantic_voxels().count();
        s.primitives = self.scene.gaussians.len();
        s
    }

    pub fn scene(&self) -> &SceneMap {
        &self.scene
    }

    pub fn into_scene(self) -> SceneMap {
        self.scene
    }

    pub fn process_frame(&mut self, frame: &Frame) -> Result<FrameReport, PipelineError> {
        check_frame(frame, &self.intrinsics)?;
        let cfg = &self.scene.config;
        let samples = downsample_depth(frame, &self.intrinsics, cfg.downsample_step());
        let integration =
            integrate_samples(&mut self.scene.grid, &frame.camera_center(), &samples, cfg.blend_mode, None)?;
        let keyframe = is_keyframe(self.stats.frames, cfg.keyframe_interval);
        self.stats.frames += 1;
        let mut report = FrameReport { keyframe, integration, ..Default::default() };
        if !keyframe {
            return Ok(report);
        }
        self.stats.keyframes += 1;
        let (grid, map) = (&mut self.scene.grid, &mut self.scene.gaussians);

        let candidates = init_gaussians(&samples, cfg.k_neighbors, cfg.voxel_size, frame.index);
        report.candidates = candidates.len();
        for c in &candidates {
            if admit(map, grid, c, cfg.admission_tsdf, cfg.overlap_radius()).is_some() {
                report.admitted += 1;
            }
        }

        for sample in &samples {
            let Some(entry) = sample.region.and_then(|r| frame.region_table.get(&r)) else {
                continue;
            };
            if grid.feature_dim() != entry.embedding.len() {
                grid.set_feature_dim(entry.embedding.len())?;
            }
            fuse_semantics(grid.get_or_insert(world_to_voxel(&sample.point, cfg.voxel_size)), &entry.embedding, entry.confidence)?;
            report.fused += 1;
        }

        report.pruned = prune(grid, map, cfg.prune_tsdf);
        self.stats.admitted += report.admitted;
        self.stats.pruned += report.pruned;
        self.scene.keyframes.push(Keyframe { frame_id: frame.index, pose: frame.pose, intrinsics: self.intrinsics });
        Ok(report)
    }
}

/// Maps every frame of a dataset in index order.
pub fn build_map(dataset: &Dataset, config: &EngineConfig) -> Result<(SceneMap, MapStats), PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    let mut mapper = Mapper::new(config.clone(), *dataset.intrinsics())?;
    for frame in dataset.frames() {
        mapper.process_frame(&frame?)?;
    }
    let stats = mapper.stats();
    Ok((mapper.into_scene(), stats))
}

/// Maps in-memory frames, e.g. from the synthetic generator.
pub fn build_map_from_frames(
    frames: &[Frame],
    intrinsics: &CameraIntrinsics,
    config: &EngineConfig,
) -> Result<(SceneMap, MapStats), PipelineError> {
    if frames.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    let mut mapper = Mapper::new(config.clone(), *intrinsics)?;
    for frame in frames {
        mapper.process_frame(frame)?;
    }
    let stats = mapper.stats();
    Ok((mapper.into_scene(), stats))
}

pub const GRID_FILE: &str = "grid.gsfg";
pub const GAUSSIANS_FILE: &str = "gaussians.ply";
pub const KEYFRAMES_FILE: &str = "keyframes.txt";
pub const CONFIG_FILE: &str = "config.txt";

fn map_file(file: &str, cause: impl ToString) -> PipelineError {
    PipelineError::MapFile { file: file.into(), cause: cause.to_string() }
}

impl SceneMap {
    pub fn context(&self) -> QueryContext<'_> {
        QueryContext { grid: &self.grid, map: &self.gaussians, keyframes: &self.keyframes }
    }

    /// Writes the map directory: grid snapshot, primitive PLY, keyframe list
    /// and the effective configuration. Output bytes depend only on content.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(GRID_FILE))?);
        self.grid.write_snapshot(&mut w)?;
        w.flush()?;
        write_gaussians(BufWriter::new(File::create(dir.join(GAUSSIANS_FILE))?), &self.gaussians.to_ply())?;
        let mut kf = String::from("# frame_id fx fy cx cy width height pose(4x4 row-major, camera-to-world)\n");
        for k in &self.keyframes {
            let i = &k.intrinsics;
            let m = k.pose.to_homogeneous();
            let pose: Vec<String> = (0..16).map(|n| format!("{}", m[(n / 4, n % 4)])).collect();
            kf.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                k.frame_id,
                i.fx,
                i.fy,
                i.cx,
                i.cy,
                i.width,
                i.height,
                pose.join(" ")
            ));
        }
        fs::write(dir.join(KEYFRAMES_FILE), kf)?;
        fs::write(dir.join(CONFIG_FILE), self.config.to_text())?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        let config = EngineConfig::from_file(dir.join(CONFIG_FILE))?;
        let mut grid = SparseVoxelGrid::read_snapshot(
            BufReader::new(File::open(dir.join(GRID_FILE))?),
            config.max_weight as f32,
        )?;
        let mut gaussians = GaussianMap::new(config.voxel_size, config.overlap_radius());
        for g in read_gaussians(BufReader::new(File::open(dir.join(GAUSSIANS_FILE))?))? {
            let prim = GaussianPrimitive {
                id: g.id as u64,
                home_voxel: world_to_voxel(&g.mean, config.voxel_size),
                mean: g.mean,
                cov: g.cov,
                opacity: g.opacity,
                color: g.color.map(|c| c as f64 / 255.0),
                source_keyframe: 0,
            };
            gaussians.restore(&mut grid, prim)?;
        }
        crate::gaussian_map::check_consistency(&grid, &gaussians)?;
        let text = fs::read_to_string(dir.join(KEYFRAMES_FILE))?;
        let mut keyframes = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 23 {
                return Err(map_file(KEYFRAMES_FILE, format!("line {}: expected 23 fields", n + 1)));
            }
            let bad = |s: &str| map_file(KEYFRAMES_FILE, format!("line {}: bad value '{s}'", n + 1));
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
            let u = |s: &str| s.parse::<u32>().map_err(|_| bad(s));
            let frame_id = t[0].parse::<usize>().map_err(|_| bad(t[0]))?;
            let intrinsics = CameraIntrinsics::new(f(t[1])?, f(t[2])?, f(t[3])?, f(t[4])?, u(t[5])?, u(t[6])?)
                .map_err(|e| map_file(KEYFRAMES_FILE, e))?;
            let m: Vec<f64> = t[7..].iter().map(|s| f(s)).collect::<Result<_, _>>()?;
            let pose = rigid_from_matrix(&Matrix4::from_row_slice(&m)).map_err(|e| map_file(KEYFRAMES_FILE, e))?;
            keyframes.push(Keyframe { frame_id, pose, intrinsics });
        }
        Ok(Self { config, grid, gaussians, keyframes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_scene, SceneSpec};
    use crate::gaussian_map::check_consistency;

    #[test]
    fn twenty_frames_two_keyframes() {
        let scene = synth_scene(3, &SceneSpec::two_objects()).unwrap();
        let (map, stats) = build_map_from_frames(&scene.frames, &scene.intrinsics, &EngineConfig::default()).unwrap();
        assert_eq!(stats.frames, 20);
        assert_eq!(stats.keyframes, 2);
        assert_eq!(map.keyframes.iter().map(|k| k.frame_id).collect::<Vec<_>>(), vec![0, 10]);
        assert!(stats.primitives > 100);
        assert!(stats.semantic_voxels > 100);
        check_consistency(&map.grid, &map.gaussians).unwrap();
    }

    #[test]
    fn save_load_round_trip() {
        let scene = synth_scene(5, &SceneSpec::sphere()).unwrap();
        let (map, _) = build_map_from_frames(&scene.frames, &scene.intrinsics, &EngineConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        map.save(dir.path()).unwrap();
        let back = SceneMap::load(dir.path()).unwrap();
        assert_eq!(back.gaussians.len(), map.gaussians.len());
        assert_eq!(back.grid.len(), map.grid.len());
        assert_eq!(back.keyframes.len(), map.keyframes.len());
        for (a, b) in back.keyframes.iter().zip(&map.keyframes) {
            assert_eq!(a.frame_id, b.frame_id);
            assert!((a.pose.to_homogeneous() - b.pose.to_homogeneous()).abs().max() < 1e-12);
        }
        for (a, b) in back.gaussians.iter().zip(map.gaussians.iter()) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.home_voxel, b.home_voxel);
        }
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        for f in [GRID_FILE, GAUSSIANS_FILE, KEYFRAMES_FILE, CONFIG_FILE] {
            assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 31.5, 23.5, 64, 48).unwrap();
        assert!(matches!(build_map_from_frames(&[], &intr, &EngineConfig::default()), Err(PipelineError::NoFrames)));
    }
}
