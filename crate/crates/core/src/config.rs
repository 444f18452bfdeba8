//! Engine configuration as a plain `key = value` file.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fusion::{BlendMode, FusionParams};
use crate::query::QueryConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value for '{key}': {value}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// All tunables. Lengths are meters. Keys left unset derive from the voxel
/// size: `downsample_step = s`, `overlap_radius = s/2`, `dbscan_eps = 2s`,
/// `match_radius = s`.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_weight: f64,
    pub blend_mode: BlendMode,
    pub downsample_step: Option<f64>,
    pub keyframe_interval: usize,
    pub k_neighbors: usize,
    /// Admission gate γ on the home voxel's TSDF.
    pub admission_tsdf: f64,
    /// Pruning gate θ on the home voxel's TSDF.
    pub prune_tsdf: f64,
    pub overlap_radius: Option<f64>,
    /// Stage-one seeding threshold δ₁.
    pub seed_threshold: f64,
    pub keyframes_per_cluster: usize,
    /// Half width ξ of the re-centered threshold window.
    pub window_half_width: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub iterations: usize,
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: usize,
    pub coverage_epsilon: f64,
    pub macc_cutoff: f64,
    pub match_radius: Option<f64>,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.05,
            truncation: 0.07,
            max_weight: 64.0,
            blend_mode: BlendMode::Paper,
            downsample_step: None,
            keyframe_interval: 10,
            k_neighbors: 20,
            admission_tsdf: -0.03,
            prune_tsdf: -0.04,
            overlap_radius: None,
            seed_threshold: 0.8,
            keyframes_per_cluster: 3,
            window_half_width: 0.2,
            window_lo: 0.5,
            window_hi: 1.0,
            iterations: 2,
            dbscan_eps: None,
            dbscan_min_pts: 10,
            coverage_epsilon: 0.01,
            macc_cutoff: 0.25,
            match_radius: None,
            seed: 0,
        }
    }
}

pub const KEYS: [&str; 22] = [
    "voxel_size",
    "truncation",
    "max_weight",
    "blend_mode",
    "downsample_step",
    "keyframe_interval",
    "k_neighbors",
    "admission_tsdf",
    "prune_tsdf",
    "overlap_radius",
    "seed_threshold",
    "keyframes_per_cluster",
    "window_half_width",
    "window_lo",
    "window_hi",
    "iterations",
    "dbscan_eps",
    "dbscan_min_pts",
    "coverage_epsilon",
    "macc_cutoff",
    "match_radius",
    "seed",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

impl EngineConfig {
    /// Parses a config file body over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `key = value` lines on top of the current values, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Sets one key from its text form. Does not validate cross-key constraints.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "voxel_size" => self.voxel_size = num(key, value)?,
            "truncation" => self.truncation = num(key, value)?,
            "max_weight" => self.max_weight = num(key, value)?,
            "blend_mode" => {
                self.blend_mode =
                    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })?
            }
            "downsample_step" => self.downsample_step = Some(num(key, value)?),
            "keyframe_interval" => self.keyframe_interval = num(key, value)?,
            "k_neighbors" => self.k_neighbors = num(key, value)?,
            "admission_tsdf" => self.admission_tsdf = num(key, value)?,
            "prune_tsdf" => self.prune_tsdf = num(key, value)?,
            "overlap_radius" => self.overlap_radius = Some(num(key, value)?),
            "seed_threshold" => self.seed_threshold = num(key, value)?,
            "keyframes_per_cluster" => self.keyframes_per_cluster = num(key, value)?,
            "window_half_width" => self.window_half_width = num(key, value)?,
            "window_lo" => self.window_lo = num(key, value)?,
            "window_hi" => self.window_hi = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "dbscan_eps" => self.dbscan_eps = Some(num(key, value)?),
            "dbscan_min_pts" => self.dbscan_min_pts = num(key, value)?,
            "coverage_epsilon" => self.coverage_epsilon = num(key, value)?,
            "macc_cutoff" => self.macc_cutoff = num(key, value)?,
            "match_radius" => self.match_radius = Some(num(key, value)?),
            "seed" => self.seed = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.voxel_size) {
            return bad("voxel_size must be positive");
        }
        if !(self.truncation >= self.voxel_size && self.truncation.is_finite()) {
            return bad("truncation must be at least voxel_size");
        }
        if !positive(self.max_weight) {
            return bad("max_weight must be positive");
        }
        for (name, v) in [
            ("downsample_step", self.downsample_step),
            ("overlap_radius", self.overlap_radius),
            ("dbscan_eps", self.dbscan_eps),
            ("match_radius", self.match_radius),
        ] {
            if v.is_some_and(|x| !positive(x)) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.keyframe_interval == 0 {
            return bad("keyframe_interval must be at least 1");
        }
        if self.k_neighbors < 4 {
            return bad("k_neighbors must be at least 4");
        }
        if !(0.0..=1.0).contains(&self.seed_threshold) {
            return bad("seed_threshold must lie in [0, 1]");
        }
        if self.keyframes_per_cluster == 0 || self.iterations == 0 || self.dbscan_min_pts == 0 {
            return bad("keyframes_per_cluster, iterations and dbscan_min_pts must be at least 1");
        }
        if !(0.0 <= self.window_lo && self.window_lo < self.window_hi && self.window_hi <= 1.0) {
            return bad("need 0 <= window_lo < window_hi <= 1");
        }
        if !positive(self.window_half_width) || !positive(self.coverage_epsilon) {
            return bad("window_half_width and coverage_epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.macc_cutoff) {
            return bad("macc_cutoff must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn downsample_step(&self) -> f64 {
        self.downsample_step.unwrap_or(self.voxel_size)
    }

    pub fn overlap_radius(&self) -> f64 {
        self.overlap_radius.unwrap_or(self.voxel_size / 2.0)
    }

    pub fn dbscan_eps(&self) -> f64 {
        self.dbscan_eps.unwrap_or(2.0 * self.voxel_size)
    }

    pub fn match_radius(&self) -> f64 {
        self.match_radius.unwrap_or(self.voxel_size)
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams { blend_mode: self.blend_mode, downsample_step: self.downsample_step() }
    }

    pub fn query_config(&self) -> QueryConfig {
        QueryConfig {
            seed_threshold: self.seed_threshold,
            dbscan_eps: self.dbscan_eps(),
            dbscan_min_pts: self.dbscan_min_pts,
            keyframes_per_cluster: self.keyframes_per_cluster,
            coverage_epsilon: self.coverage_epsilon,
            window_lo: self.window_lo,
            window_hi: self.window_hi,
            window_half_width: self.window_half_width,
            iterations: self.iterations,
            ..QueryConfig::default()
        }
    }

    /// Every key with its effective value, one per line in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let values: [String; 22] = [
            self.voxel_size.to_string(),
            self.truncation.to_string(),
            self.max_weight.to_string(),
            self.blend_mode.to_string(),
            self.downsample_step().to_string(),
            self.keyframe_interval.to_string(),
            self.k_neighbors.to_string(),
            self.admission_tsdf.to_string(),
            self.prune_tsdf.to_string(),
            self.overlap_radius().to_string(),
            self.seed_threshold.to_string(),
            self.keyframes_per_cluster.to_string(),
            self.window_half_width.to_string(),
            self.window_lo.to_string(),
            self.window_hi.to_string(),
            self.iterations.to_string(),
            self.dbscan_eps().to_string(),
            self.dbscan_min_pts.to_string(),
            self.coverage_epsilon.to_string(),
            self.macc_cutoff.to_string(),
            self.match_radius().to_string(),
            self.seed.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`to_text`](Self::to_text).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = EngineConfig::default();
        assert_eq!((c.voxel_size, c.truncation, c.seed_threshold), (0.05, 0.07, 0.8));
        assert_eq!((c.keyframes_per_cluster, c.window_half_width, c.keyframe_interval), (3, 0.2, 10));
        assert_eq!(c.overlap_radius(), 0.025);
        assert_eq!(c.dbscan_eps(), 0.1);
        assert_eq!(c.match_radius(), 0.05);
        c.validate().unwrap();
    }

    #[test]
    fn parse_and_round_trip() {
        let c = EngineConfig::parse("# comment\nvoxel_size = 0.04\n\nblend_mode=unit_sample\nseed = 9 # trailing\n")
            .unwrap();
        assert_eq!(c.voxel_size, 0.04);
        assert_eq!(c.blend_mode, BlendMode::UnitSample);
        assert_eq!(c.seed, 9);
        assert_eq!(c.dbscan_eps(), 0.08);
        let back = EngineConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
        assert_ne!(c.hash(), EngineConfig::default().hash());
    }

    #[test]
    fn unknown_and_invalid_rejected() {
        assert!(matches!(EngineConfig::parse("voxelsize = 1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(EngineConfig::parse("voxel_size"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(EngineConfig::parse("voxel_size = abc"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(EngineConfig::parse("truncation = 0.01"), Err(ConfigError::Invalid(_))));
        assert!(matches!(EngineConfig::parse("window_lo = 0.9\nwindow_hi = 0.5"), Err(ConfigError::Invalid(_))));
    }
}
