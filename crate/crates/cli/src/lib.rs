//! Command implementations behind the `gsfuse` binary.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gsfuse_core::config::ConfigError;
use gsfuse_core::dataset::{synth_scene, Dataset, DatasetError, GroundTruthSegmentation, SceneSpec};
use gsfuse_core::edit::{edit_ids, EditVerb};
use gsfuse_core::eval::{
    depth_l1, label_name, mask_oracle_for, psnr_u8, segmentation_benchmark, BenchmarkReport, Strategy, MASK_ALPHA,
};
use gsfuse_core::pipeline::{build_map, PipelineError, SceneMap};
use gsfuse_core::ply::{write_gaussians, PlyError};
use gsfuse_core::query::{
    adaptive_query, fixed_query, ConstantOracle, HttpOracle, MaskIouOracle, OracleError, QueryError, QueryResult,
    ThresholdOracle,
};
use gsfuse_core::splat_render::{render, RenderOutput};
use gsfuse_core::EngineConfig;
use image::{ImageBuffer, Rgb, RgbImage};
use nalgebra::Vector3;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_NO_MATCH: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    NoMatch(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Oracle(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::NoMatch(_) => EXIT_NO_MATCH,
            Self::Io(_) => EXIT_IO,
            Self::Oracle(_) => EXIT_ORACLE,
            Self::Usage(_) | Self::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::NoMatch(_) => Self::NoMatch(e.to_string()),
            QueryError::OracleFailure(_) => Self::Oracle(e.to_string()),
            _ => Self::Other(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) | DatasetError::Image(_) | DatasetError::MissingIntrinsics(_) => Self::Io(e.to_string()),
            _ => Self::Other(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Self::Io(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<PlyError> for CliError {
    fn from(e: PlyError) -> Self {
        match e {
            PlyError::Io(_) => Self::Io(e.to_string()),
            _ => Self::Other(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(e) => e.into(),
            PipelineError::Dataset(e) => e.into(),
            PipelineError::Config(e) => e.into(),
            PipelineError::Ply(e) => e.into(),
            PipelineError::Grid(gsfuse_core::sparse_grid::GridError::Io(e)) => e.into(),
            e => Self::Other(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Config(_) | OracleError::NoMask { .. } => Self::Io(e.to_string()),
            _ => Self::Oracle(e.to_string()),
        }
    }
}

/// Online open-vocabulary RGB-D mapping with Gaussian primitives.
#[derive(Debug, Parser)]
#[command(name = "gsfuse", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Engine config file (`key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable, wins over --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for every random choice (overrides the config's `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for rays, tiles and queries (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a map from an RGB-D dataset directory.
    Map(MapArgs),
    /// Run an open-vocabulary query against a saved map.
    Query(QueryArgs),
    /// Query, then translate, rotate or delete the matched objects.
    Edit(EditArgs),
    /// Render a saved map from a keyframe or dataset frame.
    Render(RenderArgs),
    /// Score query strategies against dataset ground truth.
    Eval(EvalArgs),
    /// Write a deterministic synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output map directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuerySource {
    /// Saved map directory.
    #[arg(long)]
    pub map: PathBuf,
    /// Ground-truth label name to query; its embedding comes from --dataset.
    #[arg(long, conflicts_with = "embedding")]
    pub query: Option<String>,
    /// File of whitespace-separated floats: the query embedding.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Text passed to the oracle (defaults to the label or "query").
    #[arg(long)]
    pub text: Option<String>,
    /// Dataset directory, for label embeddings and the ground-truth oracle.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Oracle: `gt`, `constant:<δ>`, `scripted:<masks.json>` or an http(s) URL.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub oracle_timeout: f64,
    #[arg(long, default_value_t = 2)]
    pub oracle_retries: usize,
    /// Skip the adaptive loop and select at this fixed threshold.
    #[arg(long)]
    pub fixed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub source: QuerySource,
    /// Output directory for result.json, selection.ply and render grids.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Verb {
    Translate,
    Rotate,
    Delete,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[command(flatten)]
    pub source: QuerySource,
    #[arg(long, value_enum)]
    pub verb: Verb,
    /// Translation `x,y,z` in meters.
    #[arg(long, value_name = "X,Y,Z")]
    pub t: Option<String>,
    /// Rotation as roll,pitch,yaw radians.
    #[arg(long, value_name = "R,P,Y")]
    pub rpy: Option<String>,
    /// Rotation axis (with --angle).
    #[arg(long, value_name = "X,Y,Z")]
    pub axis: Option<String>,
    /// Rotation angle in radians (with --axis).
    #[arg(long)]
    pub angle: Option<f64>,
    /// Cluster index to edit; all clusters when omitted.
    #[arg(long)]
    pub target: Option<usize>,
    /// Where to save the edited map (default: in place).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Render from this keyframe of the map.
    #[arg(long, conflicts_with = "frame")]
    pub keyframe: Option<usize>,
    /// Render from this frame of --dataset and score against it.
    #[arg(long, requires = "dataset")]
    pub frame: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Background `r,g,b` in [0, 1].
    #[arg(long, default_value = "0,0,0")]
    pub background: String,
    /// Color PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Depth PNG (16-bit millimeters).
    #[arg(long)]
    pub depth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// `adaptive` or `fixed:<δ>`; repeatable.
    #[arg(long = "strategy")]
    pub strategies: Vec<String>,
    /// Oracle spec, as for `query` (default `gt`).
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub oracle_timeout: f64,
    #[arg(long, default_value_t = 2)]
    pub oracle_retries: usize,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV mirror of the report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    TwoObjects,
    Ablation,
    Sphere,
}

impl Preset {
    pub fn spec(self) -> SceneSpec {
        match self {
            Self::TwoObjects => SceneSpec::two_objects(),
            Self::Ablation => SceneSpec::ablation(),
            Self::Sphere => SceneSpec::sphere(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "two-objects")]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file, then `--set` overrides, then `--seed`.
pub fn effective_config(cli: &Cli) -> Result<EngineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => EngineConfig::from_file(path)?,
        None => EngineConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        // a pool may already exist when called repeatedly in-process
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::debug!("worker pool already configured: {e}");
        }
    }
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Map(a) => cmd_map(a, &cfg),
        Command::Query(a) => cmd_query(a, &cfg),
        Command::Edit(a) => cmd_edit(a, &cfg),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("json"));
}

pub fn cmd_synth(args: &SynthArgs, cfg: &EngineConfig) -> Result<(), CliError> {
    let scene = synth_scene(cfg.seed, &args.preset.spec())?;
    scene.write(&args.out)?;
    print_json(&serde_json::json!({
        "out": args.out.display().to_string(),
        "seed": cfg.seed,
        "frames": scene.frames.len(),
        "labels": scene.ground_truth.label_names,
    }));
    Ok(())
}

pub fn cmd_map(args: &MapArgs, cfg: &EngineConfig) -> Result<(), CliError> {
    let dataset = Dataset::open(&args.dataset)?;
    let (map, stats) = build_map(&dataset, cfg)?;
    map.save(&args.out)?;
    print_json(&serde_json::to_value(stats).expect("stats serialize"));
    Ok(())
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number in '{s}'"))))
        .collect::<Result<_, _>>()?;
    if v.len() != 3 {
        return Err(CliError::Usage(format!("expected three comma-separated numbers, got '{s}'")));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn read_embedding(path: &Path) -> Result<Vec<f32>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let v: Vec<f32> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f32>().map_err(|_| CliError::Usage(format!("bad embedding value '{t}'"))))
        .collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err(CliError::Usage(format!("{} holds no embedding", path.display())));
    }
    Ok(v)
}

fn ground_truth(dataset: &Path) -> Result<GroundTruthSegmentation, CliError> {
    Dataset::open(dataset)?
        .ground_truth()?
        .ok_or_else(|| CliError::Usage(format!("{} has no ground truth", dataset.display())))
}

/// Builds a judge from its textual spec.
pub fn make_oracle(
    spec: &str,
    map: &SceneMap,
    gt: Option<&GroundTruthSegmentation>,
    cfg: &EngineConfig,
    timeout: f64,
    retries: usize,
) -> Result<Box<dyn ThresholdOracle>, CliError> {
    if spec == "gt" {
        let gt = gt.ok_or_else(|| CliError::Usage("the gt oracle needs --dataset with ground truth".into()))?;
        return Ok(Box::new(mask_oracle_for(&map.context(), gt, cfg.match_radius())));
    }
    if let Some(t) = spec.strip_prefix("constant:") {
        let target = t.parse().map_err(|_| CliError::Usage(format!("bad constant oracle '{spec}'")))?;
        return Ok(Box::new(ConstantOracle { target }));
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        return Ok(Box::new(MaskIouOracle::from_json_file(Path::new(path))?));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        if timeout.is_nan() || timeout <= 0.0 {
            return Err(CliError::Usage("--oracle-timeout must be positive".into()));
        }
        return Ok(Box::new(HttpOracle::new(spec, Duration::from_secs_f64(timeout), retries)));
    }
    Err(CliError::Usage(format!("unknown oracle '{spec}'")))
}

struct Resolved {
    map: SceneMap,
    result: QueryResult,
}

fn resolve_and_query(src: &QuerySource, cfg: &EngineConfig, keep_renders: bool) -> Result<Resolved, CliError> {
    let map = SceneMap::load(&src.map)?;
    let gt = src.dataset.as_deref().map(ground_truth).transpose()?;
    let (embedding, default_text) = match (&src.query, &src.embedding) {
        (Some(name), None) => {
            let gt = gt.as_ref().ok_or_else(|| CliError::Usage("--query needs --dataset".into()))?;
            let label = gt.label_by_name(name).ok_or_else(|| CliError::NoMatch(format!("no label named '{name}'")))?;
            (gt.label_embeddings[label as usize].clone(), label_name(gt, label))
        }
        (None, Some(path)) => (read_embedding(path)?, "query".to_string()),
        _ => return Err(CliError::Usage("give exactly one of --query or --embedding".into())),
    };
    let text = src.text.clone().unwrap_or(default_text);
    let mut qc = cfg.query_config();
    qc.keep_renders = keep_renders;
    let ctx = map.context();
    let result = match src.fixed {
        Some(delta) => fixed_query(&ctx, &embedding, &text, delta, &qc)?,
        None => {
            let spec = src.oracle.clone().unwrap_or_else(|| if gt.is_some() { "gt".into() } else { "constant:0.75".into() });
            let oracle = make_oracle(&spec, &map, gt.as_ref(), cfg, src.oracle_timeout, src.oracle_retries)?;
            adaptive_query(&ctx, &embedding, &text, oracle.as_ref(), &qc)?
        }
    };
    Ok(Resolved { map, result })
}

/// Tiles one round's renders: a row per viewpoint, a column per threshold.
fn render_grid(rows: &[Vec<RenderOutput>]) -> Option<RgbImage> {
    let first = rows.first()?.first()?;
    let (w, h) = (first.width, first.height);
    let cols = rows.iter().map(Vec::len).max()? as u32;
    let mut grid: RgbImage = ImageBuffer::from_pixel(w * cols, h * rows.len() as u32, Rgb([0, 0, 0]));
    for (r, row) in rows.iter().enumerate() {
        for (c, out) in row.iter().enumerate() {
            image::imageops::replace(&mut grid, &out.color_image(), (c as u32 * w) as i64, (r as u32 * h) as i64);
        }
    }
    Some(grid)
}

pub fn cmd_query(args: &QueryArgs, cfg: &EngineConfig) -> Result<(), CliError> {
    let Resolved { map, result } = resolve_and_query(&args.source, cfg, true)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("result.json"), serde_json::to_string_pretty(&result).expect("result serializes"))?;
    let ids: BTreeSet<u64> = result.all_ids().into_iter().collect();
    let selected: Vec<_> = map.gaussians.to_ply().into_iter().filter(|g| ids.contains(&(g.id as u64))).collect();
    write_gaussians(BufWriter::new(fs::File::create(args.out.join("selection.ply"))?), &selected)?;
    for c in &result.clusters {
        for (r, round) in c.rounds.iter().enumerate() {
            if let Some(grid) = render_grid(&round.renders) {
                grid.save(args.out.join(format!("grid_c{}_r{}.png", c.cluster_id, r)))?;
            }
        }
    }
    print_json(&serde_json::json!({
        "query": result.query,
        "strategy": result.strategy,
        "clusters": result.clusters.iter().map(|c| serde_json::json!({
            "cluster": c.cluster_id,
            "threshold": c.threshold,
            "selected": c.ids.len(),
            "descriptor": c.descriptor.map(|d| d.to_array().to_vec()),
        })).collect::<Vec<_>>(),
        "out": args.out.display().to_string(),
    }));
    Ok(())
}

fn edit_verb(args: &EditArgs) -> Result<EditVerb, CliError> {
    Ok(match args.verb {
        Verb::Translate => {
            EditVerb::Translate(parse_vec3(args.t.as_deref().ok_or_else(|| CliError::Usage("translate needs --t".into()))?)?)
        }
        Verb::Rotate => match (&args.rpy, &args.axis, args.angle) {
            (Some(rpy), None, None) => {
                let v = parse_vec3(rpy)?;
                EditVerb::rotate_rpy(v.x, v.y, v.z)
            }
            (None, Some(axis), Some(angle)) => {
                let a = parse_vec3(axis)?;
                if a.norm() == 0.0 {
                    return Err(CliError::Usage("rotation axis must be nonzero".into()));
                }
                EditVerb::rotate_axis_angle(a, angle)
            }
            _ => return Err(CliError::Usage("rotate needs --rpy or --axis with --angle".into())),
        },
        Verb::Delete => EditVerb::Delete,
    })
}

pub fn cmd_edit(args: &EditArgs, cfg: &EngineConfig) -> Result<(), CliError> {
    let verb = edit_verb(args)?;
    let Resolved { mut map, result } = resolve_and_query(&args.source, cfg, false)?;
    let targets: Vec<usize> = match args.target {
        Some(t) if t >= result.clusters.len() => {
            return Err(CliError::Usage(format!("target {t} out of range ({} clusters)", result.clusters.len())))
        }
        Some(t) => vec![t],
        None => (0..result.clusters.len()).collect(),
    };
    // overlapping cluster selections are edited once, by the first cluster
    let mut done = BTreeSet::new();
    for t in targets {
        let ids: Vec<u64> = result.clusters[t].ids.iter().copied().filter(|id| !done.contains(id)).collect();
        if ids.is_empty() {
            continue;
        }
        let mut report =
            edit_ids(&mut map.gaussians, &mut map.grid, &ids, &verb).map_err(|e| CliError::Other(e.to_string()))?;
        report.target = t;
        done.extend(ids);
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    }
    map.save(args.out.as_ref().unwrap_or(&args.source.map))?;
    Ok(())
}

pub fn cmd_render(args: &RenderArgs) -> Result<(), CliError> {
    let map = SceneMap::load(&args.map)?;
    let bg = parse_vec3(&args.background)?;
    let background = [bg.x, bg.y, bg.z];
    let ids = map.gaussians.ids();
    let mut summary = serde_json::Map::new();
    let out = match (args.keyframe, args.frame) {
        (Some(k), _) => {
            let kf = map
                .keyframes
                .iter()
                .find(|kf| kf.frame_id == k)
                .ok_or_else(|| CliError::Usage(format!("map has no keyframe {k}")))?;
            render(&ids, &map.gaussians, &kf.pose, &kf.intrinsics, background)
        }
        (None, Some(f)) => {
            let dataset = Dataset::open(args.dataset.as_ref().expect("clap enforces --dataset"))?;
            let frame = dataset.load_frame(f)?;
            let out = render(&ids, &map.gaussians, &frame.pose, dataset.intrinsics(), background);
            summary.insert("psnr".into(), psnr_u8(&out.to_rgb8(), &frame.color).map_err(|e| CliError::Other(e.to_string()))?.into());
            let depth = out.normalized_depth(MASK_ALPHA);
            let valid: Vec<bool> = depth.iter().zip(&frame.depth).map(|(&a, &b)| a > 0.0 && b > 0.0).collect();
            if let Ok(l1) = depth_l1(&depth, &frame.depth, &valid) {
                summary.insert("depth_l1".into(), l1.into());
            }
            out
        }
        (None, None) => return Err(CliError::Usage("give --keyframe or --frame".into())),
    };
    out.color_image().save(&args.out)?;
    if let Some(path) = &args.depth_out {
        out.depth_image().save(path)?;
    }
    summary.insert("width".into(), out.width.into());
    summary.insert("height".into(), out.height.into());
    summary.insert("primitives".into(), ids.len().into());
    print_json(&serde_json::Value::Object(summary));
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, cfg: &EngineConfig) -> Result<(), CliError> {
    let map = SceneMap::load(&args.map)?;
    let gt = ground_truth(&args.dataset)?;
    let strategies: Vec<Strategy> = if args.strategies.is_empty() {
        vec![Strategy::Adaptive, Strategy::Fixed(Strategy::DEFAULT_FIXED)]
    } else {
        args.strategies
            .iter()
            .map(|s| s.parse().map_err(|e: gsfuse_core::eval::EvalError| CliError::Usage(e.to_string())))
            .collect::<Result<_, _>>()?
    };
    let spec = args.oracle.as_deref().unwrap_or("gt");
    let oracle = make_oracle(spec, &map, Some(&gt), cfg, args.oracle_timeout, args.oracle_retries)?;
    let ctx = map.context();
    let runs = strategies.iter().map(|&s| segmentation_benchmark(&ctx, &gt, cfg, s, oracle.as_ref())).collect();
    let report = BenchmarkReport { runs };
    match &args.out {
        Some(path) => fs::write(path, report.to_json())?,
        None => println!("{}", report.to_json()),
    }
    if let Some(path) = &args.csv {
        fs::write(path, report.to_csv())?;
    }
    Ok(())
}
