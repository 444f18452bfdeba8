use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::Matrix4;

use super::{DatasetError, Frame, GroundTruthSegmentation, RegionEntry, RegionTable};
use crate::camera::{rigid_from_matrix, CameraIntrinsics};
use crate::ply;

/// An RGB-D dataset directory. Frames are loaded lazily, in index order.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    intrinsics: CameraIntrinsics,
    indices: Vec<usize>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let root = root.as_ref().to_path_buf();
        let intr_path = root.join("intrinsics.txt");
        if !intr_path.is_file() {
            return Err(DatasetError::MissingIntrinsics(intr_path));
        }
        let intrinsics = parse_intrinsics(&fs::read_to_string(&intr_path)?)?;
        let mut indices = Vec::new();
        let pose_dir = root.join("pose");
        if pose_dir.is_dir() {
            for entry in fs::read_dir(&pose_dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                    continue;
                }
                if let Some(idx) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
                    indices.push(idx);
                }
            }
        }
        indices.sort_unstable();
        Ok(Self { root, intrinsics, indices })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn frames(&self) -> FrameIter<'_> {
        FrameIter { dataset: self, pos: 0 }
    }

    /// Loads and validates one frame.
    pub fn load_frame(&self, index: usize) -> Result<Frame, DatasetError> {
        let name = format!("{index:06}");
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let wrap = |e: DatasetError| match e {
            e @ DatasetError::Frame { .. } => e,
            other => DatasetError::frame(index, other.to_string()),
        };

        let color = image::open(self.root.join("color").join(format!("{name}.png"))).map_err(|e| wrap(e.into()))?;
        if color.width() != w || color.height() != h {
            return Err(DatasetError::frame(
                index,
                format!("color is {}x{}, expected {w}x{h}", color.width(), color.height()),
            ));
        }
        let color = color.to_rgb8().into_raw();

        let depth = image::open(self.root.join("depth").join(format!("{name}.png"))).map_err(|e| wrap(e.into()))?;
        if depth.width() != w || depth.height() != h {
            return Err(DatasetError::frame(
                index,
                format!("depth is {}x{}, expected {w}x{h}", depth.width(), depth.height()),
            ));
        }
        let depth = match depth {
            image::DynamicImage::ImageLuma16(img) => img.into_raw().into_iter().map(|mm| mm as f32 / 1000.0).collect(),
            _ => return Err(DatasetError::frame(index, "depth must be a 16-bit grayscale PNG")),
        };

        let pose_text =
            fs::read_to_string(self.root.join("pose").join(format!("{name}.txt"))).map_err(|e| wrap(e.into()))?;
        let pose = parse_pose(&pose_text).map_err(|e| DatasetError::frame(index, e.to_string()))?;

        let region_dir = self.root.join("regions");
        let bin_path = region_dir.join(format!("{name}.bin"));
        let (region_map, region_table) = if bin_path.is_file() {
            let bytes = fs::read(&bin_path).map_err(|e| wrap(e.into()))?;
            if bytes.len() != 4 * (w as usize * h as usize) {
                return Err(DatasetError::frame(
                    index,
                    format!("region map has {} bytes, expected {}", bytes.len(), 4 * w as usize * h as usize),
                ));
            }
            let map = bytes.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect();
            let tab = File::open(region_dir.join(format!("{name}.tab"))).map_err(|e| wrap(e.into()))?;
            let table = read_region_table(BufReader::new(tab)).map_err(wrap)?;
            (map, table)
        } else {
            (Vec::new(), RegionTable::new())
        };

        let frame = Frame { index, width: w, height: h, color, depth, pose, region_map, region_table };
        frame.validate()?;
        Ok(frame)
    }

    /// Ground truth under `gt/`, if present.
    pub fn ground_truth(&self) -> Result<Option<GroundTruthSegmentation>, DatasetError> {
        let dir = self.root.join("gt");
        if !dir.join("points.ply").is_file() {
            return Ok(None);
        }
        let gt_err = |e: ply::PlyError| DatasetError::GroundTruth(e.to_string());
        let points = ply::read_points(BufReader::new(File::open(dir.join("points.ply"))?)).map_err(gt_err)?;

        let bytes = fs::read(dir.join("labels.bin"))?;
        let labels = read_u32_block(&bytes).ok_or_else(|| DatasetError::GroundTruth("malformed labels.bin".into()))?;

        let bytes = fs::read(dir.join("label_embeddings.bin"))?;
        let label_embeddings = read_embedding_block(&bytes)
            .ok_or_else(|| DatasetError::GroundTruth("malformed label_embeddings.bin".into()))?;

        let names_path = dir.join("label_names.txt");
        let label_names = if names_path.is_file() {
            fs::read_to_string(names_path)?.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
        } else {
            Vec::new()
        };
        let gt = GroundTruthSegmentation { points, labels, label_embeddings, label_names };
        gt.validate()?;
        Ok(Some(gt))
    }
}

pub struct FrameIter<'a> {
    dataset: &'a Dataset,
    pos: usize,
}

impl Iterator for FrameIter<'_> {
    type Item = Result<Frame, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let index = *self.dataset.indices.get(self.pos)?;
        self.pos += 1;
        Some(self.dataset.load_frame(index))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.dataset.indices.len() - self.pos;
        (n, Some(n))
    }
}

fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics, DatasetError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 6 {
        return Err(DatasetError::Intrinsics(format!("expected 6 values, found {}", tokens.len())));
    }
    let f = |i: usize| tokens[i].parse::<f64>().map_err(|_| DatasetError::Intrinsics(format!("bad number '{}'", tokens[i])));
    let u = |i: usize| tokens[i].parse::<u32>().map_err(|_| DatasetError::Intrinsics(format!("bad size '{}'", tokens[i])));
    CameraIntrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?).map_err(|e| DatasetError::Intrinsics(e.to_string()))
}

/// Parses a whitespace-separated row-major 4x4 camera-to-world matrix.
pub(crate) fn parse_pose(text: &str) -> Result<nalgebra::Isometry3<f64>, DatasetError> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| DatasetError::Scene(format!("bad pose value '{t}'"))))
        .collect::<Result<_, _>>()?;
    if values.len() != 16 {
        return Err(DatasetError::Scene(format!("pose needs 16 values, found {}", values.len())));
    }
    Ok(rigid_from_matrix(&Matrix4::from_row_slice(&values))?)
}

pub(crate) fn format_pose(pose: &nalgebra::Isometry3<f64>) -> String {
    let m = pose.to_homogeneous();
    let mut out = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Reads a region table: `count u32`, then per region `{id i32, confidence f32,
/// embedding f32×D}`. `D` follows from the byte length.
pub fn read_region_table<R: Read>(mut r: R) -> Result<RegionTable, DatasetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |why: &str| DatasetError::Scene(format!("malformed region table: {why}"));
    if bytes.len() < 4 {
        return Err(bad("truncated header"));
    }
    let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if count == 0 {
        return if body.is_empty() { Ok(RegionTable::new()) } else { Err(bad("trailing bytes")) };
    }
    if body.len() % count != 0 || (body.len() / count) < 8 || !(body.len() / count).is_multiple_of(4) {
        return Err(bad("size is not a whole number of records"));
    }
    let record = body.len() / count;
    let dim = (record - 8) / 4;
    let mut table = RegionTable::new();
    for rec in body.chunks_exact(record) {
        let id = i32::from_le_bytes(rec[..4].try_into().unwrap());
        let confidence = f32::from_le_bytes(rec[4..8].try_into().unwrap());
        let embedding = rec[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        debug_assert_eq!(rec[8..].len(), 4 * dim);
        if table.insert(id, RegionEntry { embedding, confidence }).is_some() {
            return Err(bad(&format!("duplicate region {id}")));
        }
    }
    Ok(table)
}

pub fn write_region_table<W: Write>(mut w: W, table: &RegionTable) -> std::io::Result<()> {
    w.write_all(&(table.len() as u32).to_le_bytes())?;
    for (id, entry) in table {
        w.write_all(&id.to_le_bytes())?;
        w.write_all(&entry.confidence.to_le_bytes())?;
        for x in &entry.embedding {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32_block(bytes: &[u8]) -> Option<Vec<u32>> {
    let n = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let body = &bytes[4..];
    (body.len() == 4 * n).then(|| body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_embedding_block(bytes: &[u8]) -> Option<Vec<Vec<f32>>> {
    let n = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let dim = u32::from_le_bytes(bytes.get(4..8)?.try_into().ok()?) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * n * dim {
        return None;
    }
    let values: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Some(if dim == 0 { vec![Vec::new(); n] } else { values.chunks_exact(dim).map(<[f32]>::to_vec).collect() })
}

/// Writes frames (and optional ground truth) in the dataset directory layout.
/// Depth is stored in whole millimeters.
pub fn write_dataset(
    root: impl AsRef<Path>,
    intrinsics: &CameraIntrinsics,
    frames: &[Frame],
    ground_truth: Option<&GroundTruthSegmentation>,
) -> Result<(), DatasetError> {
    let root = root.as_ref();
    for sub in ["color", "depth", "pose", "regions"] {
        fs::create_dir_all(root.join(sub))?;
    }
    fs::write(
        root.join("intrinsics.txt"),
        format!(
            "{} {} {} {} {} {}\n",
            intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy, intrinsics.width, intrinsics.height
        ),
    )?;
    for frame in frames {
        frame.validate()?;
        if frame.width != intrinsics.width || frame.height != intrinsics.height {
            return Err(DatasetError::frame(frame.index, "frame size differs from intrinsics"));
        }
        let name = format!("{:06}", frame.index);
        let color: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(frame.width, frame.height, frame.color.clone())
            .ok_or_else(|| DatasetError::frame(frame.index, "color buffer size"))?;
        color.save(root.join("color").join(format!("{name}.png")))?;
        let mm: Vec<u16> = frame.depth.iter().map(|&d| (d as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16).collect();
        let depth: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(frame.width, frame.height, mm)
            .ok_or_else(|| DatasetError::frame(frame.index, "depth buffer size"))?;
        depth.save(root.join("depth").join(format!("{name}.png")))?;
        fs::write(root.join("pose").join(format!("{name}.txt")), format_pose(&frame.pose))?;
        if frame.has_semantics() {
            let mut bin = Vec::with_capacity(4 * frame.region_map.len());
            for id in &frame.region_map {
                bin.extend_from_slice(&id.to_le_bytes());
            }
            fs::write(root.join("regions").join(format!("{name}.bin")), bin)?;
            let mut tab = BufWriter::new(File::create(root.join("regions").join(format!("{name}.tab")))?);
            write_region_table(&mut tab, &frame.region_table)?;
            tab.flush()?;
        }
    }
    if let Some(gt) = ground_truth {
        gt.validate()?;
        let dir = root.join("gt");
        fs::create_dir_all(&dir)?;
        ply::write_points(BufWriter::new(File::create(dir.join("points.ply"))?), &gt.points)?;
        let mut labels = (gt.labels.len() as u32).to_le_bytes().to_vec();
        for l in &gt.labels {
            labels.extend_from_slice(&l.to_le_bytes());
        }
        fs::write(dir.join("labels.bin"), labels)?;
        let dim = gt.label_embeddings.first().map_or(0, Vec::len);
        let mut emb = (gt.label_embeddings.len() as u32).to_le_bytes().to_vec();
        emb.extend_from_slice(&(dim as u32).to_le_bytes());
        for e in &gt.label_embeddings {
            if e.len() != dim {
                return Err(DatasetError::GroundTruth("label embeddings differ in dimension".into()));
            }
            for x in e {
                emb.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(dir.join("label_embeddings.bin"), emb)?;
        if !gt.label_names.is_empty() {
            fs::write(dir.join("label_names.txt"), gt.label_names.join("\n") + "\n")?;
        }
    }
    Ok(())
}
