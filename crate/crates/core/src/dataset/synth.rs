//! Deterministic synthetic RGB-D scenes with analytic depth, per-pixel region
//! ids and ground-truth object points.
//!
//! The world is z-up. A room is a floor plus four walls with an open top.
//! Every object is split into a lower and an upper half at its center height.
//! The lower half carries the label embedding `ℓ`; the upper half carries
//! `κ·ℓ + √(1−κ²)·u` with `u ⟂ ℓ`, and an optional pedestal below the object
//! carries `ρ·ℓ + √(1−ρ²)·u`. Only the two halves belong to the object's
//! ground truth, so the similarity threshold that isolates an object lies
//! between `ρ` and `κ`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DVector, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{write_dataset, DatasetError, Frame, GroundTruthSegmentation, RegionEntry, RegionTable};
use crate::camera::{look_at, CameraIntrinsics};

pub const WALL_REGION: i32 = 0;
pub const FLOOR_REGION: i32 = 1;

/// Region id of part `part` (0 lower half, 1 upper half, 2 pedestal) of object `o`.
pub fn object_region(o: usize, part: usize) -> i32 {
    10 + 3 * o as i32 + part as i32
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Box { half_extents: Vector3<f64> },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportSpec {
    /// Half side of the square pedestal cross-section.
    pub half_width: f64,
    /// Cosine between the pedestal embedding and the object's label embedding.
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    pub center: Point3<f64>,
    /// Cosine between the upper half's embedding and the label embedding.
    pub part_similarity: f64,
    /// Pedestal from the floor up to the object's lowest point.
    pub support: Option<SupportSpec>,
}

impl ObjectSpec {
    fn half_extents(&self) -> Vector3<f64> {
        match &self.shape {
            Shape::Box { half_extents } => *half_extents,
            Shape::Sphere { radius } => Vector3::repeat(*radius),
        }
    }

    /// Axis-aligned bounds including the pedestal.
    fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let h = self.half_extents();
        let (mut lo, hi) = (self.center - h, self.center + h);
        if let Some(s) = &self.support {
            lo.x = lo.x.min(self.center.x - s.half_width);
            lo.y = lo.y.min(self.center.y - s.half_width);
            lo.z = 0.0;
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    /// Walls at `x = ±half_extent` and `y = ±half_extent`.
    pub half_extent: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub frames: usize,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    pub target: Point3<f64>,
    pub room: Option<RoomSpec>,
    pub objects: Vec<ObjectSpec>,
    pub embedding_dim: usize,
    /// Standard deviation of the per-frame, per-component embedding noise
    /// applied before renormalization.
    pub embedding_noise: f64,
    /// Cosine between the label embeddings of any two objects.
    pub inter_object_similarity: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::two_objects()
    }
}

impl SceneSpec {
    /// A box and a sphere on the floor of a room, with uniform semantics.
    pub fn two_objects() -> Self {
        Self {
            width: 160,
            height: 120,
            focal: 140.0,
            frames: 20,
            orbit_radius: 2.2,
            orbit_height: 1.4,
            target: Point3::new(0.0, 0.0, 0.3),
            room: Some(RoomSpec { half_extent: 3.0, height: 2.5 }),
            objects: vec![
                ObjectSpec {
                    name: "box".into(),
                    shape: Shape::Box { half_extents: Vector3::new(0.25, 0.2, 0.2) },
                    center: Point3::new(-0.7, 0.0, 0.2),
                    part_similarity: 1.0,
                    support: None,
                },
                ObjectSpec {
                    name: "ball".into(),
                    shape: Shape::Sphere { radius: 0.25 },
                    center: Point3::new(0.7, 0.1, 0.25),
                    part_similarity: 1.0,
                    support: None,
                },
            ],
            embedding_dim: 16,
            embedding_noise: 0.03,
            inter_object_similarity: 0.0,
        }
    }

    /// Six objects on pedestals around a ring. Object `o` has center
    /// similarity `c_o ∈ {0.55, …, 0.90}`: upper half `κ = min(c+0.1, 1)`,
    /// pedestal `ρ = c − 0.1`, so each object's isolating threshold sits near
    /// a different value.
    pub fn ablation() -> Self {
        let centers = [0.55, 0.62, 0.69, 0.76, 0.83, 0.90];
        let names = ["crate", "globe", "drum", "orb", "cube", "pearl"];
        let objects = centers
            .iter()
            .enumerate()
            .map(|(o, &c)| {
                let angle = std::f64::consts::TAU * o as f64 / centers.len() as f64 + 0.3;
                let (x, y) = (1.05 * angle.cos(), 1.05 * angle.sin());
                let shape = if o % 2 == 0 {
                    Shape::Box { half_extents: Vector3::new(0.2, 0.2, 0.2) }
                } else {
                    Shape::Sphere { radius: 0.22 }
                };
                let half_h = if o % 2 == 0 { 0.2 } else { 0.22 };
                ObjectSpec {
                    name: names[o].into(),
                    shape,
                    center: Point3::new(x, y, 0.4 + half_h),
                    part_similarity: (c + 0.1f64).min(1.0),
                    support: Some(SupportSpec { half_width: 0.15, similarity: c - 0.1 }),
                }
            })
            .collect();
        Self {
            width: 160,
            height: 120,
            focal: 140.0,
            frames: 60,
            orbit_radius: 2.2,
            orbit_height: 1.5,
            target: Point3::new(0.0, 0.0, 0.5),
            room: Some(RoomSpec { half_extent: 3.0, height: 2.5 }),
            objects,
            embedding_dim: 16,
            embedding_noise: 0.03,
            inter_object_similarity: 0.0,
        }
    }

    /// A single floating sphere seen from a ring of ten cameras, no room.
    pub fn sphere() -> Self {
        Self {
            width: 128,
            height: 96,
            focal: 110.0,
            frames: 10,
            orbit_radius: 1.6,
            orbit_height: 0.5,
            target: Point3::new(0.0, 0.0, 0.0),
            room: None,
            objects: vec![ObjectSpec {
                name: "sphere".into(),
                shape: Shape::Sphere { radius: 0.4 },
                center: Point3::new(0.0, 0.0, 0.0),
                part_similarity: 1.0,
                support: None,
            }],
            embedding_dim: 16,
            embedding_noise: 0.03,
            inter_object_similarity: 0.0,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, DatasetError> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
        .map_err(|e| DatasetError::Scene(e.to_string()))
    }

    fn basis_size(&self) -> usize {
        2 + 2 * self.objects.len() + usize::from(self.inter_object_similarity != 0.0)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let err = |m: String| Err(DatasetError::Scene(m));
        if self.frames == 0 {
            return err("at least one frame is required".into());
        }
        if self.basis_size() > self.embedding_dim {
            return err(format!(
                "{} objects need {} orthogonal embedding directions, dimension is {}",
                self.objects.len(),
                self.basis_size(),
                self.embedding_dim
            ));
        }
        if !(0.0..1.0).contains(&self.inter_object_similarity) {
            return err("inter-object similarity must lie in [0, 1)".into());
        }
        if !(self.embedding_noise >= 0.0) {
            return err("embedding noise must be non-negative".into());
        }
        for o in &self.objects {
            let sizes_ok = match &o.shape {
                Shape::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
                Shape::Sphere { radius } => *radius > 0.0,
            };
            if !sizes_ok {
                return err(format!("object '{}' has a non-positive size", o.name));
            }
            if !(-1.0..=1.0).contains(&o.part_similarity) {
                return err(format!("object '{}' part similarity outside [-1, 1]", o.name));
            }
            if let Some(s) = &o.support {
                if !(-1.0..=1.0).contains(&s.similarity) || !(s.half_width > 0.0) {
                    return err(format!("object '{}' has an invalid support", o.name));
                }
                if o.center.z - o.half_extents().z <= 0.0 {
                    return err(format!("object '{}' has a support but rests below the floor", o.name));
                }
            }
            if let Some(room) = &self.room {
                let (lo, hi) = o.bounds();
                if lo.z < 0.0
                    || hi.z > room.height
                    || lo.x.min(lo.y) < -room.half_extent
                    || hi.x.max(hi.y) > room.half_extent
                {
                    return err(format!("object '{}' does not fit in the room", o.name));
                }
            }
        }
        for (a, oa) in self.objects.iter().enumerate() {
            for ob in &self.objects[a + 1..] {
                let (la, ha) = oa.bounds();
                let (lb, hb) = ob.bounds();
                if (0..3).all(|i| la[i] < hb[i] && lb[i] < ha[i]) {
                    return err(format!("objects '{}' and '{}' overlap", oa.name, ob.name));
                }
            }
        }
        Ok(())
    }
}

/// A generated scene held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub ground_truth: GroundTruthSegmentation,
    /// Noise-free embedding of every region id.
    pub region_embeddings: BTreeMap<i32, Vec<f64>>,
}

impl SyntheticScene {
    pub fn write(&self, root: impl AsRef<Path>) -> Result<(), DatasetError> {
        write_dataset(root, &self.intrinsics, &self.frames, Some(&self.ground_truth))
    }

    /// Euclidean distance from `p` to the nearest scene surface.
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        if let Some(room) = &self.spec.room {
            let l = room.half_extent;
            best = best.min(rect_distance(p, 2, 0.0, [(-l, l), (-l, l)]));
            best = best.min(rect_distance(p, 0, l, [(-l, l), (0.0, room.height)]));
            best = best.min(rect_distance(p, 0, -l, [(-l, l), (0.0, room.height)]));
            best = best.min(rect_distance(p, 1, l, [(-l, l), (0.0, room.height)]));
            best = best.min(rect_distance(p, 1, -l, [(-l, l), (0.0, room.height)]));
        }
        for o in &self.spec.objects {
            best = best.min(match &o.shape {
                Shape::Sphere { radius } => ((p - o.center).norm() - radius).abs(),
                Shape::Box { half_extents } => box_surface_distance(p, &o.center, half_extents),
            });
            if let Some((c, h)) = pedestal_box(o) {
                best = best.min(box_surface_distance(p, &c, &h));
            }
        }
        best
    }
}

fn rect_distance(p: &Point3<f64>, axis: usize, at: f64, ranges: [(f64, f64); 2]) -> f64 {
    let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let mut d2 = (p[axis] - at).powi(2);
    for (k, &a) in others.iter().enumerate() {
        let (lo, hi) = ranges[k];
        let e = if p[a] < lo { lo - p[a] } else if p[a] > hi { p[a] - hi } else { 0.0 };
        d2 += e * e;
    }
    d2.sqrt()
}

fn box_surface_distance(p: &Point3<f64>, c: &Point3<f64>, h: &Vector3<f64>) -> f64 {
    let q = (p - c).abs() - h;
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.max().min(0.0);
    (outside + inside).abs()
}

fn pedestal_box(o: &ObjectSpec) -> Option<(Point3<f64>, Vector3<f64>)> {
    let s = o.support.as_ref()?;
    let top = o.center.z - o.half_extents().z;
    Some((Point3::new(o.center.x, o.center.y, top / 2.0), Vector3::new(s.half_width, s.half_width, top / 2.0)))
}

struct Hit {
    t: f64,
    region: i32,
    normal: Vector3<f64>,
}

fn ray_box(o: &Point3<f64>, d: &Vector3<f64>, c: &Point3<f64>, h: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    for a in 0..3 {
        let (lo, hi) = (c[a] - h[a], c[a] + h[a]);
        if d[a] == 0.0 {
            if o[a] < lo || o[a] > hi {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis = a;
        }
        t1 = t1.min(tb);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut n = Vector3::zeros();
    n[axis] = -d[axis].signum();
    Some((t0, n))
}

fn ray_sphere(o: &Point3<f64>, d: &Vector3<f64>, c: &Point3<f64>, r: f64) -> Option<f64> {
    let oc = o - c;
    let a = d.norm_squared();
    let b = oc.dot(d);
    let disc = b * b - a * (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t > 0.0).then_some(t)
}

/// Casts `origin + t·dir`; with `dir` the camera-frame pixel ray `(x, y, 1)`
/// rotated to world, `t` is the z-depth.
fn cast(spec: &SceneSpec, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut offer = |t: f64, region: i32, normal: Vector3<f64>| {
        if t > 0.0 && best.as_ref().is_none_or(|b| t < b.t) {
            best = Some(Hit { t, region, normal });
        }
    };
    if let Some(room) = &spec.room {
        let l = room.half_extent;
        if dir.z < 0.0 {
            let t = -origin.z / dir.z;
            let p = origin + dir * t;
            if p.x.abs() <= l && p.y.abs() <= l {
                offer(t, FLOOR_REGION, Vector3::z());
            }
        }
        for axis in 0..2 {
            for side in [-1.0, 1.0] {
                if dir[axis] * side <= 0.0 {
                    continue;
                }
                let t = (side * l - origin[axis]) / dir[axis];
                let p = origin + dir * t;
                if p[1 - axis].abs() <= l && (0.0..=room.height).contains(&p.z) {
                    let mut n = Vector3::zeros();
                    n[axis] = -side;
                    offer(t, WALL_REGION, n);
                }
            }
        }
    }
    for (idx, o) in spec.objects.iter().enumerate() {
        match &o.shape {
            Shape::Box { half_extents } => {
                if let Some((t, n)) = ray_box(origin, dir, &o.center, half_extents) {
                    let z = origin.z + dir.z * t;
                    offer(t, object_region(idx, usize::from(z >= o.center.z)), n);
                }
            }
            Shape::Sphere { radius } => {
                if let Some(t) = ray_sphere(origin, dir, &o.center, *radius) {
                    let p = origin + dir * t;
                    offer(t, object_region(idx, usize::from(p.z >= o.center.z)), (p - o.center) / *radius);
                }
            }
        }
        if let Some((c, h)) = pedestal_box(o) {
            if let Some((t, n)) = ray_box(origin, dir, &c, &h) {
                offer(t, object_region(idx, 2), n);
            }
        }
    }
    best
}

fn base_color(region: i32, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match region {
        WALL_REGION => [0.82, 0.8, 0.74],
        FLOOR_REGION => [0.55, 0.45, 0.36],
        _ => [rng.random_range(0.15..0.95), rng.random_range(0.15..0.95), rng.random_range(0.15..0.95)],
    }
}

fn orthonormal_basis(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let n = v.norm();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    basis
}

fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    rng
}

/// Generates the scene for `seed`. Identical inputs give identical scenes.
pub fn synth_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene, DatasetError> {
    spec.validate()?;
    let intrinsics = spec.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = orthonormal_basis(spec.basis_size(), spec.embedding_dim, &mut rng);

    let sigma = spec.inter_object_similarity;
    let mut region_embeddings = BTreeMap::new();
    let mut colors = BTreeMap::new();
    region_embeddings.insert(WALL_REGION, basis[0].iter().copied().collect::<Vec<_>>());
    region_embeddings.insert(FLOOR_REGION, basis[1].iter().copied().collect());
    colors.insert(WALL_REGION, base_color(WALL_REGION, &mut rng));
    colors.insert(FLOOR_REGION, base_color(FLOOR_REGION, &mut rng));
    let mut label_embeddings = Vec::new();
    for (o, obj) in spec.objects.iter().enumerate() {
        let (b, u) = (&basis[2 + 2 * o], &basis[3 + 2 * o]);
        let label = if sigma > 0.0 { &basis[basis.len() - 1] * sigma.sqrt() + b * (1.0 - sigma).sqrt() } else { b.clone() };
        let mix = |c: f64| (&label * c + u * (1.0 - c * c).max(0.0).sqrt()).iter().copied().collect::<Vec<f64>>();
        region_embeddings.insert(object_region(o, 0), label.iter().copied().collect());
        region_embeddings.insert(object_region(o, 1), mix(obj.part_similarity));
        label_embeddings.push(label.iter().map(|&x| x as f32).collect::<Vec<f32>>());
        let c = base_color(object_region(o, 0), &mut rng);
        colors.insert(object_region(o, 0), c);
        colors.insert(object_region(o, 1), [c[0] * 0.75, c[1] * 0.75, c[2] * 0.75]);
        if let Some(s) = &obj.support {
            region_embeddings.insert(object_region(o, 2), mix(s.similarity));
            colors.insert(object_region(o, 2), [0.4, 0.45, 0.55]);
        }
    }

    let light = Vector3::new(0.3, 0.5, 1.0).normalize();
    let n_px = intrinsics.pixel_count();
    let mut frames = Vec::with_capacity(spec.frames);
    // (label, cell) → first point seen in that 1 cm cell
    let mut gt_cells: BTreeMap<(u32, i64, i64, i64), Point3<f64>> = BTreeMap::new();
    for f in 0..spec.frames {
        let theta = std::f64::consts::TAU * f as f64 / spec.frames as f64;
        let eye = Point3::new(spec.orbit_radius * theta.cos(), spec.orbit_radius * theta.sin(), spec.orbit_height);
        let pose = look_at(&eye, &spec.target, &Vector3::z());
        let rot = pose.rotation.to_rotation_matrix();

        let mut color = vec![0u8; 3 * n_px];
        let mut depth = vec![0f32; n_px];
        let mut region_map = vec![-1i32; n_px];
        for v in 0..spec.height {
            for u in 0..spec.width {
                let i = (v * spec.width + u) as usize;
                let cam = Vector3::new((u as f64 - intrinsics.cx) / intrinsics.fx, (v as f64 - intrinsics.cy) / intrinsics.fy, 1.0);
                let dir = rot * cam;
                let Some(hit) = cast(spec, &eye, &dir) else { continue };
                depth[i] = hit.t as f32;
                region_map[i] = hit.region;
                let shade = 0.55 + 0.45 * hit.normal.dot(&light).abs();
                let base = colors[&hit.region];
                for ch in 0..3 {
                    color[3 * i + ch] = (base[ch] * shade * 255.0).round().clamp(0.0, 255.0) as u8;
                }
                if hit.region >= 10 && (hit.region - 10) % 3 != 2 {
                    let label = ((hit.region - 10) / 3) as u32;
                    let p = eye + dir * hit.t;
                    let cell = ((p.x / 0.01).floor() as i64, (p.y / 0.01).floor() as i64, (p.z / 0.01).floor() as i64);
                    gt_cells.entry((label, cell.0, cell.1, cell.2)).or_insert(p);
                }
            }
        }

        let mut rng = frame_rng(seed, f);
        let mut present: Vec<i32> = region_map.iter().copied().filter(|&r| r >= 0).collect();
        present.sort_unstable();
        present.dedup();
        let mut region_table = RegionTable::new();
        for id in present {
            let base = &region_embeddings[&id];
            let noisy: Vec<f64> =
                base.iter().map(|&x| x + spec.embedding_noise * rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = noisy.iter().map(|x| x * x).sum::<f64>().sqrt();
            let embedding = noisy.iter().map(|x| (x / norm) as f32).collect();
            let confidence = rng.random_range(0.5f32..=1.0);
            region_table.insert(id, RegionEntry { embedding, confidence });
        }
        frames.push(Frame { index: f, width: spec.width, height: spec.height, color, depth, pose, region_map, region_table });
    }

    let (labels, points) = gt_cells.into_iter().map(|((l, ..), p)| (l, p)).unzip();
    let ground_truth = GroundTruthSegmentation {
        points,
        labels,
        label_embeddings,
        label_names: spec.objects.iter().map(|o| o.name.clone()).collect(),
    };
    Ok(SyntheticScene { spec: spec.clone(), seed, intrinsics, frames, ground_truth, region_embeddings })
}
