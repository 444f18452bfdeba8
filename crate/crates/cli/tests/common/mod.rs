//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use gsfuse_core::splat_render::Projected2DGaussian;
use gsfuse_core::VoxelKey;
use nalgebra::{Point3, Vector3};

fn cell_at(p: &Point3<f64>, s: f64) -> VoxelKey {
    VoxelKey::new((p.x / s).floor() as i32, (p.y / s).floor() as i32, (p.z / s).floor() as i32)
}

fn axes_changed(a: &VoxelKey, b: &VoxelKey) -> usize {
    (a.i != b.i) as usize + (a.j != b.j) as usize + (a.k != b.k) as usize
}

/// Cells between `ta` and `tb` that a fixed step would skip, found by
/// bisecting wherever the endpoints differ on more than one axis.
fn refine(o: &Point3<f64>, d: &Vector3<f64>, ta: f64, tb: f64, s: f64, out: &mut Vec<VoxelKey>) {
    let (ka, kb) = (cell_at(&(o + d * ta), s), cell_at(&(o + d * tb), s));
    if ka == kb || axes_changed(&ka, &kb) <= 1 || tb - ta < 1e-13 {
        if out.last() != Some(&kb) {
            out.push(kb);
        }
        return;
    }
    let tm = 0.5 * (ta + tb);
    refine(o, d, ta, tm, s, out);
    refine(o, d, tm, tb, s, out);
}

/// Cells visited by `o + t·d`, `t ∈ [t0, t1]`, sampled every `s/100` with
/// bisection refinement, in order of first visit.
pub fn supersample_traverse(o: &Point3<f64>, d: &Vector3<f64>, t0: f64, t1: f64, s: f64) -> Vec<VoxelKey> {
    let d = d.normalize();
    let h = s / 100.0;
    let mut out = vec![cell_at(&(o + d * t0), s)];
    let mut t = t0;
    while t < t1 {
        let next = (t + h).min(t1);
        refine(o, &d, t, next, s, &mut out);
        t = next;
    }
    out
}

/// Per-voxel `(φ, ω)` from replaying every ray's band in sample order. With
/// `unit_sample` false the blend is `φ ← (φω + φₛω′)/(ω + ω′)`, otherwise the
/// running mean `φ ← (φω + φₛ)/(ω + 1)`; both use `ω′ = min(ω_max, ω + 1)`.
pub struct TsdfReplay {
    pub voxels: HashMap<VoxelKey, (f64, f64)>,
    s: f64,
    tau: f64,
    max_weight: f64,
    unit_sample: bool,
}

impl TsdfReplay {
    pub fn new(s: f64, tau: f64, max_weight: f64, unit_sample: bool) -> Self {
        Self { voxels: HashMap::new(), s, tau, max_weight, unit_sample }
    }

    pub fn ray(&mut self, origin: &Point3<f64>, surface: &Point3<f64>) {
        let v = surface - origin;
        let depth = v.norm();
        let dir = v / depth;
        let t0 = (depth - self.tau).max(0.0);
        for key in supersample_traverse(origin, &dir, t0, depth + self.tau, self.s) {
            let c = Point3::new(
                (key.i as f64 + 0.5) * self.s,
                (key.j as f64 + 0.5) * self.s,
                (key.k as f64 + 0.5) * self.s,
            );
            let sdf = depth - (c - origin).dot(&dir);
            if sdf < -self.tau {
                continue;
            }
            let sample = sdf.min(self.tau);
            let (phi, w) = self.voxels.entry(key).or_insert((self.tau, 0.0));
            let w2 = self.max_weight.min(*w + 1.0);
            *phi = if self.unit_sample {
                (*phi * *w + sample) / (*w + 1.0)
            } else {
                (*phi * *w + sample * w2) / (*w + w2)
            };
            *w = w2;
        }
    }
}

/// Back-to-front "over" compositing of depth-sorted splats at one pixel.
/// Returns `(color, depth, alpha)`.
pub fn back_to_front(sorted: &[Projected2DGaussian], x: f64, y: f64, background: [f64; 3]) -> ([f64; 3], f64, f64) {
    let mut c = background;
    let mut d = 0.0;
    let mut a = 0.0;
    for g in sorted.iter().rev() {
        let al = g.alpha_at(x, y);
        for k in 0..3 {
            c[k] = al * g.color[k] + (1.0 - al) * c[k];
        }
        d = al * g.depth + (1.0 - al) * d;
        a = al + (1.0 - al) * a;
    }
    (c, d, a)
}

/// Textbook DBSCAN with brute-force neighborhoods. Points are visited in
/// index order; clusters grow breadth-first; border points keep the first
/// cluster that reaches them. Noise is `-1`.
pub fn reference_dbscan(points: &[Point3<f64>], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let neighbors = |i: usize| -> Vec<usize> { (0..n).filter(|&j| (points[i] - points[j]).norm() <= eps).collect() };
    let mut labels = vec![None::<i32>; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        let hood = neighbors(i);
        if hood.len() < min_pts {
            labels[i] = Some(-1);
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = Some(c);
        let mut queue: VecDeque<usize> = hood.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                Some(-1) => labels[j] = Some(c),
                None => {
                    labels[j] = Some(c);
                    let h = neighbors(j);
                    if h.len() >= min_pts {
                        queue.extend(h);
                    }
                }
                Some(_) => {}
            }
        }
    }
    labels.into_iter().map(|l| l.expect("every point labeled")).collect()
}

/// True when the two labelings agree up to a bijective renaming of clusters,
/// with noise fixed.
pub fn same_partition(a: &[i32], b: &[i32]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let (mut fwd, mut back) = (HashMap::new(), HashMap::new());
    for (&x, &y) in a.iter().zip(b) {
        if (x == -1) != (y == -1) {
            return false;
        }
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).expect("readable dir").map(|e| e.expect("entry").path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).expect("under root").display().to_string();
                out.insert(rel, fs::read(&p).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
