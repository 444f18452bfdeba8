//! Forward Gaussian splatting on the CPU.
//!
//! Primitives are projected with the pinhole Jacobian, `Σ′ = J W Σ Wᵀ Jᵀ`
//! plus a small screen-space dilation, then composited front to back per
//! pixel. The image is split into 16×16 tiles that render independently.

use std::io::Write;

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Isometry3, Matrix2, Matrix2x3, Point2};

use crate::camera::CameraIntrinsics;
use crate::gaussian_map::{GaussianMap, GaussianPrimitive};
use crate::sparse_grid::GaussianId;

pub const TILE: u32 = 16;
/// Primitives closer than this (camera z, meters) are culled.
pub const Z_NEAR: f64 = 0.01;
/// Screen-space dilation added to the projected covariance diagonal, px².
pub const COV2D_DILATION: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
/// Footprint cutoff in Mahalanobis distance.
pub const FOOTPRINT_SIGMA: f64 = 3.0;
/// Half-extent of the Jacobian guard band, in units of the half field of view.
pub const FRUSTUM_GUARD: f64 = 1.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Projected2DGaussian {
    pub id: GaussianId,
    pub mean2d: Point2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Footprint half-extent in pixels.
    pub radius: f64,
}

impl Projected2DGaussian {
    /// Opacity contribution at pixel `(x, y)`, zero outside the footprint.
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let d = nalgebra::Vector2::new(x - self.mean2d.x, y - self.mean2d.y);
        let m2 = d.dot(&(self.conic * d));
        if m2 > FOOTPRINT_SIGMA * FOOTPRINT_SIGMA {
            return 0.0;
        }
        (self.opacity * (-0.5 * m2).exp()).clamp(0.0, MAX_ALPHA)
    }
}

/// Projects `prim` through the world-to-camera transform `view`. `None` when
/// the mean is closer than [`Z_NEAR`].
pub fn project_gaussian(
    prim: &GaussianPrimitive,
    view: &Isometry3<f64>,
    intr: &CameraIntrinsics,
) -> Option<Projected2DGaussian> {
    let mc = view * prim.mean;
    if mc.z <= Z_NEAR {
        return None;
    }
    let w = view.rotation.to_rotation_matrix().into_inner();
    let z = mc.z;
    // the Jacobian is evaluated at the mean pulled back inside a guard band
    // around the frustum, so splats beside the camera do not blow up
    let lim_x = FRUSTUM_GUARD * 0.5 * intr.width as f64 / intr.fx;
    let lim_y = FRUSTUM_GUARD * 0.5 * intr.height as f64 / intr.fy;
    let x = (mc.x / z).clamp(-lim_x, lim_x) * z;
    let y = (mc.y / z).clamp(-lim_y, lim_y) * z;
    let j = Matrix2x3::new(
        intr.fx / z,
        0.0,
        -intr.fx * x / (z * z),
        0.0,
        intr.fy / z,
        -intr.fy * y / (z * z),
    );
    let t = j * w;
    let mut cov2d = t * prim.cov * t.transpose();
    cov2d = (cov2d + cov2d.transpose()) * 0.5;
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;
    let conic = cov2d.try_inverse()?;
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let det = cov2d.determinant();
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Some(Projected2DGaussian {
        id: prim.id,
        mean2d: Point2::new(intr.fx * mc.x / z + intr.cx, intr.fy * mc.y / z + intr.cy),
        cov2d,
        conic,
        depth: z,
        opacity: prim.opacity,
        color: prim.color,
        radius: FOOTPRINT_SIGMA * lambda_max.sqrt(),
    })
}

/// Color, blended depth and accumulated opacity per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[f32; 3]>,
    /// `Σ dᵢ αᵢ Tᵢ`, zero where nothing is drawn.
    pub depth: Vec<f32>,
    pub alpha: Vec<f32>,
}

impl RenderOutput {
    /// Blended depth divided by accumulated opacity: an expected depth that is
    /// not pulled toward zero by residual transmittance. Zero where alpha is
    /// below `min_alpha`.
    pub fn normalized_depth(&self, min_alpha: f32) -> Vec<f32> {
        self.depth.iter().zip(&self.alpha).map(|(&d, &a)| if a >= min_alpha { d / a } else { 0.0 }).collect()
    }

    pub fn mask(&self, min_alpha: f32) -> Vec<bool> {
        self.alpha.iter().map(|&a| a >= min_alpha).collect()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.color.iter().flat_map(|c| c.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)).collect()
    }

    pub fn color_image(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        ImageBuffer::from_raw(self.width, self.height, self.to_rgb8()).expect("buffer matches size")
    }

    /// Normalized depth in millimeters as a 16-bit image.
    pub fn depth_image(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let mm = self
            .normalized_depth(0.5)
            .into_iter()
            .map(|d| (d as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16)
            .collect();
        ImageBuffer::from_raw(self.width, self.height, mm).expect("buffer matches size")
    }

    pub fn write_color_png<W: Write + std::io::Seek>(&self, w: &mut W) -> image::ImageResult<()> {
        self.color_image().write_to(w, image::ImageFormat::Png)
    }

    pub fn color_png_bytes(&self) -> Vec<u8> {
        let mut cursor = std::io::Cursor::new(Vec::new());
        self.write_color_png(&mut cursor).expect("in-memory PNG encoding");
        cursor.into_inner()
    }
}

/// Renders the primitives `ids` of `map` from the camera-to-world pose
/// `pose`. Unknown ids are ignored.
pub fn render(
    ids: &[GaussianId],
    map: &GaussianMap,
    pose: &Isometry3<f64>,
    intr: &CameraIntrinsics,
    background: [f64; 3],
) -> RenderOutput {
    let prims: Vec<&GaussianPrimitive> = ids.iter().filter_map(|&id| map.get(id)).collect();
    render_primitives(&prims, pose, intr, background)
}

pub fn render_primitives(
    prims: &[&GaussianPrimitive],
    pose: &Isometry3<f64>,
    intr: &CameraIntrinsics,
    background: [f64; 3],
) -> RenderOutput {
    let view = pose.inverse();
    let mut projected: Vec<Projected2DGaussian> =
        prims.iter().filter_map(|p| project_gaussian(p, &view, intr)).collect();
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
    composite(&projected, intr.width, intr.height, background)
}

struct Tile {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

/// Front-to-back compositing of depth-sorted splats.
pub fn composite(sorted: &[Projected2DGaussian], width: u32, height: u32, background: [f64; 3]) -> RenderOutput {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let tiles: Vec<Tile> = (0..tiles_y)
        .flat_map(|ty| {
            (0..tiles_x).map(move |tx| Tile {
                x0: tx * TILE,
                y0: ty * TILE,
                x1: ((tx + 1) * TILE).min(width),
                y1: ((ty + 1) * TILE).min(height),
            })
        })
        .collect();

    let render_tile = |tile: &Tile| -> Vec<([f32; 3], f32, f32)> {
        // splats whose footprint box touches the tile, still depth-ordered
        let local: Vec<&Projected2DGaussian> = sorted
            .iter()
            .filter(|g| {
                g.mean2d.x + g.radius >= tile.x0 as f64
                    && g.mean2d.x - g.radius <= (tile.x1 - 1) as f64
                    && g.mean2d.y + g.radius >= tile.y0 as f64
                    && g.mean2d.y - g.radius <= (tile.y1 - 1) as f64
            })
            .collect();
        let mut out = Vec::with_capacity(((tile.x1 - tile.x0) * (tile.y1 - tile.y0)) as usize);
        for y in tile.y0..tile.y1 {
            for x in tile.x0..tile.x1 {
                let (px, py) = (x as f64, y as f64);
                let mut t = 1.0f64;
                let mut c = [0.0f64; 3];
                let mut d = 0.0f64;
                for g in &local {
                    let a = g.alpha_at(px, py);
                    if a <= 0.0 {
                        continue;
                    }
                    let w = a * t;
                    for (ck, gk) in c.iter_mut().zip(&g.color) {
                        *ck += gk * w;
                    }
                    d += g.depth * w;
                    t *= 1.0 - a;
                }
                let color = [
                    (c[0] + background[0] * t) as f32,
                    (c[1] + background[1] * t) as f32,
                    (c[2] + background[2] * t) as f32,
                ];
                out.push((color, d as f32, (1.0 - t) as f32));
            }
        }
        out
    };

    #[cfg(feature = "parallel")]
    let rendered: Vec<Vec<([f32; 3], f32, f32)>> = {
        use rayon::prelude::*;
        tiles.par_iter().map(render_tile).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rendered: Vec<Vec<([f32; 3], f32, f32)>> = tiles.iter().map(render_tile).collect();

    let n = (width * height) as usize;
    let mut out = RenderOutput {
        width,
        height,
        color: vec![[0.0; 3]; n],
        depth: vec![0.0; n],
        alpha: vec![0.0; n],
    };
    for (tile, pixels) in tiles.iter().zip(rendered) {
        let mut it = pixels.into_iter();
        for y in tile.y0..tile.y1 {
            for x in tile.x0..tile.x1 {
                let (c, d, a) = it.next().expect("tile pixel count");
                let i = (y * width + x) as usize;
                out.color[i] = c;
                out.depth[i] = d;
                out.alpha[i] = a;
            }
        }
    }
    out
}
