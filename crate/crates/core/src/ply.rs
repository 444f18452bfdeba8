//! Minimal binary little-endian PLY reading and writing for point clouds and
//! Gaussian primitives.

use std::io::{self, BufRead, Write};

use nalgebra::{Matrix3, Point3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("malformed PLY header: {0}")]
    Header(String),
    #[error("missing vertex property '{0}'")]
    MissingProperty(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    U8,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uchar" | "uint8" => Self::U8,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// The vertex element of a binary PLY file, kept as raw rows.
#[derive(Debug, Clone)]
pub struct VertexTable {
    count: usize,
    props: Vec<(String, Scalar, usize)>,
    stride: usize,
    data: Vec<u8>,
}

impl VertexTable {
    pub fn read<R: BufRead>(mut r: R) -> Result<Self, PlyError> {
        let mut line = String::new();
        let next_line = |r: &mut R, line: &mut String| -> Result<(), PlyError> {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(PlyError::Header("unexpected end of header".into()));
            }
            Ok(())
        };
        next_line(&mut r, &mut line)?;
        if line.trim_end() != "ply" {
            return Err(PlyError::Header("missing 'ply' magic".into()));
        }
        let mut count = None;
        let mut props = Vec::new();
        let mut stride = 0;
        let mut in_vertex = false;
        loop {
            next_line(&mut r, &mut line)?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.as_slice() {
                ["format", "binary_little_endian", "1.0"] => {}
                ["format", other, ..] => return Err(PlyError::Header(format!("unsupported format {other}"))),
                ["comment", ..] | ["obj_info", ..] | [] => {}
                ["element", "vertex", n] => {
                    count = Some(n.parse::<usize>().map_err(|_| PlyError::Header(format!("bad count {n}")))?);
                    in_vertex = true;
                }
                ["element", name, _] => return Err(PlyError::Header(format!("unsupported element {name}"))),
                ["property", ty, name] if in_vertex => {
                    let scalar = Scalar::parse(ty).ok_or_else(|| PlyError::Header(format!("unsupported type {ty}")))?;
                    props.push((name.to_string(), scalar, stride));
                    stride += scalar.size();
                }
                ["end_header"] => break,
                _ => return Err(PlyError::Header(format!("unexpected line '{}'", line.trim_end()))),
            }
        }
        let count = count.ok_or_else(|| PlyError::Header("no vertex element".into()))?;
        let mut data = vec![0u8; count * stride];
        r.read_exact(&mut data)?;
        Ok(Self { count, props, stride, data })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Column accessor converting any numeric property to `f64`.
    pub fn column(&self, name: &str) -> Result<Vec<f64>, PlyError> {
        let &(_, ty, offset) = self
            .props
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| PlyError::MissingProperty(name.to_string()))?;
        let mut out = Vec::with_capacity(self.count);
        for row in 0..self.count {
            let at = row * self.stride + offset;
            let b = &self.data[at..at + ty.size()];
            out.push(match ty {
                Scalar::U8 => b[0] as f64,
                Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
                Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
                Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            });
        }
        Ok(out)
    }
}

fn header<W: Write>(w: &mut W, count: usize, props: &[(&str, &str)]) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {count}")?;
    for (ty, name) in props {
        writeln!(w, "property {ty} {name}")?;
    }
    writeln!(w, "end_header")
}

/// Writes `x, y, z` as `f32`.
pub fn write_points<W: Write>(mut w: W, points: &[Point3<f64>]) -> io::Result<()> {
    header(&mut w, points.len(), &[("float", "x"), ("float", "y"), ("float", "z")])?;
    for p in points {
        for c in [p.x, p.y, p.z] {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_points<R: BufRead>(r: R) -> Result<Vec<Point3<f64>>, PlyError> {
    let table = VertexTable::read(r)?;
    let (x, y, z) = (table.column("x")?, table.column("y")?, table.column("z")?);
    Ok((0..table.len()).map(|i| Point3::new(x[i], y[i], z[i])).collect())
}

/// One Gaussian as stored in PLY: f32 geometry, u8 color.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyGaussian {
    pub id: u32,
    pub mean: Point3<f64>,
    pub cov: Matrix3<f64>,
    pub opacity: f64,
    pub color: [u8; 3],
}

const GAUSSIAN_PROPS: [(&str, &str); 14] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("float", "opacity"),
    ("float", "cov_xx"),
    ("float", "cov_xy"),
    ("float", "cov_xz"),
    ("float", "cov_yy"),
    ("float", "cov_yz"),
    ("float", "cov_zz"),
    ("uint", "id"),
];

pub fn write_gaussians<W: Write>(mut w: W, gaussians: &[PlyGaussian]) -> io::Result<()> {
    header(&mut w, gaussians.len(), &GAUSSIAN_PROPS)?;
    for g in gaussians {
        for c in [g.mean.x, g.mean.y, g.mean.z] {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
        w.write_all(&g.color)?;
        w.write_all(&(g.opacity as f32).to_le_bytes())?;
        let c = &g.cov;
        for v in [c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.write_all(&g.id.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_gaussians<R: BufRead>(r: R) -> Result<Vec<PlyGaussian>, PlyError> {
    let t = VertexTable::read(r)?;
    let cols: Vec<Vec<f64>> =
        GAUSSIAN_PROPS.iter().map(|(_, name)| t.column(name)).collect::<Result<_, _>>()?;
    Ok((0..t.len())
        .map(|i| {
            let c = |k: usize| cols[k][i];
            let cov = Matrix3::new(c(7), c(8), c(9), c(8), c(10), c(11), c(9), c(11), c(12));
            PlyGaussian {
                id: c(13) as u32,
                mean: Point3::new(c(0), c(1), c(2)),
                cov,
                opacity: c(6),
                color: [c(3) as u8, c(4) as u8, c(5) as u8],
            }
        })
        .collect())
}
