//! File formats: ASCII OBJ, the `SDFG` grid container, little-endian point
//! clouds and binary PLY export.
//!
//! `SDFG` layout (all little-endian): magic `b"SDFG"`, `u32` version, three
//! `u32` dims, three `f64` origin, one `f64` spacing, then `dims` product
//! `f32` values, x fastest. Version 1 holds a 3D grid; version 2 holds a
//! heatmap with dims `(width, height, channels)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::{GridSpec, OccupancyGrid, PointCloud, SdfGrid, TriMesh};

pub const SDFG_MAGIC: &[u8; 4] = b"SDFG";
pub const SDFG_VERSION_GRID: u32 = 1;
pub const SDFG_VERSION_HEATMAP: u32 = 2;
const SDFG_HEADER_LEN: usize = 4 + 4 + 12 + 24 + 8;

/// Raw contents of an `SDFG` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfgContainer {
    pub version: u32,
    pub dims: [u32; 3],
    pub origin: [f64; 3],
    pub spacing: f64,
    pub values: Vec<f32>,
}

impl SdfgContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SDFG_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(SDFG_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for o in self.origin {
            out.extend_from_slice(&o.to_le_bytes());
        }
        out.extend_from_slice(&self.spacing.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < SDFG_HEADER_LEN || &bytes[..4] != SDFG_MAGIC {
            return Err(Error::format(path, "missing SDFG header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != SDFG_VERSION_GRID && version != SDFG_VERSION_HEATMAP {
            return Err(Error::format(path, format!("unsupported SDFG version {version}")));
        }
        let dims = [u32_at(8), u32_at(12), u32_at(16)];
        let origin = [f64_at(20), f64_at(28), f64_at(36)];
        let spacing = f64_at(44);
        let count = dims.iter().map(|&d| d as usize).product::<usize>();
        let body = &bytes[SDFG_HEADER_LEN..];
        if body.len() != 4 * count {
            return Err(Error::format(
                path,
                format!("expected {count} values, found {} bytes", body.len()),
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(SdfgContainer {
            version,
            dims,
            origin,
            spacing,
            values,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

impl From<&SdfGrid> for SdfgContainer {
    fn from(g: &SdfGrid) -> Self {
        SdfgContainer {
            version: SDFG_VERSION_GRID,
            dims: g.spec.dims.map(|d| d as u32),
            origin: g.spec.origin.into(),
            spacing: g.spec.spacing,
            values: g.values().iter().map(|&v| v as f32).collect(),
        }
    }
}

impl From<&OccupancyGrid> for SdfgContainer {
    fn from(g: &OccupancyGrid) -> Self {
        SdfgContainer {
            version: SDFG_VERSION_GRID,
            dims: g.spec.dims.map(|d| d as u32),
            origin: g.spec.origin.into(),
            spacing: g.spec.spacing,
            values: g.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        }
    }
}

impl SdfgContainer {
    fn grid_spec(&self, path: &Path) -> Result<GridSpec> {
        if self.version != SDFG_VERSION_GRID {
            return Err(Error::format(path, "not a 3D grid (version 1) container"));
        }
        GridSpec::new(
            Vec3::from(self.origin),
            self.dims.map(|d| d as usize),
            self.spacing,
        )
        .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn into_sdf(self, path: &Path) -> Result<SdfGrid> {
        let spec = self.grid_spec(path)?;
        SdfGrid::new(spec, self.values.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::format(path, e.to_string()))
    }

    /// Cells with value `> 0.5` are occupied.
    pub fn into_occupancy(self, path: &Path) -> Result<OccupancyGrid> {
        let spec = self.grid_spec(path)?;
        OccupancyGrid::from_cells(spec, self.values.iter().map(|&v| v > 0.5).collect())
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn write_sdf(g: &SdfGrid, path: &Path) -> Result<()> {
    SdfgContainer::from(g).write(path)
}

pub fn read_sdf(path: &Path) -> Result<SdfGrid> {
    SdfgContainer::read(path)?.into_sdf(path)
}

pub fn write_occupancy(g: &OccupancyGrid, path: &Path) -> Result<()> {
    SdfgContainer::from(g).write(path)
}

pub fn read_occupancy(path: &Path) -> Result<OccupancyGrid> {
    SdfgContainer::read(path)?.into_occupancy(path)
}

/// Parses ASCII OBJ `v`/`f` records; polygons are fan-triangulated and other
/// records ignored.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let err = |msg: &str| Error::format(path, format!("line {}: {msg}", lineno + 1));
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| err("bad vertex coordinate"))?;
                if coords.len() != 3 {
                    return Err(err("vertex needs 3 coordinates"));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut face = Vec::new();
                for t in tokens {
                    let idx: i64 = t
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| err("bad face index"))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(err("face index 0 is invalid"));
                    };
                    if resolved < 0 {
                        return Err(err("face index out of range"));
                    }
                    face.push(resolved as usize);
                }
                if face.len() < 3 {
                    return Err(err("face needs at least 3 vertices"));
                }
                for k in 1..face.len() - 1 {
                    triangles.push([face[0], face[k], face[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Shortest round-trip decimal for every coordinate.
pub fn obj_string(m: &TriMesh) -> String {
    let mut s = String::new();
    for v in m.vertices() {
        s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    for t in m.triangles() {
        s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    s
}

pub fn write_obj(m: &TriMesh, path: &Path) -> Result<()> {
    fs::write(path, obj_string(m)).map_err(|e| Error::io(path, e))
}

/// `u32` count followed by `f32` xyz triples, little-endian.
pub fn points_to_bytes(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 12 * pc.len());
    out.extend_from_slice(&(pc.len() as u32).to_le_bytes());
    for p in &pc.points {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn points_from_bytes(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if bytes.len() < 4 {
        return Err(Error::format(path, "truncated point file"));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if bytes.len() != 4 + 12 * n {
        return Err(Error::format(path, format!("expected {n} points")));
    }
    let points = bytes[4..]
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
            Vec3::new(f(0), f(4), f(8))
        })
        .collect();
    PointCloud::new(points).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_points(pc: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, points_to_bytes(pc)).map_err(|e| Error::io(path, e))
}

pub fn read_points(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    points_from_bytes(&bytes, path)
}

/// Binary little-endian PLY with `float` vertex positions and, when given,
/// triangle faces.
pub fn ply_bytes(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Vec<u8> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        vertices.len()
    );
    if !triangles.is_empty() {
        header.push_str(&format!(
            "element face {}\nproperty list uchar int vertex_indices\n",
            triangles.len()
        ));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for v in vertices {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    for t in triangles {
        out.push(3u8);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

pub fn write_ply(vertices: &[Vec3], triangles: &[[usize; 3]], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ply_bytes(vertices, triangles))
        .map_err(|e| Error::io(path, e))
}
