//! Meshes, point clouds, voxel grids and signed distance fields.

pub mod io;
mod raycast;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Pose9DoF, Vec3};

/// Voxels added on every side of the canonical cube by [`mesh_to_sdf`].
pub const SDF_PADDING: usize = 2;

/// Fraction of voxels on which the three parity votes may disagree.
pub const MAX_VOTE_DISAGREEMENT: f64 = 0.01;

/// Triangle mesh with 0-based vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        if let Some(v) = vertices.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {:?}", v.as_slice())));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::InvalidMesh(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        Ok(TriMesh {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        self.triangles[i].map(|k| self.vertices[k])
    }

    pub fn triangle_soup(&self) -> Vec<[Vec3; 3]> {
        (0..self.triangles.len()).map(|i| self.triangle(i)).collect()
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds_of(&self.vertices)
    }

    /// Copy with every vertex mapped through `pose`.
    pub fn transformed(&self, pose: &Pose9DoF) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| triangle_area(&self.triangle(i))).sum()
    }
}

pub(crate) fn bounds_of(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

fn triangle_area(t: &[Vec3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

/// Surface samples of a shape, in that shape's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("point cloud is empty".into()));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose9DoF) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
        }
    }

    /// Rounds every coordinate to `f32` precision, matching the on-disk form.
    pub fn quantized(&self) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p.map(|c| c as f32 as f64)).collect(),
        }
    }
}

/// Regular grid of voxel centers: center of voxel `(i, j, k)` is
/// `origin + spacing·(i, j, k)`. Flat storage is x-fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec3,
    pub dims: [usize; 3],
    pub spacing: f64,
}

impl GridSpec {
    pub fn new(origin: Vec3, dims: [usize; 3], spacing: f64) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid needs positive dims and spacing, got {dims:?} / {spacing}"
            )));
        }
        Ok(GridSpec {
            origin,
            dims,
            spacing,
        })
    }

    /// Cubic voxels covering the box `[lo, hi]`, with `resolution` voxels
    /// along its longest side.
    pub fn covering(lo: &Vec3, hi: &Vec3, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidResolution(resolution));
        }
        let extent = hi - lo;
        let longest = extent.max();
        if !(longest > 0.0) || !longest.is_finite() {
            return Err(Error::InvalidArgument("cannot cover an empty box".into()));
        }
        let spacing = longest / resolution as f64;
        let dims = [0, 1, 2].map(|a| ((extent[a] / spacing - 1e-9).ceil() as usize).clamp(1, resolution));
        let origin = lo + Vec3::repeat(0.5 * spacing);
        GridSpec::new(origin, dims, spacing)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    pub fn unflatten(&self, flat: usize) -> [usize; 3] {
        let x = flat % self.dims[0];
        let y = (flat / self.dims[0]) % self.dims[1];
        let z = flat / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    pub fn center_coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + self.spacing * i as f64
    }

    pub fn center(&self, idx: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.center_coord(0, idx[0]),
            self.center_coord(1, idx[1]),
            self.center_coord(2, idx[2]),
        )
    }

    /// Inclusive index range of centers with coordinate in `[lo, hi]` along `axis`.
    pub(crate) fn index_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let n = self.dims[axis] as f64;
        // One extra index each way absorbs rounding in the division.
        let a = ((lo - self.origin[axis]) / self.spacing).ceil() - 1.0;
        let b = ((hi - self.origin[axis]) / self.spacing).floor() + 1.0;
        let (a, b) = (a.max(0.0), b.min(n - 1.0));
        (a <= b).then(|| (a as usize, b as usize))
    }

    /// Bounds of the region covered by the voxel cells (not centers).
    pub fn cell_bounds(&self) -> (Vec3, Vec3) {
        let lo = self.origin - Vec3::repeat(0.5 * self.spacing);
        let hi = lo + Vec3::from_fn(|a, _| self.dims[a] as f64 * self.spacing);
        (lo, hi)
    }
}

/// Sampled signed distance field (negative inside).
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub spec: GridSpec,
    values: Vec<f64>,
}

impl SdfGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::MismatchedLengths(values.len(), spec.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid holds non-finite values".into()));
        }
        Ok(SdfGrid { spec, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, idx: [usize; 3]) -> f64 {
        self.values[self.spec.flat_index(idx)]
    }

    /// Rounds every value to `f32` precision, matching the on-disk form.
    pub fn quantized(&self) -> SdfGrid {
        SdfGrid {
            spec: self.spec,
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    /// Value and gradient at `x`, or `None` when `x` lacks 8 surrounding samples.
    pub fn sample(&self, x: &Vec3) -> Option<(f64, Vec3)> {
        let spec = &self.spec;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = spec.dims[a];
            let mut u = (x[a] - spec.origin[a]) / spec.spacing;
            // Centers reconstructed from `origin + spacing·i` land within
            // rounding of an integer; snap so stored values come back exactly.
            if (u - u.round()).abs() < 1e-10 {
                u = u.round();
            }
            if n < 2 || !(u >= 0.0) || u > (n - 1) as f64 {
                return None;
            }
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let [fx, fy, fz] = frac;
        let c = |dx: usize, dy: usize, dz: usize| {
            self.values[spec.flat_index([base[0] + dx, base[1] + dy, base[2] + dz])]
        };
        let (c000, c100, c010, c110) = (c(0, 0, 0), c(1, 0, 0), c(0, 1, 0), c(1, 1, 0));
        let (c001, c101, c011, c111) = (c(0, 0, 1), c(1, 0, 1), c(0, 1, 1), c(1, 1, 1));
        // Blend along x, then y, then z.
        let c00 = c000 + fx * (c100 - c000);
        let c10 = c010 + fx * (c110 - c010);
        let c01 = c001 + fx * (c101 - c001);
        let c11 = c011 + fx * (c111 - c011);
        let c0 = c00 + fy * (c10 - c00);
        let c1 = c01 + fy * (c11 - c01);
        let value = c0 + fz * (c1 - c0);

        let dx0 = (1.0 - fy) * (c100 - c000) + fy * (c110 - c010);
        let dx1 = (1.0 - fy) * (c101 - c001) + fy * (c111 - c011);
        let d_dx = (1.0 - fz) * dx0 + fz * dx1;
        let d_dy = (1.0 - fz) * (c10 - c00) + fz * (c11 - c01);
        let d_dz = c1 - c0;
        Some((value, Vec3::new(d_dx, d_dy, d_dz) / spec.spacing))
    }

    /// Distance, in voxel units, from `x` to the nearest plane through sample
    /// centers. The interpolated gradient jumps across those planes.
    pub fn cell_face_distance(&self, x: &Vec3) -> f64 {
        (0..3)
            .map(|a| {
                let u = (x[a] - self.spec.origin[a]) / self.spec.spacing;
                (u - u.round()).abs()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Diameter of the cell bounds; every valid SDF value is bounded by it.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.spec.cell_bounds();
        (hi - lo).norm()
    }
}

/// Trilinear value and its exact gradient with respect to `x`.
pub fn trilinear_sample(g: &SdfGrid, x: &Vec3) -> Result<(f64, Vec3)> {
    g.sample(x).ok_or(Error::OutOfBounds([x[0], x[1], x[2]]))
}

/// `max(−φ, 0)`: positive depth inside, zero outside.
pub fn clamp_interior(g: &SdfGrid) -> SdfGrid {
    SdfGrid {
        spec: g.spec,
        values: g.values.iter().map(|&v| (-v).max(0.0)).collect(),
    }
}

/// Boolean voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Self {
        OccupancyGrid {
            spec,
            cells: vec![false; spec.len()],
        }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != spec.len() {
            return Err(Error::MismatchedLengths(cells.len(), spec.len()));
        }
        Ok(OccupancyGrid { spec, cells })
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, idx: [usize; 3]) -> bool {
        self.cells[self.spec.flat_index(idx)]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn union_with(&mut self, other: &OccupancyGrid) {
        assert_eq!(self.spec, other.spec, "occupancy grids must share a spec");
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= *b;
        }
    }

    pub fn intersection_count(&self, other: &OccupancyGrid) -> usize {
        assert_eq!(self.spec, other.spec, "occupancy grids must share a spec");
        self.cells.iter().zip(&other.cells).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &OccupancyGrid) -> usize {
        assert_eq!(self.spec, other.spec, "occupancy grids must share a spec");
        self.cells.iter().zip(&other.cells).filter(|(a, b)| **a || **b).count()
    }
}

/// Centers the mesh on its vertex centroid, then scales each axis
/// independently so the mesh fits the unit cube `[−0.5, 0.5]³`, with the
/// farthest vertex along each axis landing on the cube boundary.
pub fn canonicalize_mesh(m: &TriMesh) -> Result<TriMesh> {
    let n = m.vertices.len() as f64;
    let centroid = m.vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v) / n;
    let (lo, hi) = m.bounds();
    if let Some(axis) = (0..3).find(|&a| hi[a] - lo[a] < 1e-12) {
        return Err(Error::DegenerateMesh(format!("axis {axis} has zero extent")));
    }
    let reach = Vec3::from_fn(|a, _| (hi[a] - centroid[a]).max(centroid[a] - lo[a]));
    let scale = reach.map(|r| 0.5 / r);
    let vertices = m
        .vertices
        .iter()
        .map(|v| (v - centroid).component_mul(&scale))
        .collect();
    TriMesh::new(vertices, m.triangles.clone())
}

/// Grid used for canonical shapes: `resolution` voxels per axis covering the
/// unit cube plus [`SDF_PADDING`] voxels on each side.
pub fn canonical_grid(resolution: usize) -> Result<GridSpec> {
    if resolution < 2 * SDF_PADDING + 1 {
        return Err(Error::InvalidResolution(resolution));
    }
    let spacing = 1.0 / (resolution - 2 * SDF_PADDING) as f64;
    let first = -0.5 - (SDF_PADDING as f64 - 0.5) * spacing;
    GridSpec::new(Vec3::repeat(first), [resolution; 3], spacing)
}

/// Closest point on triangle `t` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, t: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

fn unsigned_distance(tris: &[[Vec3; 3]], p: &Vec3) -> f64 {
    tris.iter()
        .map(|t| (closest_point_on_triangle(p, t) - p).norm_squared())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Signed distance from `p` to the mesh surface, negative inside.
pub fn signed_distance(m: &TriMesh, p: &Vec3) -> f64 {
    let tris = m.triangle_soup();
    let d = unsigned_distance(&tris, p);
    if raycast::point_inside(&tris, p) {
        -d
    } else {
        d
    }
}

/// Parity containment test (three axis rays, majority vote).
pub fn point_inside(m: &TriMesh, p: &Vec3) -> bool {
    raycast::point_inside(&m.triangle_soup(), p)
}

/// Majority decision per voxel. Split votes only count against
/// watertightness when the center is off the surface; centers lying on a
/// face are ambiguous for any ray.
fn majority_inside(votes: &[u8], tris: &[[Vec3; 3]], spec: &GridSpec) -> Result<Vec<bool>> {
    let on_surface = 1e-9 * spec.spacing;
    let disagreeing = votes
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v == 1 || v == 2)
        .filter(|&(i, _)| unsigned_distance(tris, &spec.center(spec.unflatten(i))) > on_surface)
        .count();
    if disagreeing as f64 > MAX_VOTE_DISAGREEMENT * votes.len() as f64 {
        return Err(Error::NonWatertight {
            disagreeing,
            total: votes.len(),
        });
    }
    Ok(votes.iter().map(|&v| v >= 2).collect())
}

/// Signed distance field of `m` sampled on [`canonical_grid`]`(resolution)`.
pub fn mesh_to_sdf(m: &TriMesh, resolution: usize) -> Result<SdfGrid> {
    let spec = canonical_grid(resolution)?;
    mesh_to_sdf_on(m, &spec)
}

/// Signed distance field of `m` sampled at the voxel centers of `spec`.
pub fn mesh_to_sdf_on(m: &TriMesh, spec: &GridSpec) -> Result<SdfGrid> {
    let tris = m.triangle_soup();
    let inside = majority_inside(&raycast::parity_votes(&tris, spec), &tris, spec)?;
    let slice = spec.dims[0] * spec.dims[1];
    let mut values = vec![0.0; spec.len()];
    values
        .par_chunks_mut(slice)
        .enumerate()
        .for_each(|(z, chunk)| {
            for (k, v) in chunk.iter_mut().enumerate() {
                let flat = z * slice + k;
                let p = spec.center(spec.unflatten(flat));
                let d = unsigned_distance(&tris, &p);
                *v = if inside[flat] { -d } else { d };
            }
        });
    SdfGrid::new(*spec, values)
}

/// Marks voxels whose centers lie inside `m` placed by `pose`.
pub fn voxelize_occupancy(m: &TriMesh, pose: &Pose9DoF, spec: &GridSpec) -> Result<OccupancyGrid> {
    let tris = m.transformed(pose).triangle_soup();
    let cells = majority_inside(&raycast::parity_votes(&tris, spec), &tris, spec)?;
    OccupancyGrid::from_cells(*spec, cells)
}

/// `n` points distributed uniformly by area over the surface.
pub fn sample_surface_points(m: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let tris = m.triangle_soup();
    let mut cumulative = Vec::with_capacity(tris.len());
    let mut total = 0.0;
    for t in &tris {
        total += triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh("total surface area is zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let k = cumulative
                .partition_point(|&c| c <= target)
                .min(tris.len() - 1);
            let [a, b, c] = tris[k];
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect();
    PointCloud::new(points)
}

/// Axis-aligned box `[lo, hi]` as 12 outward-facing triangles.
pub fn box_mesh(lo: &Vec3, hi: &Vec3) -> TriMesh {
    let v = |x: usize, y: usize, z: usize| {
        Vec3::new(
            if x == 0 { lo[0] } else { hi[0] },
            if y == 0 { lo[1] } else { hi[1] },
            if z == 0 { lo[2] } else { hi[2] },
        )
    };
    let vertices = vec![
        v(0, 0, 0),
        v(1, 0, 0),
        v(1, 1, 0),
        v(0, 1, 0),
        v(0, 0, 1),
        v(1, 0, 1),
        v(1, 1, 1),
        v(0, 1, 1),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriMesh::new(vertices, triangles).expect("box mesh is valid")
}

/// The canonical unit cube `[−0.5, 0.5]³`.
pub fn unit_cube() -> TriMesh {
    box_mesh(&Vec3::repeat(-0.5), &Vec3::repeat(0.5))
}

/// Closed cylinder along z with `segments` sides, centered at the origin.
pub fn cylinder_mesh(radius: f64, height: f64, segments: usize) -> TriMesh {
    let segments = segments.max(3);
    let h = 0.5 * height;
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for k in 0..segments {
        let a = std::f64::consts::TAU * k as f64 / segments as f64;
        let (s, c) = a.sin_cos();
        vertices.push(Vec3::new(radius * c, radius * s, -h));
        vertices.push(Vec3::new(radius * c, radius * s, h));
    }
    let bottom = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, -h));
    let top = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, h));
    let mut triangles = Vec::with_capacity(4 * segments);
    for k in 0..segments {
        let next = (k + 1) % segments;
        let (b0, t0, b1, t1) = (2 * k, 2 * k + 1, 2 * next, 2 * next + 1);
        triangles.push([b0, b1, t1]);
        triangles.push([b0, t1, t0]);
        triangles.push([bottom, b1, b0]);
        triangles.push([top, t0, t1]);
    }
    TriMesh::new(vertices, triangles).expect("cylinder mesh is valid")
}
