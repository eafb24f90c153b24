//! Parametric toy shapes: stepped blocks and lathed cylinders.
//!
//! Anisotropic canonicalization maps every box to the unit cube and every
//! straight cylinder to the same cylinder, so the families vary features
//! that survive it: the step of an L-shaped block and the taper/bulge of a
//! lathe profile.

use crate::geom::Vec3;
use crate::shape_db::ShapeSource;
use crate::voxel::{canonicalize_mesh, TriMesh};

/// L-shaped profile in the xz-plane extruded along y: full width up to
/// `step_height`, then `top_width` of it up to height 1.
pub fn stepped_block(top_width: f64, step_height: f64) -> TriMesh {
    let profile = [
        (0.0, 0.0),
        (1.0, 0.0),
        (1.0, step_height),
        (top_width, step_height),
        (top_width, 1.0),
        (0.0, 1.0),
    ];
    let n = profile.len();
    let mut vertices = Vec::with_capacity(2 * n);
    for &(x, z) in &profile {
        vertices.push(Vec3::new(x, 0.0, z));
    }
    for &(x, z) in &profile {
        vertices.push(Vec3::new(x, 1.0, z));
    }
    let mut triangles = Vec::new();
    // Side walls.
    for i in 0..n {
        let j = (i + 1) % n;
        triangles.push([i, j, n + j]);
        triangles.push([i, n + j, n + i]);
    }
    // Caps fanned from the inner corner (vertex 3), which sees the whole L.
    let corner = 3;
    for i in 0..n {
        let j = (i + 1) % n;
        if i == corner || j == corner {
            continue;
        }
        triangles.push([corner, j, i]);
        triangles.push([n + corner, n + i, n + j]);
    }
    TriMesh::new(vertices, triangles).expect("stepped block is valid")
}

/// Surface of revolution about z through `(radius, z)` profile samples,
/// closed with flat caps.
pub fn lathe(profile: &[(f64, f64)], segments: usize) -> TriMesh {
    let rings = profile.len();
    let segments = segments.max(3);
    let mut vertices = Vec::with_capacity(rings * segments + 2);
    for &(r, z) in profile {
        for k in 0..segments {
            let a = std::f64::consts::TAU * k as f64 / segments as f64;
            let (s, c) = a.sin_cos();
            vertices.push(Vec3::new(r * c, r * s, z));
        }
    }
    let bottom = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, profile[0].1));
    let top = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, profile[rings - 1].1));
    let at = |ring: usize, k: usize| ring * segments + k % segments;
    let mut triangles = Vec::new();
    for ring in 0..rings - 1 {
        for k in 0..segments {
            triangles.push([at(ring, k), at(ring, k + 1), at(ring + 1, k + 1)]);
            triangles.push([at(ring, k), at(ring + 1, k + 1), at(ring + 1, k)]);
        }
    }
    for k in 0..segments {
        triangles.push([bottom, at(0, k + 1), at(0, k)]);
        triangles.push([top, at(rings - 1, k), at(rings - 1, k + 1)]);
    }
    TriMesh::new(vertices, triangles).expect("lathe mesh is valid")
}

/// Cylinder-like solid whose radius goes from 1 at the bottom to `taper` at
/// the top, bulging outward by `bulge` at mid-height.
pub fn tapered_cylinder(taper: f64, bulge: f64, segments: usize) -> TriMesh {
    let profile: Vec<(f64, f64)> = (0..=6)
        .map(|i| {
            let z = i as f64 / 6.0;
            let r = (1.0 - z) + taper * z + bulge * (std::f64::consts::PI * z).sin();
            (r, z)
        })
        .collect();
    lathe(&profile, segments)
}

/// `per_class` canonicalized shapes each of class `"box"` (stepped blocks)
/// and `"cylinder"` (tapered lathes), parameters spread on a fixed lattice.
pub fn toy_shapes(per_class: usize) -> Vec<ShapeSource> {
    let mut out = Vec::with_capacity(2 * per_class);
    let t = |i: usize| {
        if per_class > 1 {
            i as f64 / (per_class - 1) as f64
        } else {
            0.5
        }
    };
    for i in 0..per_class {
        let top_width = 0.25 + 0.6 * t(i);
        let step_height = 0.3 + 0.45 * ((i * 7) % per_class.max(1)) as f64 / per_class.max(1) as f64;
        out.push(ShapeSource {
            class: "box".into(),
            name: format!("box_{i:02}"),
            mesh: canonicalize_mesh(&stepped_block(top_width, step_height)).expect("non-degenerate"),
        });
    }
    for i in 0..per_class {
        let taper = 0.3 + 0.7 * t(i);
        let bulge = 0.25 * ((i * 5) % per_class.max(1)) as f64 / per_class.max(1) as f64;
        out.push(ShapeSource {
            class: "cylinder".into(),
            name: format!("cylinder_{i:02}"),
            mesh: canonicalize_mesh(&tapered_cylinder(taper, bulge, 24)).expect("non-degenerate"),
        });
    }
    out
}
