//! Parity ray casting against triangle soups.
//!
//! Edge functions are evaluated with a fixed symbolic perturbation of the
//! query point, `q + (ε, ε²)` in the projection plane, and with the edge
//! endpoints put in a canonical order first. A ray that passes exactly
//! through a shared edge or vertex is therefore counted by exactly one of
//! the incident triangles.

use std::cmp::Ordering;

use crate::geom::Vec3;

use super::GridSpec;

/// The two coordinates spanning the plane orthogonal to `axis`.
fn plane_axes(axis: usize) -> (usize, usize) {
    ((axis + 1) % 3, (axis + 2) % 3)
}

/// Sign of the perturbed 2D edge function for segment `a → b` at `q`.
fn edge_sign(a: [f64; 2], b: [f64; 2], q: [f64; 2]) -> (f64, i8) {
    let swapped = match a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])) {
        Ordering::Greater => true,
        _ => false,
    };
    let (p0, p1) = if swapped { (b, a) } else { (a, b) };
    let e = (p1[0] - p0[0]) * (q[1] - p0[1]) - (p1[1] - p0[1]) * (q[0] - p0[0]);
    let mut sign: i8 = if e > 0.0 {
        1
    } else if e < 0.0 {
        -1
    } else {
        let dy = p1[1] - p0[1];
        let dx = p1[0] - p0[0];
        if dy != 0.0 {
            if dy > 0.0 {
                -1
            } else {
                1
            }
        } else if dx > 0.0 {
            1
        } else if dx < 0.0 {
            -1
        } else {
            0
        }
    };
    let e = if swapped { -e } else { e };
    if swapped {
        sign = -sign;
    }
    (e, sign)
}

/// If the ray through `q` along `axis` crosses triangle `tri`, the axis
/// coordinate of the crossing.
pub(crate) fn crossing(tri: &[Vec3; 3], axis: usize, q: [f64; 2]) -> Option<f64> {
    let (ua, va) = plane_axes(axis);
    let p = tri.map(|v| [v[ua], v[va]]);
    let (w0, s0) = edge_sign(p[1], p[2], q);
    let (w1, s1) = edge_sign(p[2], p[0], q);
    let (w2, s2) = edge_sign(p[0], p[1], q);
    if s0 == 0 || s0 != s1 || s1 != s2 {
        return None;
    }
    let sum = w0 + w1 + w2;
    if sum == 0.0 {
        // Vanishing projected area; the symbolic tie-break still says inside,
        // so fall back to the centroid depth.
        return Some((tri[0][axis] + tri[1][axis] + tri[2][axis]) / 3.0);
    }
    Some((w0 * tri[0][axis] + w1 * tri[1][axis] + w2 * tri[2][axis]) / sum)
}

/// Number of crossings of the ray from `x` towards `+axis`.
pub(crate) fn ray_crossings(tris: &[[Vec3; 3]], x: &Vec3, axis: usize) -> usize {
    let (ua, va) = plane_axes(axis);
    let q = [x[ua], x[va]];
    tris.iter()
        .filter_map(|t| crossing(t, axis, q))
        .filter(|&h| h > x[axis])
        .count()
}

/// Majority vote of the three axis-aligned parity tests for one point.
pub(crate) fn point_inside(tris: &[[Vec3; 3]], x: &Vec3) -> bool {
    (0..3).filter(|&a| ray_crossings(tris, x, a) % 2 == 1).count() >= 2
}

/// Per-voxel count (0..=3) of axis rays voting "inside", for every voxel
/// center of `spec`.
pub(crate) fn parity_votes(tris: &[[Vec3; 3]], spec: &GridSpec) -> Vec<u8> {
    let dims = spec.dims;
    let mut votes = vec![0u8; spec.len()];
    for axis in 0..3 {
        let (ua, va) = plane_axes(axis);
        let (nu, nv, na) = (dims[ua], dims[va], dims[axis]);
        let mut hits: Vec<Vec<f64>> = vec![Vec::new(); nu * nv];
        for tri in tris {
            let lo_u = tri.iter().map(|v| v[ua]).fold(f64::INFINITY, f64::min);
            let hi_u = tri.iter().map(|v| v[ua]).fold(f64::NEG_INFINITY, f64::max);
            let lo_v = tri.iter().map(|v| v[va]).fold(f64::INFINITY, f64::min);
            let hi_v = tri.iter().map(|v| v[va]).fold(f64::NEG_INFINITY, f64::max);
            let Some((u0, u1)) = spec.index_range(ua, lo_u, hi_u) else {
                continue;
            };
            let Some((v0, v1)) = spec.index_range(va, lo_v, hi_v) else {
                continue;
            };
            for iv in v0..=v1 {
                let cv = spec.center_coord(va, iv);
                for iu in u0..=u1 {
                    let cu = spec.center_coord(ua, iu);
                    if let Some(h) = crossing(tri, axis, [cu, cv]) {
                        hits[iv * nu + iu].push(h);
                    }
                }
            }
        }
        for iv in 0..nv {
            for iu in 0..nu {
                let column = &mut hits[iv * nu + iu];
                if column.is_empty() {
                    continue;
                }
                column.sort_by(f64::total_cmp);
                // Crossings strictly beyond the voxel center, scanning upward.
                let mut beyond = column.len();
                let mut next = 0;
                for ia in 0..na {
                    let c = spec.center_coord(axis, ia);
                    while next < column.len() && column[next] <= c {
                        next += 1;
                        beyond -= 1;
                    }
                    if beyond % 2 == 1 {
                        let mut idx = [0usize; 3];
                        idx[axis] = ia;
                        idx[ua] = iu;
                        idx[va] = iv;
                        votes[spec.flat_index(idx)] += 1;
                    }
                }
            }
        }
    }
    votes
}
