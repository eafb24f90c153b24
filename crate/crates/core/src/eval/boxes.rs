//! IoU of oriented boxes, each the unit cube `[-½, ½]³` under a pose.

use crate::geom::{Pose9DoF, Vec3};

pub const BOX_IOU_RESOLUTION: usize = 64;

pub fn box_corners(p: &Pose9DoF) -> [Vec3; 8] {
    std::array::from_fn(|k| {
        let c = Vec3::new(
            if k & 1 == 0 { -0.5 } else { 0.5 },
            if k & 2 == 0 { -0.5 } else { 0.5 },
            if k & 4 == 0 { -0.5 } else { 0.5 },
        );
        p.apply(&c)
    })
}

fn aabb(p: &Pose9DoF) -> (Vec3, Vec3) {
    let c = box_corners(p);
    c[1..].iter().fold((c[0], c[0]), |(lo, hi), v| (lo.inf(v), hi.sup(v)))
}

/// Parameter interval `[lo, hi]` of the line `origin + λ·dir` inside the box.
fn line_span(p: &Pose9DoF, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
    let rt = p.r.matrix().transpose();
    let u0 = (rt * (origin - p.t)).component_div(&p.s);
    let du = (rt * dir).component_div(&p.s);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if du[k] == 0.0 {
            if u0[k].abs() > 0.5 {
                return None;
            }
            continue;
        }
        let a = (-0.5 - u0[k]) / du[k];
        let b = (0.5 - u0[k]) / du[k];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (lo < hi).then_some((lo, hi))
}

/// [`oriented_box_iou_with`] at the default resolution.
pub fn oriented_box_iou(a: &Pose9DoF, b: &Pose9DoF) -> f64 {
    oriented_box_iou_with(a, b, BOX_IOU_RESOLUTION)
}

/// Volume IoU of two boxes over their union bounding box. The cross-section
/// perpendicular to the longest side of those bounds is sampled at voxel
/// centres of a grid with `resolution` cells along that side; along each
/// sampled line the inside lengths are exact.
pub fn oriented_box_iou_with(a: &Pose9DoF, b: &Pose9DoF, resolution: usize) -> f64 {
    let (alo, ahi) = aabb(a);
    let (blo, bhi) = aabb(b);
    let (lo, hi) = (alo.inf(&blo), ahi.sup(&bhi));
    if (0..3).any(|k| ahi[k] <= blo[k] || bhi[k] <= alo[k]) {
        return 0.0;
    }
    let extent = hi - lo;
    let axis = extent.imax();
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let h = extent[axis] / resolution.max(1) as f64;
    let cells = |k: usize| ((extent[k] / h - 1e-9).ceil() as usize).max(1);
    let mut dir = Vec3::zeros();
    dir[axis] = 1.0;
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..cells(u) {
        for j in 0..cells(v) {
            let mut origin = Vec3::zeros();
            origin[u] = lo[u] + (i as f64 + 0.5) * h;
            origin[v] = lo[v] + (j as f64 + 0.5) * h;
            let sa = line_span(a, &origin, &dir);
            let sb = line_span(b, &origin, &dir);
            let len = |s: Option<(f64, f64)>| s.map_or(0.0, |(l, r)| r - l);
            let both = match (sa, sb) {
                (Some((l0, r0)), Some((l1, r1))) => (r0.min(r1) - l0.max(l1)).max(0.0),
                _ => 0.0,
            };
            inter += both;
            union += len(sa) + len(sb) - both;
        }
    }
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}
