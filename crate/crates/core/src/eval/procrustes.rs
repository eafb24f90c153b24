//! Closed-form similarity alignment of corresponding point sets.

use crate::error::{Error, Result};
use crate::geom::{svd3, Mat3, Pose9DoF, Rotation, Vec3};
use crate::scene::Scene;
use crate::voxel::PointCloud;

use super::boxes::box_corners;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// `x ↦ c·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub r: Rotation,
    pub t: Vec3,
}

impl Similarity {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.scale * (self.r.matrix() * x) + self.t
    }

    /// The pose `x ↦ S(p(x))`.
    pub fn compose_pose(&self, p: &Pose9DoF) -> Result<Pose9DoF> {
        Pose9DoF::new(self.r.compose(&p.r), self.apply(&p.t), p.s * self.scale)
    }
}

/// Similarity minimizing `Σ ‖c·R·pᵢ + t − gᵢ‖²` over `pred` → `gt` pairs.
pub fn procrustes_align(pred: &PointCloud, gt: &PointCloud) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(Error::MismatchedLengths(pred.len(), gt.len()));
    }
    let n = pred.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 correspondences, got {n}")));
    }
    let mean = |pts: &[Vec3]| pts.iter().sum::<Vec3>() / n as f64;
    let (mp, mg) = (mean(&pred.points), mean(&gt.points));
    let mut cov = Mat3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.points.iter().zip(&gt.points) {
        let (dp, dg) = (p - mp, g - mg);
        cov += dg * dp.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n as f64;
    var_p /= n as f64;
    let svd = svd3(&cov);
    let rank = if svd.sigma[0] > 0.0 {
        svd.sigma.iter().filter(|&&s| s > RANK_TOLERANCE * svd.sigma[0]).count()
    } else {
        0
    };
    if rank < 2 {
        return Err(Error::DegenerateConfiguration(rank));
    }
    let d = if svd.u.determinant() * svd.v.determinant() < 0.0 { -1.0 } else { 1.0 };
    let s = Vec3::new(1.0, 1.0, d);
    let r = svd.u * Mat3::from_diagonal(&s) * svd.v.transpose();
    let scale = svd.sigma.dot(&s) / var_p;
    Ok(Similarity {
        scale,
        r: Rotation::from_matrix_unchecked(r),
        t: mg - scale * (r * mp),
    })
}

/// `pred` moved by the similarity that best maps its box corners onto the
/// corners of the matching objects of `gt` (matched by position in the list).
pub fn procrustes_aligned_scene(pred: &Scene, gt: &Scene) -> Result<(Scene, Similarity)> {
    if pred.objects.len() != gt.objects.len() {
        return Err(Error::MismatchedLengths(pred.objects.len(), gt.objects.len()));
    }
    let corners = |s: &Scene| PointCloud::new(s.objects.iter().flat_map(|o| box_corners(&o.pose)).collect());
    let sim = procrustes_align(&corners(pred)?, &corners(gt)?)?;
    let mut out = pred.clone();
    for o in &mut out.objects {
        o.pose = sim.compose_pose(&o.pose)?;
    }
    Ok((out, sim))
}
