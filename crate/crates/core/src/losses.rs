//! Per-object supervision terms and the weighted multi-task objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PoseGrad, PoseParams, Pose9DoF, Rotation, Vec3};
use crate::shape_db::SoftLabelVector;
use crate::voxel::PointCloud;

pub const HUBER_DELTA: f64 = 1.0;
pub const DEFAULT_YAW_BINS: usize = 8;
pub const DEFAULT_COLLISION_WARMUP: usize = 100;

/// Weights of the pose, scale, selection and collision terms; the keypoint
/// term has weight one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub rt: f64,
    pub s: f64,
    pub z: f64,
    pub coll: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rt: 10.0,
            s: 10.0,
            z: 0.1,
            coll: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rt", self.rt), ("s", self.s), ("z", self.z), ("coll", self.coll)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("weight {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Collision weight in effect at `iteration`: zero during warm-up.
    pub fn collision_weight(&self, iteration: usize, warmup: usize) -> f64 {
        if iteration < warmup {
            0.0
        } else {
            self.coll
        }
    }
}

/// Unweighted values of the individual terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub key: f64,
    pub rt: f64,
    pub s: f64,
    pub z: f64,
    pub coll: f64,
}

pub fn total_objective(parts: &LossParts, w: &LossWeights, iteration: usize, warmup: usize) -> f64 {
    parts.key + w.rt * parts.rt + w.s * parts.s + w.z * parts.z + w.collision_weight(iteration, warmup) * parts.coll
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn check_batch<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::MismatchedLengths(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("need at least one object".into()));
    }
    Ok(())
}

/// Loss value and gradient with respect to every logit.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionLoss {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Mean softmax cross-entropy against one-hot targets.
pub fn hard_selection_loss(scores: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    hard_selection_loss_with_grad(scores, targets).map(|l| l.value)
}

pub fn hard_selection_loss_with_grad(scores: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<SelectionLoss> {
    check_batch(scores, targets)?;
    let m = scores.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (z, y) in scores.iter().zip(targets) {
        if z.len() != y.len() {
            return Err(Error::MismatchedLengths(z.len(), y.len()));
        }
        let ls = log_softmax(z);
        let mass: f64 = y.iter().sum();
        value -= y.iter().zip(&ls).map(|(a, b)| a * b).sum::<f64>();
        grad.push(ls.iter().zip(y).map(|(l, t)| (l.exp() * mass - t) / m).collect());
    }
    Ok(SelectionLoss { value: value / m, grad })
}

/// Form of the sigmoid selection loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftLossMode {
    /// Only the `d·ln S(ẑ)` term.
    Literal,
    /// Adds `(1 − d)·ln(1 − S(ẑ))`, penalizing high scores on dissimilar shapes.
    #[default]
    Symmetric,
}

pub fn soft_selection_loss(scores: &[Vec<f64>], targets: &[SoftLabelVector], mode: SoftLossMode) -> Result<f64> {
    soft_selection_loss_with_grad(scores, targets, mode).map(|l| l.value)
}

pub fn soft_selection_loss_with_grad(
    scores: &[Vec<f64>],
    targets: &[SoftLabelVector],
    mode: SoftLossMode,
) -> Result<SelectionLoss> {
    check_batch(scores, targets)?;
    let m = scores.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (z, d) in scores.iter().zip(targets) {
        if z.len() != d.0.len() {
            return Err(Error::MismatchedLengths(z.len(), d.0.len()));
        }
        let mut g = Vec::with_capacity(z.len());
        for (&zk, &dk) in z.iter().zip(&d.0) {
            // −ln S(z) = softplus(−z), −ln(1 − S(z)) = softplus(z).
            value += dk * softplus(-zk);
            let s = sigmoid(zk);
            match mode {
                SoftLossMode::Literal => g.push(-dk * (1.0 - s) / m),
                SoftLossMode::Symmetric => {
                    value += (1.0 - dk) * softplus(zk);
                    g.push((s - dk) / m);
                }
            }
        }
        grad.push(g);
    }
    Ok(SelectionLoss { value: value / m, grad })
}

/// Scaling of the joint rotation/translation loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RtNormalization {
    /// Plain sum over objects and points.
    #[default]
    Sum,
    /// Mean over each cloud, then over objects.
    Mean,
}

fn cloud_weight(norm: RtNormalization, m: usize, n: usize) -> f64 {
    match norm {
        RtNormalization::Sum => 1.0,
        RtNormalization::Mean => 1.0 / (m as f64 * n as f64),
    }
}

/// `Σᵢ Σₓ ‖Tⁱx − T̂ⁱx‖²` over the canonical clouds.
pub fn pose_loss_rt(
    gt: &[Pose9DoF],
    pred: &[Pose9DoF],
    clouds: &[PointCloud],
    norm: RtNormalization,
) -> Result<f64> {
    check_batch(gt, pred)?;
    check_batch(gt, clouds)?;
    let m = gt.len();
    let mut total = 0.0;
    for ((a, b), pc) in gt.iter().zip(pred).zip(clouds) {
        let w = cloud_weight(norm, m, pc.len());
        total += w * pc.points.iter().map(|x| (a.apply(x) - b.apply(x)).norm_squared()).sum::<f64>();
    }
    Ok(total)
}

/// [`pose_loss_rt`] evaluated at raw parameters, with gradients in `(M, t, s)`.
pub fn pose_loss_rt_grad(
    gt: &[Pose9DoF],
    pred: &[PoseParams],
    clouds: &[PointCloud],
    norm: RtNormalization,
) -> Result<(f64, Vec<PoseGrad>)> {
    check_batch(gt, pred)?;
    check_batch(gt, clouds)?;
    let m = gt.len();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(m);
    for ((a, params), pc) in gt.iter().zip(pred).zip(clouds) {
        let proj = params.projection()?;
        let b = params.pose_with(&proj);
        let w = cloud_weight(norm, m, pc.len());
        let mut g = PoseGrad::default();
        for x in &pc.points {
            let sx = b.s.component_mul(x);
            let r = b.apply(x) - a.apply(x);
            total += w * r.norm_squared();
            g.t += 2.0 * w * r;
            g.m += 2.0 * w * r * sx.transpose();
            g.s += 2.0 * w * (b.r.matrix().transpose() * r).component_mul(x);
        }
        grads.push(g.through_projection(&proj));
    }
    Ok((total, grads))
}

/// `Σᵢ Σₖ ‖T̂ⁱxₖ − yₖ‖²` for world-frame targets `yₖ` in one-to-one
/// correspondence with the canonical points `xₖ`, with gradients in
/// `(R, t, s)`.
pub fn target_loss_with_grad(
    targets: &[PointCloud],
    pred: &[Pose9DoF],
    clouds: &[PointCloud],
    norm: RtNormalization,
) -> Result<(f64, Vec<PoseGrad>)> {
    check_batch(targets, pred)?;
    check_batch(targets, clouds)?;
    let m = targets.len();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(m);
    for ((target, b), pc) in targets.iter().zip(pred).zip(clouds) {
        if target.len() != pc.len() {
            return Err(Error::MismatchedLengths(target.len(), pc.len()));
        }
        let w = cloud_weight(norm, m, pc.len());
        let mut g = PoseGrad::default();
        for (x, y) in pc.points.iter().zip(&target.points) {
            let sx = b.s.component_mul(x);
            let r = b.apply(x) - y;
            total += w * r.norm_squared();
            g.t += 2.0 * w * r;
            g.m += 2.0 * w * r * sx.transpose();
            g.s += 2.0 * w * (b.r.matrix().transpose() * r).component_mul(x);
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// `‖R − R̂‖_F`.
pub fn rot_loss_frobenius(a: &Rotation, b: &Rotation) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

/// Smooth-L1 of one residual.
pub fn huber(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Component-wise smooth-L1, summed.
pub fn trans_loss_huber(t: &Vec3, t_hat: &Vec3, delta: f64) -> f64 {
    (t - t_hat).iter().map(|&e| huber(e, delta)).sum()
}

/// Mean over objects of the L1 scale error.
pub fn scale_loss(s_gt: &[Vec3], s_pred: &[Vec3]) -> Result<f64> {
    scale_loss_with_grad(s_gt, s_pred).map(|(v, _)| v)
}

/// Gradient with respect to the predictions; `sign(0)` is taken as 0.
pub fn scale_loss_with_grad(s_gt: &[Vec3], s_pred: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    check_batch(s_gt, s_pred)?;
    let m = s_gt.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(s_gt.len());
    for (a, b) in s_gt.iter().zip(s_pred) {
        let d = b - a;
        value += d.abs().sum();
        grads.push(d.map(|v| sign(v) / m));
    }
    Ok((value / m, grads))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Bin of `yaw` among `bins` equal sectors of `[0, 2π)`, and the residual
/// from that bin's center.
pub fn yaw_bin(yaw: f64, bins: usize) -> (usize, f64) {
    let width = std::f64::consts::TAU / bins as f64;
    let y = yaw.rem_euclid(std::f64::consts::TAU);
    let k = ((y / width) as usize).min(bins - 1);
    (k, y - (k as f64 + 0.5) * width)
}

/// Bin classification cross-entropy plus smooth-L1 on the ground-truth bin's
/// offset, for a yaw-only rotation.
pub fn binned_rotation_loss(yaw_gt: f64, bin_logits: &[f64], offset_preds: &[f64]) -> Result<f64> {
    if bin_logits.len() != offset_preds.len() {
        return Err(Error::MismatchedLengths(bin_logits.len(), offset_preds.len()));
    }
    if bin_logits.len() < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    let (k, offset) = yaw_bin(yaw_gt, bin_logits.len());
    Ok(-log_softmax(bin_logits)[k] + huber(offset_preds[k] - offset, HUBER_DELTA))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Mat3, RawMatrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
        (0..k).map(|_| rng.random_range(-4.0..4.0)).collect()
    }

    fn one_hot(k: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[at] = 1.0;
        v
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose9DoF {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Pose9DoF::new(
            Rotation::from_axis_angle(&axis, rng.random_range(-3.0..3.0)),
            Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            Vec3::new(rng.random_range(0.5..1.5), rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)),
        )
        .unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect(),
        )
        .unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn hard_loss_examples() {
        let mut z = vec![0.0; 300];
        assert!((hard_selection_loss(&[z.clone()], &[one_hot(300, 7)]).unwrap() - 300f64.ln()).abs() < 1e-12);
        z[7] = 1e3;
        assert!(hard_selection_loss(&[z], &[one_hot(300, 7)]).unwrap() < 1e-12);
    }

    #[test]
    fn hard_loss_matches_loop_oracle_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let scores: Vec<Vec<f64>> = (0..3).map(|_| random_logits(&mut rng, 6)).collect();
            let targets: Vec<Vec<f64>> = (0..3).map(|_| one_hot(6, rng.random_range(0..6))).collect();
            let mut oracle = 0.0;
            for (z, t) in scores.iter().zip(&targets) {
                let denom: f64 = z.iter().map(|v| v.exp()).sum();
                let k = t.iter().position(|&v| v == 1.0).unwrap();
                oracle -= (z[k].exp() / denom).ln();
            }
            oracle /= 3.0;
            let l = hard_selection_loss_with_grad(&scores, &targets).unwrap();
            assert!((l.value - oracle).abs() < 1e-10);
            for i in 0..3 {
                for k in 0..6 {
                    let h = 1e-6;
                    let mut p = scores.clone();
                    p[i][k] += h;
                    let mut m = scores.clone();
                    m[i][k] -= h;
                    let fd = (hard_selection_loss(&p, &targets).unwrap() - hard_selection_loss(&m, &targets).unwrap()) / (2.0 * h);
                    assert!(rel_err(fd, l.grad[i][k]) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn soft_loss_examples() {
        let zeros = SoftLabelVector(vec![0.0; 4]);
        let z = vec![vec![3.0, -1.0, 0.5, 9.0]];
        assert_eq!(soft_selection_loss(&z, &[zeros], SoftLossMode::Literal).unwrap(), 0.0);
        let d = SoftLabelVector(vec![1.0]);
        let l = soft_selection_loss(&[vec![0.0]], &[d], SoftLossMode::Literal).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    fn oracle_soft(scores: &[Vec<f64>], d: &[SoftLabelVector], symmetric: bool) -> f64 {
        let mut total = 0.0;
        for (z, t) in scores.iter().zip(d) {
            for (zk, dk) in z.iter().zip(&t.0) {
                let s = 1.0 / (1.0 + (-zk).exp());
                total -= dk * s.ln();
                if symmetric {
                    total -= (1.0 - dk) * (1.0 - s).ln();
                }
            }
        }
        total / scores.len() as f64
    }

    #[test]
    fn soft_loss_matches_loop_oracles_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let scores: Vec<Vec<f64>> = (0..2).map(|_| random_logits(&mut rng, 5)).collect();
            let d_labels: Vec<SoftLabelVector> = (0..2)
                .map(|_| SoftLabelVector((0..5).map(|_| rng.random_range(0.0..1.0)).collect()))
                .collect();
            for (mode, sym) in [(SoftLossMode::Literal, false), (SoftLossMode::Symmetric, true)] {
                let l = soft_selection_loss_with_grad(&scores, &d_labels, mode).unwrap();
                assert!((l.value - oracle_soft(&scores, &d_labels, sym)).abs() < 1e-10);
                for i in 0..2 {
                    for k in 0..5 {
                        let at = |delta: f64| {
                            let mut p = scores.clone();
                            p[i][k] += delta;
                            soft_selection_loss(&p, &d_labels, mode).unwrap()
                        };
                        let h = 1e-3;
                        let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                        assert!(rel_err(fd, l.grad[i][k]) < 1e-6, "{mode:?} fd={fd} an={}", l.grad[i][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn literal_soft_loss_on_one_hot_is_positive_sigmoid_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let z = random_logits(&mut rng, 7);
            let k = rng.random_range(0..7);
            let l = soft_selection_loss(&[z.clone()], &[SoftLabelVector(one_hot(7, k))], SoftLossMode::Literal).unwrap();
            let restricted = -(1.0 / (1.0 + (-z[k]).exp())).ln();
            assert!((l - restricted).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        let pc = random_cloud(&mut rng, 40);
        assert_eq!(pose_loss_rt(&[p], &[p], &[pc.clone()], RtNormalization::Sum).unwrap(), 0.0);
        let delta = Vec3::new(0.1, -0.2, 0.3);
        let q = Pose9DoF { t: p.t + delta, ..p };
        let l = pose_loss_rt(&[p], &[q], &[pc.clone()], RtNormalization::Sum).unwrap();
        assert!((l - 40.0 * delta.norm_squared()).abs() < 1e-12);
        let mean = pose_loss_rt(&[p], &[q], &[pc.clone()], RtNormalization::Mean).unwrap();
        assert!((mean - delta.norm_squared()).abs() < 1e-14);
        assert!(matches!(
            pose_loss_rt(&[p, p], &[q], &[pc], RtNormalization::Sum),
            Err(Error::MismatchedLengths(2, 1))
        ));
    }

    #[test]
    fn pose_loss_matches_homogeneous_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let pc = random_cloud(&mut rng, 25);
            let (ha, hb) = (a.to_homogeneous(), b.to_homogeneous());
            let mut oracle = 0.0;
            for x in &pc.points {
                let xh = x.push(1.0);
                let d = ha * xh - hb * xh;
                oracle += d.x * d.x + d.y * d.y + d.z * d.z;
            }
            let l = pose_loss_rt(&[a], &[b], &[pc], RtNormalization::Sum).unwrap();
            assert!((l - oracle).abs() < 1e-9 * oracle.max(1.0));
        }
    }

    #[test]
    fn pose_loss_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0;
        while checked < 100 {
            let gt = random_pose(&mut rng);
            let m = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let sv = crate::geom::svd3(&m).sigma;
            if sv[1] - sv[2] < 0.05 || sv[2] < 0.05 {
                continue;
            }
            checked += 1;
            let params = PoseParams {
                m: RawMatrix(m),
                t: Vec3::new(rng.random_range(-1.0..1.0), 0.3, -0.2),
                s: Vec3::new(rng.random_range(0.5..1.5), 1.1, 0.8),
            };
            let pc = random_cloud(&mut rng, 12);
            let norm = if checked % 2 == 0 { RtNormalization::Sum } else { RtNormalization::Mean };
            let f = |p: &PoseParams| pose_loss_rt(&[gt], &[p.to_pose().unwrap()], &[pc.clone()], norm).unwrap();
            let (v, g) = pose_loss_rt_grad(&[gt], &[params], &[pc.clone()], norm).unwrap();
            assert!((v - f(&params)).abs() < 1e-12 * v.max(1.0));
            let h = 1e-6;
            for i in 0..9 {
                let (mut p, mut q) = (params, params);
                p.m.0[i] += h;
                q.m.0[i] -= h;
                let fd = (f(&p) - f(&q)) / (2.0 * h);
                assert!(rel_err(fd, g[0].m[i]) < 1e-4, "M[{i}] fd={fd} an={}", g[0].m[i]);
            }
            for a in 0..3 {
                let (mut p, mut q) = (params, params);
                p.t[a] += h;
                q.t[a] -= h;
                assert!(rel_err((f(&p) - f(&q)) / (2.0 * h), g[0].t[a]) < 1e-4);
                let (mut p, mut q) = (params, params);
                p.s[a] += h;
                q.s[a] -= h;
                assert!(rel_err((f(&p) - f(&q)) / (2.0 * h), g[0].s[a]) < 1e-4);
            }
        }
    }

    #[test]
    fn rotation_and_translation_examples() {
        let id = Rotation::identity();
        assert_eq!(rot_loss_frobenius(&id, &id), 0.0);
        let flip = Rotation::from_matrix_unchecked(Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)));
        assert!((rot_loss_frobenius(&id, &flip) - 8f64.sqrt()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random_pose(&mut rng).r, random_pose(&mut rng).r);
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                s += (a.matrix()[(r, c)] - b.matrix()[(r, c)]).powi(2);
            }
        }
        assert!((rot_loss_frobenius(&a, &b) - s.sqrt()).abs() < 1e-14);

        let t = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(trans_loss_huber(&t, &t, HUBER_DELTA), 0.0);
        assert_eq!(trans_loss_huber(&t, &(t + Vec3::new(0.5, 0.0, 0.0)), HUBER_DELTA), 0.125);
        assert_eq!(trans_loss_huber(&t, &(t + Vec3::new(2.0, 0.0, 0.0)), HUBER_DELTA), 1.5);
    }

    #[test]
    fn scale_loss_examples_and_fd() {
        let s = Vec3::new(1.0, 1.0, 1.0);
        assert_eq!(scale_loss(&[s], &[s]).unwrap(), 0.0);
        let l = scale_loss(&[s], &[s + Vec3::new(0.1, 0.2, 0.3)]).unwrap();
        assert!((l - 0.6).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let gt: Vec<Vec3> = (0..3).map(|_| Vec3::from_fn(|_, _| rng.random_range(0.5..1.5))).collect();
            let pred: Vec<Vec3> = (0..3).map(|_| Vec3::from_fn(|_, _| rng.random_range(0.5..1.5))).collect();
            let oracle: f64 = gt.iter().zip(&pred).map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>()).sum::<f64>() / 3.0;
            let (v, g) = scale_loss_with_grad(&gt, &pred).unwrap();
            assert!((v - oracle).abs() < 1e-14);
            for i in 0..3 {
                for k in 0..3 {
                    if (gt[i][k] - pred[i][k]).abs() < 1e-4 {
                        continue;
                    }
                    let h = 1e-6;
                    let mut p = pred.clone();
                    p[i][k] += h;
                    let mut m = pred.clone();
                    m[i][k] -= h;
                    let fd = (scale_loss(&gt, &p).unwrap() - scale_loss(&gt, &m).unwrap()) / (2.0 * h);
                    assert!(rel_err(fd, g[i][k]) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn binned_rotation_examples() {
        let width = std::f64::consts::TAU / 8.0;
        let yaw = 2.5 * width;
        let mut logits = vec![0.0; 8];
        logits[2] = 1e3;
        assert!(binned_rotation_loss(yaw, &logits, &[0.0; 8]).unwrap() < 1e-12);
        let uniform = binned_rotation_loss(yaw, &[0.0; 8], &[0.0; 8]).unwrap();
        assert!((uniform - 8f64.ln()).abs() < 1e-12);
        // Negative yaw wraps into the last bin.
        assert_eq!(yaw_bin(-0.1, 8).0, 7);
    }

    #[test]
    fn binned_rotation_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let yaw = rng.random_range(-10.0..10.0);
            let logits = random_logits(&mut rng, 8);
            let offs: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let tau = std::f64::consts::TAU;
            let mut y = yaw % tau;
            if y < 0.0 {
                y += tau;
            }
            let mut k = 0;
            while k < 7 && y >= (k + 1) as f64 * tau / 8.0 {
                k += 1;
            }
            let denom: f64 = logits.iter().map(|v| v.exp()).sum();
            let ce = -(logits[k].exp() / denom).ln();
            let e = offs[k] - (y - (k as f64 + 0.5) * tau / 8.0);
            let hub = if e.abs() <= 1.0 { 0.5 * e * e } else { e.abs() - 0.5 };
            let got = binned_rotation_loss(yaw, &logits, &offs).unwrap();
            assert!((got - (ce + hub)).abs() < 1e-10);
        }
    }

    #[test]
    fn total_objective_examples() {
        let w = LossWeights::default();
        assert_eq!(total_objective(&LossParts::default(), &w, 500, 100), 0.0);
        let ones = LossParts { key: 1.0, rt: 1.0, s: 1.0, z: 1.0, coll: 1.0 };
        assert!((total_objective(&ones, &w, 100, 100) - 22.1).abs() < 1e-12);
        assert!((total_objective(&ones, &w, 99, 100) - 21.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_logits(&mut rng, 6);
            let d = SoftLabelVector((0..6).map(|_| rng.random_range(0.0..1.0)).collect());
            prop_assert!(hard_selection_loss(&[z.clone()], &[one_hot(6, 2)]).unwrap() >= 0.0);
            prop_assert!(soft_selection_loss(&[z.clone()], &[d.clone()], SoftLossMode::Literal).unwrap() >= 0.0);
            prop_assert!(soft_selection_loss(&[z], &[d], SoftLossMode::Symmetric).unwrap() >= 0.0);
            let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
            prop_assert!(pose_loss_rt(&[a], &[b], &[random_cloud(&mut rng, 5)], RtNormalization::Sum).unwrap() >= 0.0);
            prop_assert!(binned_rotation_loss(rng.random_range(0.0..6.0), &random_logits(&mut rng, 8), &[0.3; 8]).unwrap() >= 0.0);
        }
    }
}
