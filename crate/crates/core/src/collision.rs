//! Differentiable inter-object collision energy.
//!
//! Each object's surface samples are mapped into every other object's
//! canonical frame and the other object's clamped interior field is read
//! there by trilinear interpolation. Per-object sums go through the
//! Geman-McClure penalty `ρ(x) = (x²/2)/(1 + x²)`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Pose9DoF, PoseGrad, Vec3};
use crate::shape_db::ShapeDatabase;
use crate::voxel::{PointCloud, SdfGrid};

/// Scale components below this cannot be inverted.
pub const MIN_SCALE: f64 = 1e-12;

/// An exemplar placed in the scene, with its precomputed canonical-frame
/// interior field and surface samples.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub class_id: usize,
    pub exemplar_index: usize,
    pub pose: Pose9DoF,
    pub field: Arc<SdfGrid>,
    pub points: Arc<PointCloud>,
}

/// Shared clamped fields and clouds for every exemplar of a database.
#[derive(Debug, Clone)]
pub struct ExemplarCache {
    fields: Vec<Arc<SdfGrid>>,
    points: Vec<Arc<PointCloud>>,
    classes: Vec<usize>,
}

impl ExemplarCache {
    pub fn new(db: &ShapeDatabase) -> Self {
        ExemplarCache {
            fields: db.clamped_fields(),
            points: db.entries.iter().map(|e| Arc::new(e.points.clone())).collect(),
            classes: db.entries.iter().map(|e| e.class_id).collect(),
        }
    }

    pub fn object(&self, exemplar: usize, pose: Pose9DoF) -> Result<SceneObject> {
        if exemplar >= self.fields.len() {
            return Err(Error::UnknownExemplar(exemplar));
        }
        Ok(SceneObject {
            class_id: self.classes[exemplar],
            exemplar_index: exemplar,
            pose,
            field: Arc::clone(&self.fields[exemplar]),
            points: Arc::clone(&self.points[exemplar]),
        })
    }
}

/// Affine map `x ↦ A·x + b` between canonical frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeTransform {
    pub a: Mat3,
    pub b: Vec3,
}

impl RelativeTransform {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.a * x + self.b
    }
}

fn inverse_scale(pose: &Pose9DoF) -> Result<Vec3> {
    if let Some(&s) = pose.s.iter().find(|s| s.abs() < MIN_SCALE) {
        return Err(Error::ZeroScale(s));
    }
    Ok(pose.s.map(|s| 1.0 / s))
}

/// Map from object `i`'s canonical frame into object `j`'s:
/// `diag(1/sⱼ)·Rⱼᵀ·(Rᵢ·(sᵢ ⊙ x) + tᵢ − tⱼ)`.
pub fn relative_transform(i: &Pose9DoF, j: &Pose9DoF) -> Result<RelativeTransform> {
    let inv = inverse_scale(j)?;
    let rjt = j.r.matrix().transpose();
    let a = Mat3::from_diagonal(&inv) * rjt * i.linear();
    let b = (rjt * (i.t - j.t)).component_mul(&inv);
    Ok(RelativeTransform { a, b })
}

fn pair_energy(obj: &SceneObject, other: &SceneObject) -> Result<f64> {
    let tr = relative_transform(&obj.pose, &other.pose)?;
    Ok(obj
        .points
        .points
        .iter()
        .filter_map(|x| other.field.sample(&tr.apply(x)))
        .map(|(v, _)| v)
        .sum())
}

/// `Σⱼ Σₓ φ̃ʲ(Tⁱʲx)` over `others`; samples outside a field's grid count 0.
pub fn collision_energy_single(obj: &SceneObject, others: &[SceneObject]) -> Result<f64> {
    others.iter().map(|o| pair_energy(obj, o)).sum()
}

/// Energy of every object against all the others.
pub fn object_energies(scene: &[SceneObject]) -> Result<Vec<f64>> {
    (0..scene.len())
        .into_par_iter()
        .map(|i| {
            scene
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| pair_energy(&scene[i], o))
                .sum()
        })
        .collect()
}

pub fn geman_mcclure(x: f64) -> f64 {
    let x2 = x * x;
    0.5 * x2 / (1.0 + x2)
}

pub fn geman_mcclure_derivative(x: f64) -> f64 {
    let d = 1.0 + x * x;
    x / (d * d)
}

/// `Σᵢ ρ(Eᵢ)`.
pub fn collision_loss_total(scene: &[SceneObject]) -> Result<f64> {
    Ok(object_energies(scene)?.into_iter().map(geman_mcclure).sum())
}

/// Loss, per-object energies, and per-object gradients with respect to
/// `(R, t, s)`. Use [`PoseGrad::through_projection`] to move the rotation
/// part onto a raw matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionGradient {
    pub loss: f64,
    pub energies: Vec<f64>,
    pub grads: Vec<PoseGrad>,
}

/// Energy of object `i` and its partial derivatives with respect to the
/// poses of `i` and of every other object, indexed by scene position.
fn energy_partials(scene: &[SceneObject], i: usize) -> Result<(f64, Vec<PoseGrad>)> {
    let obj = &scene[i];
    let mut partials = vec![PoseGrad::default(); scene.len()];
    let mut energy = 0.0;
    let ri = obj.pose.r.matrix();
    for (j, other) in scene.iter().enumerate() {
        if j == i {
            continue;
        }
        let tr = relative_transform(&obj.pose, &other.pose)?;
        let inv_sj = inverse_scale(&other.pose)?;
        let rj = other.pose.r.matrix();
        let mut gi = PoseGrad::default();
        let mut gj = PoseGrad::default();
        for x in &obj.points.points {
            let y = tr.apply(x);
            let Some((v, g)) = other.field.sample(&y) else {
                continue;
            };
            energy += v;
            if g == Vec3::zeros() {
                continue;
            }
            let sx = obj.pose.s.component_mul(x);
            let g_over_s = g.component_mul(&inv_sj);
            // ∂E/∂w for the world-space point w = Rᵢ(sᵢ ⊙ x) + tᵢ.
            let gw = rj * g_over_s;
            gi.t += gw;
            gi.m += gw * sx.transpose();
            gi.s += (ri.transpose() * gw).component_mul(x);
            let rel = ri * sx + obj.pose.t - other.pose.t;
            gj.t -= gw;
            gj.m += rel * g_over_s.transpose();
            gj.s -= g.component_mul(&y).component_mul(&inv_sj);
        }
        partials[i] += gi;
        partials[j] += gj;
    }
    Ok((energy, partials))
}

/// Exact gradient of [`collision_loss_total`] through `ρ`, the trilinear
/// blend and the relative transforms.
pub fn collision_gradient(scene: &[SceneObject]) -> Result<CollisionGradient> {
    let per_object: Vec<(f64, Vec<PoseGrad>)> = (0..scene.len())
        .into_par_iter()
        .map(|i| energy_partials(scene, i))
        .collect::<Result<_>>()?;
    let mut grads = vec![PoseGrad::default(); scene.len()];
    let mut loss = 0.0;
    let mut energies = Vec::with_capacity(scene.len());
    for (e, partials) in per_object {
        loss += geman_mcclure(e);
        energies.push(e);
        let w = geman_mcclure_derivative(e);
        if w == 0.0 {
            continue;
        }
        for (g, p) in grads.iter_mut().zip(partials) {
            *g += p.scaled(w);
        }
    }
    Ok(CollisionGradient { loss, energies, grads })
}
