//! Direct pose optimization: Adam over raw rotation matrices, translations
//! and scales, with the rotation projected onto SO(3) inside the objective.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::collision::{collision_gradient, ExemplarCache, SceneObject};
use crate::error::{Error, Result};
use crate::geom::{Pose9DoF, PoseGrad, PoseParams, Rotation, So3Projection};
use crate::losses::{target_loss_with_grad, LossWeights, RtNormalization};
use crate::scene::Scene;
use crate::voxel::PointCloud;

pub const DEFAULT_LR: f64 = 1e-2;
pub const DEFAULT_FIT_ITERS: usize = 500;
pub const DEFAULT_RESOLVE_ITERS: usize = 300;
pub const DEFAULT_ANCHOR_WEIGHT: f64 = 1.0;
/// Iterations during which a step may raise the objective.
pub const FREE_ITERATIONS: usize = 10;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Runs stop once the objective falls by at most a relative `tol` over
/// this many iterations.
const STALL_WINDOW: usize = 20;
/// Runs also stop once repeated rejections shrink the step size by this factor.
const MIN_LR_FACTOR: f64 = 1e-12;

/// Parameter groups held fixed during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Freeze {
    pub rot: bool,
    pub trans: bool,
    pub scale: bool,
}

impl Freeze {
    /// Parses a comma-separated list of `rot`, `trans`, `scale`.
    pub fn parse(list: &str) -> Result<Freeze> {
        let mut f = Freeze::default();
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "rot" => f.rot = true,
                "trans" => f.trans = true,
                "scale" => f.scale = true,
                other => return Err(Error::InvalidArgument(format!("unknown parameter group {other:?}"))),
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub iters: usize,
    /// Iterations before the collision term is switched on.
    pub warmup: usize,
    /// Relative objective decrease over a window of iterations below which
    /// a run counts as converged.
    pub tol: f64,
    /// Recorded for reproducibility; the driver itself draws no random numbers.
    pub seed: u64,
    pub freeze: Freeze,
    pub weights: LossWeights,
    pub normalization: RtNormalization,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: DEFAULT_LR,
            iters: DEFAULT_FIT_ITERS,
            warmup: 0,
            tol: 1e-9,
            seed: 0,
            freeze: Freeze::default(),
            weights: LossWeights::default(),
            normalization: RtNormalization::Mean,
        }
    }
}

impl OptimConfig {
    /// Defaults for collision resolution: translations only, 300 iterations.
    pub fn resolve() -> Self {
        OptimConfig {
            iters: DEFAULT_RESOLVE_ITERS,
            freeze: Freeze {
                rot: true,
                trans: false,
                scale: true,
            },
            ..OptimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {}", self.lr)));
        }
        if self.iters == 0 {
            return Err(Error::InvalidArgument("iteration budget must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be non-negative, got {}", self.tol)));
        }
        self.weights.validate()
    }
}

/// Per-iteration objective values; row `k` is the objective after `k` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub terms: Vec<&'static str>,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub values: Vec<f64>,
    pub total: f64,
}

impl Trace {
    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.total).collect()
    }

    /// `iteration,<terms>,total`, one row per iteration, shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration");
        for t in &self.terms {
            out.push(',');
            out.push_str(t);
        }
        out.push_str(",total\n");
        for row in &self.rows {
            let _ = write!(out, "{}", row.iteration);
            for v in &row.values {
                let _ = write!(out, ",{v:?}");
            }
            let _ = writeln!(out, ",{:?}", row.total);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub scene: Scene,
    pub trace: Trace,
    /// Iteration whose parameters were returned.
    pub best_iteration: usize,
}

struct Evaluation {
    values: Vec<f64>,
    total: f64,
    grads: Vec<PoseGrad>,
}

/// Terms shared by both drivers.
struct Objective<'a> {
    cache: &'a ExemplarCache,
    exemplars: Vec<usize>,
    /// Original rotations, kept verbatim when rotations are frozen.
    fixed_r: Option<Vec<Rotation>>,
    targets: Option<(&'a [PointCloud], Vec<PointCloud>)>,
    anchors: Option<(f64, Vec<nalgebra::Vector3<f64>>)>,
    cfg: &'a OptimConfig,
}

impl Objective<'_> {
    fn terms(&self) -> Vec<&'static str> {
        let mut t = Vec::new();
        if self.targets.is_some() {
            t.push("rt");
        }
        t.push("coll");
        if self.anchors.is_some() {
            t.push("anchor");
        }
        t
    }

    fn poses(&self, params: &[PoseParams]) -> Result<(Vec<Pose9DoF>, Vec<Option<So3Projection>>)> {
        let mut poses = Vec::with_capacity(params.len());
        let mut projections = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            match &self.fixed_r {
                Some(rs) => {
                    poses.push(Pose9DoF { r: rs[i], t: p.t, s: p.s });
                    projections.push(None);
                }
                None => {
                    let proj = p.projection()?;
                    poses.push(p.pose_with(&proj));
                    projections.push(Some(proj));
                }
            }
        }
        Ok((poses, projections))
    }

    fn evaluate(&self, params: &[PoseParams], iteration: usize) -> Result<Evaluation> {
        let (poses, projections) = self.poses(params)?;
        let w = &self.cfg.weights;
        let mut values = Vec::new();
        let mut total = 0.0;
        let mut grads = vec![PoseGrad::default(); params.len()];
        if let Some((targets, clouds)) = &self.targets {
            let (v, g) = target_loss_with_grad(targets, &poses, clouds, self.cfg.normalization)?;
            values.push(v);
            total += w.rt * v;
            for (a, b) in grads.iter_mut().zip(g) {
                *a += b.scaled(w.rt);
            }
        }
        let lambda = w.collision_weight(iteration, self.cfg.warmup);
        if w.coll > 0.0 && poses.len() > 1 {
            let objects: Vec<SceneObject> = self
                .exemplars
                .iter()
                .zip(&poses)
                .map(|(&e, &p)| self.cache.object(e, p))
                .collect::<Result<_>>()?;
            let c = collision_gradient(&objects)?;
            values.push(c.loss);
            if lambda > 0.0 {
                total += lambda * c.loss;
                for (a, b) in grads.iter_mut().zip(c.grads) {
                    *a += b.scaled(lambda);
                }
            }
        } else {
            values.push(0.0);
        }
        if let Some((weight, t0)) = &self.anchors {
            let mut v = 0.0;
            for ((g, p), a) in grads.iter_mut().zip(&poses).zip(t0) {
                let d = p.t - a;
                v += d.norm_squared();
                g.t += 2.0 * weight * d;
            }
            values.push(v);
            total += weight * v;
        }
        for (g, proj) in grads.iter_mut().zip(&projections) {
            let f = self.cfg.freeze;
            match proj {
                Some(proj) if !f.rot => *g = g.through_projection(proj),
                _ => g.m = nalgebra::Matrix3::zeros(),
            }
            if f.trans {
                g.t = nalgebra::Vector3::zeros();
            }
            if f.scale {
                g.s = nalgebra::Vector3::zeros();
            }
        }
        Ok(Evaluation { values, total, grads })
    }
}

const N_PARAMS: usize = 15;

fn flatten(p: &PoseParams) -> [f64; N_PARAMS] {
    let mut out = [0.0; N_PARAMS];
    out[..9].copy_from_slice(p.m.0.as_slice());
    out[9..12].copy_from_slice(p.t.as_slice());
    out[12..].copy_from_slice(p.s.as_slice());
    out
}

fn flatten_grad(g: &PoseGrad) -> [f64; N_PARAMS] {
    let mut out = [0.0; N_PARAMS];
    out[..9].copy_from_slice(g.m.as_slice());
    out[9..12].copy_from_slice(g.t.as_slice());
    out[12..].copy_from_slice(g.s.as_slice());
    out
}

fn unflatten(v: &[f64; N_PARAMS]) -> PoseParams {
    PoseParams {
        m: crate::geom::RawMatrix(nalgebra::Matrix3::from_column_slice(&v[..9])),
        t: nalgebra::Vector3::from_column_slice(&v[9..12]),
        s: nalgebra::Vector3::from_column_slice(&v[12..]),
    }
}

#[derive(Clone)]
struct Adam {
    m: Vec<[f64; N_PARAMS]>,
    v: Vec<[f64; N_PARAMS]>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![[0.0; N_PARAMS]; n],
            v: vec![[0.0; N_PARAMS]; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &[PoseParams], grads: &[PoseGrad], lr: f64) -> Vec<PoseParams> {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        params
            .iter()
            .zip(grads)
            .enumerate()
            .map(|(i, (p, g))| {
                let mut x = flatten(p);
                let g = flatten_grad(g);
                for k in 0..N_PARAMS {
                    self.m[i][k] = BETA1 * self.m[i][k] + (1.0 - BETA1) * g[k];
                    self.v[i][k] = BETA2 * self.v[i][k] + (1.0 - BETA2) * g[k] * g[k];
                    let m_hat = self.m[i][k] / c1;
                    let v_hat = self.v[i][k] / c2;
                    x[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
                unflatten(&x)
            })
            .collect()
    }
}

/// Adam with a monotone safeguard: after the first [`FREE_ITERATIONS`]
/// steps a step that raises the objective is undone and the moments are
/// reset. Returns the best iterate seen since the collision weight last
/// changed.
fn minimize(obj: &Objective, init: Vec<PoseParams>) -> Result<(Vec<PoseParams>, Trace, usize)> {
    let cfg = obj.cfg;
    let mut trace = Trace {
        terms: obj.terms(),
        rows: Vec::with_capacity(cfg.iters + 1),
    };
    let mut params = init;
    let mut cur = obj.evaluate(&params, 0)?;
    if !cur.total.is_finite() {
        return Err(Error::NonFinite(0));
    }
    let push = |trace: &mut Trace, k: usize, e: &Evaluation| {
        trace.rows.push(TraceRow {
            iteration: k,
            values: e.values.clone(),
            total: e.total,
        })
    };
    push(&mut trace, 0, &cur);
    let mut best = (cur.total, params.clone(), 0);
    let mut adam = Adam::new(params.len());
    let mut lr = cfg.lr;
    let lambda_at = |k: usize| cfg.weights.collision_weight(k, cfg.warmup);
    for k in 1..=cfg.iters {
        let phase_ahead = (k..=cfg.iters).any(|j| lambda_at(j) != lambda_at(k - 1));
        if !phase_ahead && (cur.grads.iter().all(PoseGrad::is_zero) || lr < cfg.lr * MIN_LR_FACTOR) {
            break;
        }
        if !phase_ahead && k > FREE_ITERATIONS + STALL_WINDOW && lambda_at(k - 1 - STALL_WINDOW) == lambda_at(k - 1) {
            let old = trace.rows[k - 1 - STALL_WINDOW].total;
            if old - cur.total <= cfg.tol * old {
                break;
            }
        }
        let saved = adam.clone();
        let cand_params = adam.update(&params, &cur.grads, lr);
        let switched = lambda_at(k) != lambda_at(k - 1);
        if switched {
            // The objective itself changes here; compare against its new value.
            cur = obj.evaluate(&params, k)?;
            best = (cur.total, params.clone(), k);
        }
        let cand = obj.evaluate(&cand_params, k)?;
        if !cand.total.is_finite() {
            return Err(Error::NonFinite(k));
        }
        if k > FREE_ITERATIONS && cand.total > cur.total {
            // Momentum can point uphill; restart it, and shrink the step
            // only when a fresh start fails too.
            if saved.step == 0 {
                lr *= 0.5;
            }
            adam = Adam::new(params.len());
            push(&mut trace, k, &cur);
            continue;
        }
        params = cand_params;
        cur = cand;
        push(&mut trace, k, &cur);
        if cur.total < best.0 {
            best = (cur.total, params.clone(), k);
        }
    }
    Ok((best.1, trace, best.2))
}

fn rebuild(scene: &Scene, obj: &Objective, params: &[PoseParams], best_iteration: usize) -> Result<Scene> {
    if best_iteration == 0 {
        return Ok(scene.clone());
    }
    let (poses, _) = obj.poses(params)?;
    let mut out = scene.clone();
    for (o, p) in out.objects.iter_mut().zip(poses) {
        o.pose = Pose9DoF::new(p.r, p.t, p.s)?;
    }
    Ok(out)
}

fn start(scene: &Scene) -> Result<Vec<PoseParams>> {
    if scene.objects.is_empty() {
        return Err(Error::InvalidArgument("scene has no objects".into()));
    }
    Ok(scene.objects.iter().map(|o| PoseParams::from_pose(&o.pose)).collect())
}

/// Fits every object's pose so that its exemplar's canonical samples land
/// on the matching world-frame `targets`, plus the collision term after
/// warm-up.
pub fn fit_poses(init: &Scene, cache: &ExemplarCache, targets: &[PointCloud], cfg: &OptimConfig) -> Result<OptimResult> {
    cfg.validate()?;
    if targets.len() != init.objects.len() {
        return Err(Error::MismatchedLengths(targets.len(), init.objects.len()));
    }
    let clouds = init
        .objects
        .iter()
        .map(|o| Ok(cache.object(o.exemplar, o.pose)?.points.as_ref().clone()))
        .collect::<Result<Vec<_>>>()?;
    let obj = Objective {
        cache,
        exemplars: init.objects.iter().map(|o| o.exemplar).collect(),
        fixed_r: cfg.freeze.rot.then(|| init.objects.iter().map(|o| o.pose.r).collect()),
        targets: Some((targets, clouds)),
        anchors: None,
        cfg,
    };
    let (params, trace, best_iteration) = minimize(&obj, start(init)?)?;
    Ok(OptimResult {
        scene: rebuild(init, &obj, &params, best_iteration)?,
        trace,
        best_iteration,
    })
}

/// Pushes interpenetrating objects apart by minimizing the weighted
/// collision loss plus `anchor_weight · Σᵢ ‖tᵢ − tᵢ⁰‖²`.
pub fn resolve_collisions(
    scene: &Scene,
    cache: &ExemplarCache,
    cfg: &OptimConfig,
    anchor_weight: f64,
) -> Result<OptimResult> {
    cfg.validate()?;
    if !(anchor_weight >= 0.0 && anchor_weight.is_finite()) {
        return Err(Error::InvalidArgument(format!("anchor weight must be non-negative, got {anchor_weight}")));
    }
    let obj = Objective {
        cache,
        exemplars: scene.objects.iter().map(|o| o.exemplar).collect(),
        fixed_r: cfg.freeze.rot.then(|| scene.objects.iter().map(|o| o.pose.r).collect()),
        targets: None,
        anchors: Some((anchor_weight, scene.objects.iter().map(|o| o.pose.t).collect())),
        cfg,
    };
    let (params, trace, best_iteration) = minimize(&obj, start(scene)?)?;
    Ok(OptimResult {
        scene: rebuild(scene, &obj, &params, best_iteration)?,
        trace,
        best_iteration,
    })
}

/// Canonical samples of each object's exemplar mapped through its pose.
pub fn world_targets(scene: &Scene, cache: &ExemplarCache) -> Result<Vec<PointCloud>> {
    scene
        .objects
        .iter()
        .map(|o| Ok(cache.object(o.exemplar, o.pose)?.points.transformed(&o.pose)))
        .collect()
}
