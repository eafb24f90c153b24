//! Scenes of placed exemplars: JSON storage, deterministic collision-free
//! generation on a ground plane, and pose perturbation.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{ExemplarCache, SceneObject};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Pose9DoF, Rotation, Vec3};
use crate::shape_db::ShapeDatabase;
use crate::voxel::{voxelize_occupancy, GridSpec, OccupancyGrid, TriMesh};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
pub const PLACEMENT_CHECK_RESOLUTION: usize = 64;
/// Rotation matrices read from JSON must be orthonormal to this tolerance.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// One exemplar placed by a pose; `exemplar` is a global database index.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObject {
    pub class: String,
    pub exemplar: usize,
    pub pose: Pose9DoF,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub objects: Vec<PlacedObject>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneJson {
    seed: u64,
    objects: Vec<ObjectJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectJson {
    class: String,
    exemplar: u32,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    s: [f64; 3],
}

impl Scene {
    /// Pretty JSON; floats are written in shortest round-trip form.
    pub fn to_json(&self) -> String {
        let doc = SceneJson {
            seed: self.seed,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectJson {
                    class: o.class.clone(),
                    exemplar: o.exemplar as u32,
                    r: o.pose.r.to_row_major(),
                    t: o.pose.t.into(),
                    s: o.pose.s.into(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("scene serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let doc: SceneJson = crate::error::parse_json(text, path)?;
        let objects = doc
            .objects
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                let field = |name: &str, e: Error| Error::format(path, format!("objects[{i}].{name}: {e}"));
                let r = Rotation::try_from_matrix(Mat3::from_row_slice(&o.r), ROTATION_TOLERANCE)
                    .map_err(|e| field("R", e))?;
                let pose = Pose9DoF::new(r, Vec3::from(o.t), Vec3::from(o.s)).map_err(|e| field("s", e))?;
                Ok(PlacedObject {
                    class: o.class,
                    exemplar: o.exemplar as usize,
                    pose,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Scene { seed: doc.seed, objects })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scene::from_json(&text, path)
    }

    /// Checks every exemplar index and class name against `db`.
    pub fn validate(&self, db: &ShapeDatabase) -> Result<()> {
        for o in &self.objects {
            let e = db.entry(o.exemplar)?;
            if db.classes[e.class_id] != o.class {
                return Err(Error::InvalidArgument(format!(
                    "exemplar {} belongs to class {:?}, not {:?}",
                    o.exemplar, db.classes[e.class_id], o.class
                )));
            }
        }
        Ok(())
    }

    pub fn posed_meshes(&self, db: &ShapeDatabase) -> Result<Vec<TriMesh>> {
        self.objects
            .iter()
            .map(|o| Ok(db.entry(o.exemplar)?.mesh.transformed(&o.pose)))
            .collect()
    }

    /// Axis-aligned bounds of all posed meshes.
    pub fn bounds(&self, db: &ShapeDatabase) -> Result<Option<(Vec3, Vec3)>> {
        Ok(union_bounds(self.posed_meshes(db)?.iter().map(|m| m.bounds())))
    }

    /// Per-object occupancy on a shared grid.
    pub fn rasterize(&self, db: &ShapeDatabase, spec: &GridSpec) -> Result<Vec<OccupancyGrid>> {
        self.objects
            .par_iter()
            .map(|o| voxelize_occupancy(&db.entry(o.exemplar)?.mesh, &o.pose, spec))
            .collect()
    }

    pub fn collision_objects(&self, cache: &ExemplarCache) -> Result<Vec<SceneObject>> {
        self.objects.iter().map(|o| cache.object(o.exemplar, o.pose)).collect()
    }
}

pub(crate) fn union_bounds(boxes: impl IntoIterator<Item = (Vec3, Vec3)>) -> Option<(Vec3, Vec3)> {
    boxes
        .into_iter()
        .reduce(|(lo, hi), (l, h)| (lo.inf(&l), hi.sup(&h)))
}

/// Cubic grid of `resolution` voxels along the longest side of `bounds`.
pub fn scene_grid(bounds: (Vec3, Vec3), resolution: usize) -> Result<GridSpec> {
    GridSpec::covering(&bounds.0, &bounds.1, resolution)
}

/// Sampling ranges for generated scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// Per-axis scale is log-uniform in `[lo, hi]`.
    pub scale_range: [f64; 2],
    /// Ground-plane positions are uniform in `[lo, hi]²`.
    pub xy_range: [f64; 2],
    pub max_attempts: usize,
    pub check_resolution: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            scale_range: [0.5, 1.5],
            xy_range: [-1.5, 1.5],
            max_attempts: MAX_PLACEMENT_ATTEMPTS,
            check_resolution: PLACEMENT_CHECK_RESOLUTION,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let [s0, s1] = self.scale_range;
        let [x0, x1] = self.xy_range;
        if !(s0 > 0.0 && s1 >= s0 && s1.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad scale range [{s0}, {s1}]")));
        }
        if !(x1 >= x0 && x0.is_finite() && x1.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad position range [{x0}, {x1}]")));
        }
        if self.max_attempts == 0 || self.check_resolution == 0 {
            return Err(Error::InvalidArgument("attempts and resolution must be positive".into()));
        }
        Ok(())
    }
}

/// True when some pair of objects shares an occupied voxel of the
/// `resolution` grid over the scene bounds.
fn any_overlap(meshes: &[TriMesh], poses: &[Pose9DoF], resolution: usize) -> Result<bool> {
    let posed: Vec<(Vec3, Vec3)> = meshes.iter().zip(poses).map(|(m, p)| m.transformed(p).bounds()).collect();
    let n = posed.len();
    let boxes_touch = |a: usize, b: usize| (0..3).all(|k| posed[a].0[k] <= posed[b].1[k] && posed[b].0[k] <= posed[a].1[k]);
    if !(0..n).any(|a| (a + 1..n).any(|b| boxes_touch(a, b))) {
        return Ok(false);
    }
    let spec = scene_grid(union_bounds(posed.iter().copied()).expect("non-empty"), resolution)?;
    let grids: Vec<OccupancyGrid> = meshes
        .par_iter()
        .zip(poses)
        .map(|(m, p)| voxelize_occupancy(m, p, &spec))
        .collect::<Result<_>>()?;
    for a in 0..n {
        for b in a + 1..n {
            if boxes_touch(a, b) && grids[a].intersection_count(&grids[b]) > 0 {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Draws `n_objects` upright exemplars standing on `z = 0`.
///
/// Each object draws a class, an exemplar of that class, a yaw, a
/// log-uniform per-axis scale and a ground position. A candidate is kept
/// when no pair of objects placed so far shares an occupied voxel of the
/// check grid spanning all of them; otherwise it is redrawn, up to
/// `max_attempts` times.
pub fn generate_scene(db: &ShapeDatabase, n_objects: usize, seed: u64, cfg: &GenConfig) -> Result<Scene> {
    cfg.validate()?;
    if n_objects == 0 {
        return Err(Error::InvalidArgument("a scene needs at least one object".into()));
    }
    if db.is_empty() {
        return Err(Error::InvalidArgument("shape database is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ln_lo, ln_hi) = (cfg.scale_range[0].ln(), cfg.scale_range[1].ln());
    let mut objects: Vec<PlacedObject> = Vec::with_capacity(n_objects);
    let mut meshes: Vec<TriMesh> = Vec::with_capacity(n_objects);
    let mut poses: Vec<Pose9DoF> = Vec::with_capacity(n_objects);
    for index in 0..n_objects {
        let mut placed = false;
        for _ in 0..cfg.max_attempts {
            let class_id = rng.random_range(0..db.classes.len());
            let members: Vec<usize> = db.class_entries(class_id).map(|e| e.exemplar_index).collect();
            let exemplar = members[rng.random_range(0..members.len())];
            let yaw = rng.random_range(0.0..std::f64::consts::TAU);
            let s = Vec3::from_fn(|_, _| uniform(&mut rng, ln_lo, ln_hi).exp());
            let x = uniform(&mut rng, cfg.xy_range[0], cfg.xy_range[1]);
            let y = uniform(&mut rng, cfg.xy_range[0], cfg.xy_range[1]);
            let mesh = &db.entry(exemplar)?.mesh;
            // Yaw leaves heights alone, so the lowest point is s_z · min z.
            let min_z = mesh.bounds().0.z * s.z;
            let pose = Pose9DoF::new(Rotation::from_yaw(yaw), Vec3::new(x, y, -min_z), s)?;
            meshes.push(mesh.clone());
            poses.push(pose);
            if any_overlap(&meshes, &poses, cfg.check_resolution)? {
                meshes.pop();
                poses.pop();
                continue;
            }
            objects.push(PlacedObject {
                class: db.classes[class_id].clone(),
                exemplar,
                pose,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::PlacementFailure {
                object: index,
                attempts: cfg.max_attempts,
            });
        }
    }
    Ok(Scene { seed, objects })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random point in the unit ball, by rejection from the enclosing cube.
fn unit_ball(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

/// Rotates by exactly `rot_deg` about a random axis (left-multiplied),
/// shifts by a random vector of norm at most `trans`, and multiplies every
/// scale component by `1 + u` with `|u| ≤ scale_frac`.
pub fn perturb_pose(p: &Pose9DoF, rot_deg: f64, trans: f64, scale_frac: f64, seed: u64) -> Result<Pose9DoF> {
    if !(rot_deg >= 0.0 && trans >= 0.0 && (0.0..1.0).contains(&scale_frac)) {
        return Err(Error::InvalidArgument(format!(
            "perturbation magnitudes must be non-negative with scale_frac < 1, got {rot_deg}, {trans}, {scale_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = loop {
        let v = unit_ball(&mut rng);
        if v.norm() > 1e-3 {
            break v;
        }
    };
    let shift = unit_ball(&mut rng) * trans;
    let s = p.s.map(|v| v * (1.0 + uniform(&mut rng, -scale_frac, scale_frac)));
    let r = Rotation::from_axis_angle(&axis, rot_deg.to_radians()).compose(&p.r);
    Pose9DoF::new(r, p.t + shift, s)
}
