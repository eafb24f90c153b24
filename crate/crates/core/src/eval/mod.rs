//! Scene metrics: voxel IoU (absolute and relative to an oracle), oriented
//! box IoU and mAP, Procrustes alignment, and intersecting volume.

mod boxes;
mod map;
mod procrustes;

pub use boxes::{box_corners, oriented_box_iou, oriented_box_iou_with, BOX_IOU_RESOLUTION};
pub use map::{average_precision, map3d, DetectionMatch, GtBox, MapReport, ScoredBox};
pub use procrustes::{procrustes_align, procrustes_aligned_scene, Similarity};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{scene_grid, union_bounds, Scene};
use crate::shape_db::ShapeDatabase;
use crate::voxel::{voxelize_occupancy, GridSpec, OccupancyGrid, TriMesh};

pub const DEFAULT_IOU_RESOLUTION: usize = 128;
pub const DEFAULT_MIV_RESOLUTION: usize = 64;
pub const DEFAULT_COLLISION_EPSILON_VOXELS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassIoU {
    pub class: String,
    /// `None` when the class occupies no voxel in either scene.
    pub iou: Option<f64>,
    pub intersection: usize,
    pub union: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoUReport {
    pub per_class: Vec<ClassIoU>,
    pub mean_iou: f64,
    pub global_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative: Option<RelativeIoU>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeIoU {
    /// Absolute IoU over oracle IoU per class; `None` where either is undefined or the oracle scores 0.
    pub per_class: Vec<Option<f64>>,
    pub mean_iou: Option<f64>,
    pub global_iou: Option<f64>,
}

fn posed_meshes(scene: &Scene, db: &ShapeDatabase) -> Result<Vec<(usize, TriMesh)>> {
    tagged_meshes(scene, db, db)
}

/// Posed meshes of a scene indexing `scene_db`, tagged with their class id in `classes`.
fn tagged_meshes(scene: &Scene, scene_db: &ShapeDatabase, classes: &ShapeDatabase) -> Result<Vec<(usize, TriMesh)>> {
    scene
        .objects
        .iter()
        .map(|o| {
            let e = scene_db.entry(o.exemplar)?;
            let class_id = classes.class_id(&scene_db.classes[e.class_id])?;
            Ok((class_id, e.mesh.transformed(&o.pose)))
        })
        .collect()
}

/// Occupancy per class (union within class) on `spec`.
fn class_grids(meshes: &[(usize, TriMesh)], n_classes: usize, spec: &GridSpec) -> Result<Vec<OccupancyGrid>> {
    use rayon::prelude::*;
    let grids: Vec<OccupancyGrid> = meshes
        .par_iter()
        .map(|(_, m)| voxelize_occupancy(m, &crate::geom::Pose9DoF::identity(), spec))
        .collect::<Result<_>>()?;
    let mut out = vec![OccupancyGrid::empty(*spec); n_classes];
    for ((class_id, _), g) in meshes.iter().zip(&grids) {
        out[*class_id].union_with(g);
    }
    Ok(out)
}

/// Shared grid of `resolution` voxels along the longest side of both scenes' bounds.
pub fn shared_grid(a: &Scene, b: &Scene, db: &ShapeDatabase, resolution: usize) -> Result<Option<GridSpec>> {
    let bounds = union_bounds(a.bounds(db)?.into_iter().chain(b.bounds(db)?));
    bounds.map(|bb| scene_grid(bb, resolution)).transpose()
}

/// Per-class, mean and class-agnostic voxel IoU of `pred` against `gt`.
pub fn voxel_scene_iou(pred: &Scene, gt: &Scene, db: &ShapeDatabase, resolution: usize) -> Result<IoUReport> {
    let spec = shared_grid(pred, gt, db, resolution)?.ok_or(Error::EmptyScenes)?;
    voxel_scene_iou_on(pred, gt, db, &spec)
}

/// [`voxel_scene_iou`] on a caller-supplied grid.
pub fn voxel_scene_iou_on(pred: &Scene, gt: &Scene, db: &ShapeDatabase, spec: &GridSpec) -> Result<IoUReport> {
    tagged_iou(&posed_meshes(pred, db)?, &posed_meshes(gt, db)?, db, spec)
}

fn tagged_iou(pred: &[(usize, TriMesh)], gt: &[(usize, TriMesh)], db: &ShapeDatabase, spec: &GridSpec) -> Result<IoUReport> {
    let n_classes = db.classes.len();
    let p = class_grids(pred, n_classes, spec)?;
    let g = class_grids(gt, n_classes, spec)?;
    let mut p_all = OccupancyGrid::empty(*spec);
    let mut g_all = OccupancyGrid::empty(*spec);
    let mut per_class = Vec::with_capacity(n_classes);
    for (c, (pc, gc)) in p.iter().zip(&g).enumerate() {
        p_all.union_with(pc);
        g_all.union_with(gc);
        let intersection = pc.intersection_count(gc);
        let union = pc.union_count(gc);
        per_class.push(ClassIoU {
            class: db.classes[c].clone(),
            iou: (union > 0).then(|| intersection as f64 / union as f64),
            intersection,
            union,
        });
    }
    let union = p_all.union_count(&g_all);
    if union == 0 {
        return Err(Error::EmptyScenes);
    }
    let defined: Vec<f64> = per_class.iter().filter_map(|c| c.iou).collect();
    Ok(IoUReport {
        mean_iou: defined.iter().sum::<f64>() / defined.len() as f64,
        global_iou: p_all.intersection_count(&g_all) as f64 / union as f64,
        per_class,
        relative: None,
    })
}

/// Ground-truth poses with each object's shape replaced by its nearest
/// exemplar in `db`; `gt_db` holds the ground-truth shapes.
pub fn oracle_scene(gt: &Scene, gt_db: &ShapeDatabase, db: &ShapeDatabase) -> Result<Scene> {
    let mut out = gt.clone();
    for o in &mut out.objects {
        let class_id = db.class_id(&o.class)?;
        o.exemplar = db.assign_exemplar(&gt_db.entry(o.exemplar)?.sdf, class_id)?;
    }
    Ok(out)
}

fn ratio(abs: Option<f64>, oracle: Option<f64>) -> Option<f64> {
    match (abs, oracle) {
        (Some(a), Some(o)) if o > 0.0 => Some((a / o).clamp(0.0, 1.0)),
        _ => None,
    }
}

/// Absolute IoU of `pred` against `gt`, plus each value divided by the IoU
/// that `oracle` reaches against `gt`.
pub fn relative_iou(pred: &Scene, gt: &Scene, oracle: &Scene, db: &ShapeDatabase, resolution: usize) -> Result<IoUReport> {
    relative_iou_across(pred, oracle, db, gt, db, resolution)
}

/// [`relative_iou`] with `gt` indexing its own database `gt_db`; classes
/// are matched by name and reported in the order of `db`.
pub fn relative_iou_across(
    pred: &Scene,
    oracle: &Scene,
    db: &ShapeDatabase,
    gt: &Scene,
    gt_db: &ShapeDatabase,
    resolution: usize,
) -> Result<IoUReport> {
    let bounds = [pred.bounds(db)?, oracle.bounds(db)?, gt.bounds(gt_db)?];
    let spec = scene_grid(union_bounds(bounds.into_iter().flatten()).ok_or(Error::EmptyScenes)?, resolution)?;
    let g = tagged_meshes(gt, gt_db, db)?;
    let mut abs = tagged_iou(&posed_meshes(pred, db)?, &g, db, &spec)?;
    let best = tagged_iou(&posed_meshes(oracle, db)?, &g, db, &spec)?;
    let per_class: Vec<Option<f64>> = abs
        .per_class
        .iter()
        .zip(&best.per_class)
        .map(|(a, o)| ratio(a.iou, o.iou))
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    abs.relative = Some(RelativeIoU {
        mean_iou: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        global_iou: ratio(Some(abs.global_iou), Some(best.global_iou)),
        per_class,
    });
    Ok(abs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOverlap {
    pub a: usize,
    pub b: usize,
    pub voxels: usize,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MivReport {
    /// Mean intersecting volume over colliding pairs; 0 when there are none.
    pub miv: f64,
    pub collisions: usize,
    /// Every pair with at least one shared voxel.
    pub overlaps: Vec<PairOverlap>,
    pub voxel_volume: f64,
}

impl MivReport {
    /// Pools several reports: the mean runs over all colliding pairs.
    pub fn pooled(reports: &[MivReport]) -> (f64, usize) {
        let collisions: usize = reports.iter().map(|r| r.collisions).sum();
        let volume: f64 = reports.iter().map(|r| r.miv * r.collisions as f64).sum();
        (if collisions > 0 { volume / collisions as f64 } else { 0.0 }, collisions)
    }
}

/// Pairwise overlap of already posed meshes on the `resolution` grid over
/// their bounds; a pair collides when it shares more than `epsilon_voxels`.
pub fn mesh_overlaps(meshes: &[TriMesh], resolution: usize, epsilon_voxels: usize) -> Result<MivReport> {
    use rayon::prelude::*;
    let Some(bounds) = union_bounds(meshes.iter().map(|m| m.bounds())) else {
        return Ok(MivReport {
            miv: 0.0,
            collisions: 0,
            overlaps: Vec::new(),
            voxel_volume: 0.0,
        });
    };
    let spec = scene_grid(bounds, resolution)?;
    let grids: Vec<OccupancyGrid> = meshes
        .par_iter()
        .map(|m| voxelize_occupancy(m, &crate::geom::Pose9DoF::identity(), &spec))
        .collect::<Result<_>>()?;
    let vv = spec.voxel_volume();
    let mut overlaps = Vec::new();
    for a in 0..grids.len() {
        for b in a + 1..grids.len() {
            let voxels = grids[a].intersection_count(&grids[b]);
            if voxels > 0 {
                overlaps.push(PairOverlap {
                    a,
                    b,
                    voxels,
                    volume: voxels as f64 * vv,
                });
            }
        }
    }
    let colliding: Vec<&PairOverlap> = overlaps.iter().filter(|o| o.voxels > epsilon_voxels).collect();
    let miv = if colliding.is_empty() {
        0.0
    } else {
        colliding.iter().map(|o| o.volume).sum::<f64>() / colliding.len() as f64
    };
    Ok(MivReport {
        miv,
        collisions: colliding.len(),
        overlaps,
        voxel_volume: vv,
    })
}

/// Mean intersecting volume and collision count of a scene.
pub fn miv_and_collisions(scene: &Scene, db: &ShapeDatabase, resolution: usize, epsilon_voxels: usize) -> Result<MivReport> {
    let meshes: Vec<TriMesh> = posed_meshes(scene, db)?.into_iter().map(|(_, m)| m).collect();
    mesh_overlaps(&meshes, resolution, epsilon_voxels)
}

#[cfg(test)]
mod tests;
