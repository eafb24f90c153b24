use std::sync::OnceLock;

use nalgebra::{Matrix4, Quaternion, UnitQuaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{Mat3, Pose9DoF, Rotation, Vec3};
use crate::scene::{generate_scene, GenConfig, PlacedObject};
use crate::shape_db::{build_database, DbConfig};
use crate::toy::toy_shapes;
use crate::voxel::{box_mesh, unit_cube, PointCloud};

fn db() -> &'static ShapeDatabase {
    static DB: OnceLock<ShapeDatabase> = OnceLock::new();
    DB.get_or_init(|| {
        let cfg = DbConfig {
            resolution: 16,
            points_per_shape: 64,
            ..DbConfig::default()
        };
        build_database(&toy_shapes(5), 3, 0, &cfg).unwrap()
    })
}

fn object(exemplar: usize, pose: Pose9DoF) -> PlacedObject {
    let class = db().classes[db().entry(exemplar).unwrap().class_id].clone();
    PlacedObject { class, exemplar, pose }
}

fn scene(objects: Vec<PlacedObject>) -> Scene {
    Scene { seed: 0, objects }
}

fn at(x: f64, y: f64) -> Pose9DoF {
    Pose9DoF::from_translation(Vec3::new(x, y, 0.5))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose9DoF {
    let axis = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    Pose9DoF::new(
        Rotation::from_axis_angle(&axis, rng.random_range(0.0..3.0)),
        Vec3::from_fn(|_, _| rng.random_range(-0.4..0.4)),
        Vec3::from_fn(|_, _| rng.random_range(0.6..1.4)),
    )
    .unwrap()
}

#[test]
fn identical_scenes_score_one() {
    let s = generate_scene(db(), 3, 4, &GenConfig::default()).unwrap();
    let r = voxel_scene_iou(&s, &s, db(), 48).unwrap();
    assert_eq!(r.mean_iou, 1.0);
    assert_eq!(r.global_iou, 1.0);
    assert!(r.per_class.iter().all(|c| c.iou.is_none_or(|v| v == 1.0)));
}

#[test]
fn disjoint_scenes_score_zero() {
    let a = scene(vec![object(0, at(-2.0, 0.0)), object(4, at(-2.0, 2.0))]);
    let b = scene(vec![object(1, at(2.0, 0.0)), object(5, at(2.0, 2.0))]);
    let r = voxel_scene_iou(&a, &b, db(), 48).unwrap();
    assert_eq!(r.mean_iou, 0.0);
    assert_eq!(r.global_iou, 0.0);
    assert!(matches!(
        voxel_scene_iou(&scene(vec![]), &scene(vec![]), db(), 48),
        Err(Error::EmptyScenes)
    ));
}

#[test]
fn class_counts_match_a_voxel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..3 {
        let gt = generate_scene(db(), 3, seed, &GenConfig::default()).unwrap();
        let mut pred = gt.clone();
        for o in &mut pred.objects {
            o.pose.t += Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0);
        }
        let r = voxel_scene_iou(&pred, &gt, db(), 40).unwrap();
        assert_eq!(r, voxel_scene_iou(&gt, &pred, db(), 40).unwrap());

        let spec = shared_grid(&pred, &gt, db(), 40).unwrap().unwrap();
        let pg = pred.rasterize(db(), &spec).unwrap();
        let gg = gt.rasterize(db(), &spec).unwrap();
        let class_of = |s: &Scene, k: usize| db().class_id(&s.objects[k].class).unwrap();
        let (mut all_i, mut all_u) = (0, 0);
        let mut inter = vec![0usize; db().classes.len()];
        let mut uni = vec![0usize; db().classes.len()];
        for v in 0..spec.len() {
            let idx = spec.unflatten(v);
            let mut in_p = vec![false; db().classes.len()];
            let mut in_g = vec![false; db().classes.len()];
            for k in 0..pg.len() {
                in_p[class_of(&pred, k)] |= pg[k].get(idx);
            }
            for k in 0..gg.len() {
                in_g[class_of(&gt, k)] |= gg[k].get(idx);
            }
            for c in 0..in_p.len() {
                inter[c] += (in_p[c] && in_g[c]) as usize;
                uni[c] += (in_p[c] || in_g[c]) as usize;
            }
            let (p_any, g_any) = (in_p.contains(&true), in_g.contains(&true));
            all_i += (p_any && g_any) as usize;
            all_u += (p_any || g_any) as usize;
        }
        for (c, report) in r.per_class.iter().enumerate() {
            assert_eq!(report.intersection, inter[c]);
            assert_eq!(report.union, uni[c]);
        }
        assert_eq!(r.global_iou, all_i as f64 / all_u as f64);
    }
}

#[test]
fn relative_iou_divides_by_the_oracle() {
    let gt = scene(vec![object(0, at(0.0, 0.0)), object(4, at(1.2, 0.0))]);
    let oracle = scene(vec![object(1, at(0.0, 0.0)), object(4, at(1.2, 0.0))]);
    let pred = scene(vec![object(1, at(0.1, 0.05)), object(3, at(1.1, 0.0))]);

    let same = relative_iou(&oracle, &gt, &oracle, db(), 48).unwrap();
    let rel = same.relative.unwrap();
    assert!(rel.per_class.iter().flatten().all(|&v| v == 1.0));
    assert_eq!(rel.global_iou, Some(1.0));

    let r = relative_iou(&pred, &gt, &oracle, db(), 48).unwrap();
    let bounds = union_bounds(
        [&pred, &gt, &oracle]
            .iter()
            .filter_map(|s| s.bounds(db()).unwrap()),
    )
    .unwrap();
    let spec = scene_grid(bounds, 48).unwrap();
    let a = voxel_scene_iou_on(&pred, &gt, db(), &spec).unwrap();
    let o = voxel_scene_iou_on(&oracle, &gt, db(), &spec).unwrap();
    let rel = r.relative.unwrap();
    for c in 0..a.per_class.len() {
        let expected = (a.per_class[c].iou.unwrap() / o.per_class[c].iou.unwrap()).min(1.0);
        assert_eq!(rel.per_class[c], Some(expected));
        assert!(rel.per_class[c].unwrap() >= a.per_class[c].iou.unwrap());
    }
    assert_eq!(rel.global_iou, Some((a.global_iou / o.global_iou).min(1.0)));

    let far = scene(vec![object(1, at(4.0, 4.0)), object(4, at(1.2, 0.0))]);
    let guarded = relative_iou(&pred, &gt, &far, db(), 48).unwrap().relative.unwrap();
    assert_eq!(guarded.per_class[0], None);
    assert!(guarded.per_class[1].is_some());
}

#[test]
fn ground_truth_may_index_its_own_database() {
    let cfg = DbConfig {
        resolution: 16,
        points_per_shape: 64,
        ..DbConfig::default()
    };
    let gt_db = build_database(&toy_shapes(5), 5, 0, &cfg).unwrap();
    let gt = generate_scene(&gt_db, 3, 9, &GenConfig::default()).unwrap();
    let oracle = oracle_scene(&gt, &gt_db, db()).unwrap();
    let r = relative_iou_across(&oracle, &oracle, db(), &gt, &gt_db, 40).unwrap();
    let rel = r.relative.as_ref().unwrap();
    assert_eq!(rel.global_iou, Some(1.0));
    assert!(rel.per_class.iter().flatten().all(|&v| v == 1.0));

    let bounds = union_bounds([oracle.bounds(db()).unwrap(), gt.bounds(&gt_db).unwrap()].into_iter().flatten()).unwrap();
    let spec = scene_grid(bounds, 40).unwrap();
    let occupancy = |s: &Scene, d: &ShapeDatabase| {
        let mut all = OccupancyGrid::empty(spec);
        for o in &s.objects {
            let m = d.entry(o.exemplar).unwrap().mesh.transformed(&o.pose);
            all.union_with(&voxelize_occupancy(&m, &Pose9DoF::identity(), &spec).unwrap());
        }
        all
    };
    let (a, b) = (occupancy(&oracle, db()), occupancy(&gt, &gt_db));
    let (mut inter, mut uni) = (0usize, 0usize);
    for (x, y) in a.cells().iter().zip(b.cells()) {
        inter += (*x && *y) as usize;
        uni += (*x || *y) as usize;
    }
    assert_eq!(r.global_iou, inter as f64 / uni as f64);
    assert!(r.global_iou < 1.0);
}

#[test]
fn oracle_scene_is_identity_on_exemplars() {
    let gt = generate_scene(db(), 3, 2, &GenConfig::default()).unwrap();
    assert_eq!(oracle_scene(&gt, db(), db()).unwrap(), gt);
}

fn horn_rotation(p: &[Vec3], g: &[Vec3]) -> UnitQuaternion<f64> {
    let n = p.len() as f64;
    let mp = p.iter().sum::<Vec3>() / n;
    let mg = g.iter().sum::<Vec3>() / n;
    let mut s = [[0.0; 3]; 3];
    for (a, b) in p.iter().zip(g) {
        let (a, b) = (a - mp, b - mg);
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += a[i] * b[j];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let nm = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = nm.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(k);
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

fn residual(sim: &Similarity, p: &[Vec3], g: &[Vec3]) -> f64 {
    p.iter().zip(g).map(|(a, b)| (sim.apply(a) - b).norm_squared()).sum()
}

#[test]
fn procrustes_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Vec3> = (0..20).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
    let cloud = PointCloud::new(pts.clone()).unwrap();
    let id = procrustes_align(&cloud, &cloud).unwrap();
    assert!((id.scale - 1.0).abs() < 1e-12);
    assert!((id.r.matrix() - Mat3::identity()).norm() < 1e-12);
    assert!(id.t.norm() < 1e-12);

    let truth = Similarity {
        scale: 1.7,
        r: Rotation::from_axis_angle(&Vec3::new(0.3, -1.0, 0.5), 2.1),
        t: Vec3::new(0.4, -2.0, 1.0),
    };
    let moved = PointCloud::new(pts.iter().map(|p| truth.apply(p)).collect()).unwrap();
    let est = procrustes_align(&cloud, &moved).unwrap();
    assert!((est.scale - truth.scale).abs() < 1e-9);
    assert!((est.r.matrix() - truth.r.matrix()).norm() < 1e-9);
    assert!((est.t - truth.t).norm() < 1e-9);

    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let noisy: Vec<Vec3> = moved
            .points
            .iter()
            .map(|p| p + Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1)))
            .collect();
        let est = procrustes_align(&cloud, &PointCloud::new(noisy.clone()).unwrap()).unwrap();
        // Horn's quaternion rotation, then the least-squares scale and shift.
        let q = horn_rotation(&pts, &noisy);
        let rot = q.to_rotation_matrix().into_inner();
        let n = pts.len() as f64;
        let (mp, mg) = (pts.iter().sum::<Vec3>() / n, noisy.iter().sum::<Vec3>() / n);
        let num: f64 = pts.iter().zip(&noisy).map(|(p, g)| (g - mg).dot(&(rot * (p - mp)))).sum();
        let den: f64 = pts.iter().map(|p| (p - mp).norm_squared()).sum();
        let c = num / den;
        let oracle = Similarity {
            scale: c,
            r: Rotation::from_matrix_unchecked(rot),
            t: mg - c * rot * mp,
        };
        let (a, b) = (residual(&est, &pts, &noisy), residual(&oracle, &pts, &noisy));
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    let line = PointCloud::new((0..5).map(|k| Vec3::new(k as f64, 2.0 * k as f64, 0.0)).collect()).unwrap();
    assert!(matches!(procrustes_align(&line, &line), Err(Error::DegenerateConfiguration(1))));
}

#[test]
fn aligned_scene_recovers_a_global_similarity() {
    let gt = generate_scene(db(), 3, 6, &GenConfig::default()).unwrap();
    let sim = Similarity {
        scale: 0.8,
        r: Rotation::from_yaw(0.4),
        t: Vec3::new(0.3, 0.1, 0.0),
    };
    let mut pred = gt.clone();
    for o in &mut pred.objects {
        o.pose = sim.compose_pose(&o.pose).unwrap();
    }
    let (aligned, _) = procrustes_aligned_scene(&pred, &gt).unwrap();
    for (a, b) in aligned.objects.iter().zip(&gt.objects) {
        assert!((a.pose.t - b.pose.t).norm() < 1e-9);
        assert!((a.pose.s - b.pose.s).norm() < 1e-9);
    }
}

/// Stratified Monte-Carlo IoU: one jittered sample per cell of a
/// `strata³` lattice over the union bounds.
fn monte_carlo_iou(a: &Pose9DoF, b: &Pose9DoF, strata: usize, seed: u64) -> f64 {
    let corners: Vec<Vec3> = box_corners(a).into_iter().chain(box_corners(b)).collect();
    let lo = corners.iter().fold(corners[0], |m, v| m.inf(v));
    let hi = corners.iter().fold(corners[0], |m, v| m.sup(v));
    let inside = |p: &Pose9DoF, w: &Vec3| {
        let u = (p.r.matrix().transpose() * (w - p.t)).component_div(&p.s);
        u.amax() <= 0.5
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut i, mut u) = (0usize, 0usize);
    let step = (hi - lo) / strata as f64;
    for x in 0..strata {
        for y in 0..strata {
            for z in 0..strata {
                let cell = Vec3::new(x as f64, y as f64, z as f64);
                let jitter = Vec3::from_fn(|_, _| rng.random::<f64>());
                let w = lo + (cell + jitter).component_mul(&step);
                let (ia, ib) = (inside(a, &w), inside(b, &w));
                i += (ia && ib) as usize;
                u += (ia || ib) as usize;
            }
        }
    }
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

#[test]
fn box_iou_examples() {
    let a = Pose9DoF::from_translation(Vec3::new(0.5, 0.5, 0.5));
    assert!((oriented_box_iou(&a, &a) - 1.0).abs() <= 0.01);
    let far = Pose9DoF::from_translation(Vec3::new(3.0, 0.0, 0.0));
    assert_eq!(oriented_box_iou(&a, &far), 0.0);
    let half = Pose9DoF::from_translation(Vec3::new(1.0, 0.5, 0.5));
    assert!((oriented_box_iou(&a, &half) - 1.0 / 3.0).abs() <= 0.01);
}

#[test]
fn box_iou_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for k in 0..12 {
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        let mc = monte_carlo_iou(&a, &b, 100, k);
        let v = oriented_box_iou(&a, &b);
        assert!((v - mc).abs() <= 0.01, "case {k}: {v} vs {mc}");
        checked += (mc > 0.05) as usize;
    }
    assert!(checked >= 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn box_iou_ignores_a_common_rigid_motion(
        seed in 0u64..1000,
        angle in 0.0f64..6.28,
        ax in -1.0f64..1.0, ay in -1.0f64..1.0,
        tx in -3.0f64..3.0, ty in -3.0f64..3.0, tz in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        let motion = Similarity {
            scale: 1.0,
            r: Rotation::from_axis_angle(&Vec3::new(ax, ay, 1.0), angle),
            t: Vec3::new(tx, ty, tz),
        };
        let before = oriented_box_iou(&a, &b);
        let after = oriented_box_iou(&motion.compose_pose(&a).unwrap(), &motion.compose_pose(&b).unwrap());
        prop_assert!((before - after).abs() <= 0.01, "{} vs {}", before, after);
    }

    #[test]
    fn map_ignores_monotone_rescoring(scores in proptest::collection::vec(0.0f64..1.0, 6), offsets in proptest::collection::vec(-0.6f64..0.6, 6)) {
        let gts: Vec<GtBox> = (0..4)
            .map(|k| GtBox { scene: k % 2, class: ["a", "b"][k / 2].into(), pose: Pose9DoF::from_translation(Vec3::new(3.0 * k as f64, 0.0, 0.0)) })
            .collect();
        let preds: Vec<ScoredBox> = (0..6)
            .map(|k| ScoredBox {
                scene: k % 2,
                class: ["a", "b"][(k / 2) % 2].into(),
                pose: Pose9DoF::from_translation(Vec3::new(3.0 * (k % 4) as f64 + offsets[k], 0.0, 0.0)),
                score: scores[k],
            })
            .collect();
        let base = map3d(&preds, &gts, 0.25);
        let rescored: Vec<ScoredBox> = preds.iter().map(|p| ScoredBox { score: p.score.powi(3) * 0.5 + 0.1, ..p.clone() }).collect();
        prop_assert_eq!(base.map, map3d(&rescored, &gts, 0.25).map);
    }
}

fn gt_box(x: f64) -> GtBox {
    GtBox {
        scene: 0,
        class: "box".into(),
        pose: Pose9DoF::from_translation(Vec3::new(x, 0.0, 0.0)),
    }
}

fn pred_box(x: f64, score: f64) -> ScoredBox {
    ScoredBox {
        scene: 0,
        class: "box".into(),
        pose: Pose9DoF::from_translation(Vec3::new(x, 0.0, 0.0)),
        score,
    }
}

#[test]
fn map_examples() {
    let gts = vec![gt_box(0.0), gt_box(3.0)];
    let exact = vec![pred_box(0.0, 0.9), pred_box(3.0, 0.8)];
    assert!((map3d(&exact, &gts, 0.5).map - 1.0).abs() < 1e-12);
    assert_eq!(map3d(&[], &gts, 0.5).map, 0.0);

    // TP, FP, TP in score order. Hand PR points: (0.5, 1), (0.5, 1/2), (1, 2/3);
    // envelope gives 0.5·1 + 0.5·2/3.
    let preds = vec![pred_box(0.0, 0.9), pred_box(10.0, 0.8), pred_box(3.0, 0.7)];
    let r = map3d(&preds, &gts, 0.5);
    assert!((r.map - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    assert!((r.map - 0.8333).abs() < 1e-4);
    let hits: Vec<bool> = r.matches.iter().map(|m| m.ground_truth.is_some()).collect();
    assert_eq!(hits, vec![true, false, true]);

    // A duplicate of a claimed box is a false positive.
    let dup = vec![pred_box(0.0, 0.9), pred_box(0.0, 0.8)];
    let r = map3d(&dup, &[gt_box(0.0)], 0.5);
    assert_eq!(r.matches[1].ground_truth, None);
    assert!((r.map - 1.0).abs() < 1e-12);
}

#[test]
fn average_precision_matches_a_direct_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let hits: Vec<bool> = (0..12).map(|_| rng.random_bool(0.5)).collect();
        let n_gt = hits.iter().filter(|&&h| h).count() + rng.random_range(0..3);
        // Integrate max precision at recall ≥ r over a fine recall grid.
        let points: Vec<(f64, f64)> = hits
            .iter()
            .scan(0usize, |tp, &h| {
                *tp += h as usize;
                Some(*tp)
            })
            .enumerate()
            .map(|(k, tp)| (tp as f64 / n_gt.max(1) as f64, tp as f64 / (k + 1) as f64))
            .collect();
        let steps = 12_000 * n_gt.max(1);
        let mut oracle = 0.0;
        for s in 0..steps {
            let r = (s as f64 + 0.5) / steps as f64;
            let p = points.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max);
            oracle += p / steps as f64;
        }
        assert!((average_precision(&hits, n_gt) - oracle).abs() < 1e-9);
    }
}

#[test]
fn coincident_unit_cubes_collide_once() {
    let cube = unit_cube();
    let r = mesh_overlaps(&[cube.clone(), cube], 64, 1).unwrap();
    assert_eq!(r.collisions, 1);
    assert!((r.miv - 1.0).abs() < 0.05, "{}", r.miv);
}

#[test]
fn partial_overlap_matches_and_count() {
    let a = box_mesh(&Vec3::new(0.0, 0.0, 0.0), &Vec3::new(1.0, 1.0, 1.0));
    let b = box_mesh(&Vec3::new(0.63, 0.2, 0.1), &Vec3::new(1.5, 0.9, 1.3));
    let r = mesh_overlaps(&[a.clone(), b.clone()], 64, 1).unwrap();
    let spec = scene_grid(union_bounds([a.bounds(), b.bounds()]).unwrap(), 64).unwrap();
    let mut count = 0;
    for v in 0..spec.len() {
        let c = spec.center(spec.unflatten(v));
        let inside = |lo: Vec3, hi: Vec3| (0..3).all(|k| c[k] >= lo[k] && c[k] <= hi[k]);
        count += (inside(Vec3::zeros(), Vec3::repeat(1.0)) && inside(Vec3::new(0.63, 0.2, 0.1), Vec3::new(1.5, 0.9, 1.3))) as usize;
    }
    assert_eq!(r.overlaps[0].voxels, count);
    assert_eq!(r.miv, count as f64 * spec.voxel_volume());
    assert_eq!(r.collisions, 1);
}

#[test]
fn generated_scenes_are_collision_free() {
    for seed in 0..4 {
        let s = generate_scene(db(), 3, seed, &GenConfig::default()).unwrap();
        let r = miv_and_collisions(&s, db(), 64, 1).unwrap();
        assert_eq!((r.miv, r.collisions), (0.0, 0));
        assert!(r.overlaps.is_empty());
    }
}
