use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use shapesel::collision::ExemplarCache;
use shapesel::eval::{
    map3d, miv_and_collisions, oracle_scene, relative_iou_across, GtBox, IoUReport, MapReport, MivReport, ScoredBox,
};
use shapesel::geom::{Pose9DoF, Rotation, Vec3};
use shapesel::optim::{fit_poses, resolve_collisions, world_targets, Freeze, OptimConfig, OptimResult};
use shapesel::scene::{generate_scene, perturb_pose, scene_grid, Scene, ROTATION_TOLERANCE};
use shapesel::shape_db::{build_database, DbConfig, ShapeDatabase, ShapeSource};
use shapesel::toy::toy_shapes;
use shapesel::voxel::io::{read_obj, write_obj, write_occupancy, write_ply, write_points};
use shapesel::voxel::{canonicalize_mesh, OccupancyGrid, PointCloud, TriMesh};

use crate::config::{Config, OptimSection};
use crate::{BuildDbArgs, Cli, Command, EvalArgs, ExportFormat, FitArgs, Metric, OptimFlags, ResolveArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::ToyMeshes { out, per_class } => toy_meshes(&out, per_class),
        Command::BuildDb(args) => build_db(&cfg, args),
        Command::GenScenes {
            db,
            out,
            count,
            objects,
            seed,
        } => gen_scenes(&cfg, &db, &out, count, objects, seed),
        Command::Labels { db, scene, gt_db, out } => labels(&db, gt_db.as_deref(), &scene, &out),
        Command::Oracle { db, gt_db, gt, out } => oracle(&db, &gt_db, &gt, &out),
        Command::FitPose(args) => fit_pose(&cfg, args),
        Command::Resolve(args) => resolve(&cfg, args),
        Command::Evaluate(args) => evaluate(&cfg, args),
        Command::Export {
            db,
            scene,
            format,
            out,
            res,
        } => export(&db, &scene, format, &out, res),
    }
}

fn load_db(dir: &Path) -> Result<ShapeDatabase> {
    ShapeDatabase::load(dir).with_context(|| format!("loading database {}", dir.display()))
}

fn load_scene(path: &Path, db: &ShapeDatabase) -> Result<Scene> {
    let scene = Scene::read(path)?;
    scene.validate(db).with_context(|| format!("{}: scene does not match the database", path.display()))?;
    Ok(scene)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("{}: cannot write", path.display()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .with_context(|| format!("{}: cannot list directory", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("{}: cannot list directory", dir.display()))?;
    out.sort();
    Ok(out)
}

fn has_extension(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn toy_meshes(out: &Path, per_class: usize) -> Result<()> {
    if per_class == 0 {
        return Err(usage("--per-class must be positive"));
    }
    for shape in toy_shapes(per_class) {
        let path = out.join(&shape.class).join(format!("{}.obj", shape.name));
        create_parent(&path)?;
        write_obj(&shape.mesh, &path)?;
    }
    println!("wrote {} meshes to {}", 2 * per_class, out.display());
    Ok(())
}

fn read_pre_rotations(path: &Path) -> Result<BTreeMap<String, Rotation>> {
    let text = fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))?;
    let raw: BTreeMap<String, [f64; 9]> =
        serde_json::from_str(&text).with_context(|| format!("{}: expected an object of 9-element arrays", path.display()))?;
    raw.into_iter()
        .map(|(key, m)| {
            let r = Rotation::try_from_matrix(shapesel::geom::RawMatrix::from_row_slice(&m).0, ROTATION_TOLERANCE)
                .with_context(|| format!("{}: field {key:?} is not a rotation", path.display()))?;
            Ok((key, r))
        })
        .collect()
}

fn build_db(cfg: &Config, args: BuildDbArgs) -> Result<()> {
    let k = args.k.unwrap_or(cfg.db.k_per_class);
    let db_cfg = DbConfig {
        resolution: args.res.unwrap_or(cfg.db.resolution),
        points_per_shape: args.points.unwrap_or(cfg.db.points_per_shape),
        max_iters: args.max_iters.unwrap_or(cfg.db.max_iters),
        normalization: cfg.db.normalization,
    };
    if k == 0 || db_cfg.resolution < 5 || db_cfg.points_per_shape == 0 || db_cfg.max_iters == 0 {
        return Err(usage("--k, --points and --max-iters must be positive and --res at least 5"));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let mut rotations = match &args.pre_rotation {
        Some(p) => read_pre_rotations(p)?,
        None => BTreeMap::new(),
    };
    let mut shapes = Vec::new();
    for class_dir in sorted_entries(&args.meshes)?.into_iter().filter(|p| p.is_dir()) {
        let class = class_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for file in sorted_entries(&class_dir)?.into_iter().filter(|p| has_extension(p, "obj")) {
            let name = file_stem(&file);
            let mut mesh = read_obj(&file)?;
            if let Some(r) = rotations.remove(&format!("{class}/{name}")) {
                mesh = mesh.transformed(&Pose9DoF::new(r, Vec3::zeros(), Vec3::repeat(1.0))?);
            }
            let mesh = canonicalize_mesh(&mesh).with_context(|| format!("{}: cannot canonicalize", file.display()))?;
            shapes.push(ShapeSource {
                class: class.clone(),
                name,
                mesh,
            });
        }
    }
    if shapes.is_empty() {
        bail!("{}: no class subdirectories with .obj meshes", args.meshes.display());
    }
    if let (Some(key), Some(p)) = (rotations.keys().next(), &args.pre_rotation) {
        bail!("{}: field {key:?} names no input mesh", p.display());
    }
    let db = build_database(&shapes, k, seed, &db_cfg)?;
    db.save(&args.out)?;
    println!(
        "built {} exemplars over {} classes from {} meshes into {}",
        db.len(),
        db.classes.len(),
        shapes.len(),
        args.out.display()
    );
    Ok(())
}

fn gen_scenes(cfg: &Config, db: &Path, out: &Path, count: usize, objects: Option<usize>, seed: Option<u64>) -> Result<()> {
    let n = objects.unwrap_or(cfg.gen.objects);
    if n == 0 {
        return Err(usage("--objects must be positive"));
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let gen = cfg.gen.gen_config();
    let db = load_db(db)?;
    fs::create_dir_all(out).with_context(|| format!("{}: cannot create directory", out.display()))?;
    for i in 0..count {
        let scene = generate_scene(&db, n, seed.wrapping_add(i as u64), &gen)?;
        scene.write(&out.join(format!("scene_{i:04}.json")))?;
    }
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct ObjectLabels {
    class: String,
    exemplar: usize,
    assigned: usize,
    hard: Vec<f64>,
    soft: Vec<f64>,
}

fn labels(db: &Path, gt_db: Option<&Path>, scene: &Path, out: &Path) -> Result<()> {
    let db = load_db(db)?;
    let gt_db = gt_db.map(load_db).transpose()?;
    let source = gt_db.as_ref().unwrap_or(&db);
    let s = load_scene(scene, source)?;
    let mut objects = Vec::with_capacity(s.objects.len());
    for (i, o) in s.objects.iter().enumerate() {
        let ctx = || format!("{}: objects[{i}]", scene.display());
        let phi = &source.entry(o.exemplar)?.sdf;
        let class_id = db.class_id(&o.class).with_context(ctx)?;
        let hard = db.hard_label(phi, class_id).with_context(ctx)?;
        objects.push(ObjectLabels {
            class: o.class.clone(),
            exemplar: o.exemplar,
            assigned: hard.iter().position(|&v| v == 1.0).unwrap_or_default(),
            hard,
            soft: db.soft_label(phi).with_context(ctx)?.0,
        });
    }
    let doc = json!({ "classes": db.classes, "objects": objects });
    write_text(out, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    println!("wrote labels for {} objects to {}", objects.len(), out.display());
    Ok(())
}

fn oracle(db: &Path, gt_db: &Path, gt: &Path, out: &Path) -> Result<()> {
    let db = load_db(db)?;
    let gt_db = load_db(gt_db)?;
    let files = scene_files(gt)?;
    for (_, path) in &files {
        let s = load_scene(path, &gt_db)?;
        let o = oracle_scene(&s, &gt_db, &db).with_context(|| format!("{}: no oracle", path.display()))?;
        let dest = if gt.is_dir() { out.join(path.file_name().unwrap_or_default()) } else { out.to_path_buf() };
        create_parent(&dest)?;
        o.write(&dest)?;
    }
    println!("wrote {} oracle scenes to {}", files.len(), out.display());
    Ok(())
}

fn optim_config(base: OptimConfig, section: &OptimSection, flags: &OptimFlags, cfg: &Config) -> Result<OptimConfig> {
    let mut c = section.apply(base);
    c.iters = flags.iters.unwrap_or(c.iters);
    c.lr = flags.lr.unwrap_or(c.lr);
    c.warmup = flags.warmup.unwrap_or(c.warmup);
    c.seed = flags.seed.or(cfg.seed).unwrap_or(c.seed);
    if let Some(list) = &flags.freeze {
        c.freeze = Freeze::parse(list).map_err(|e| usage(format!("--freeze: {e}")))?;
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn write_result(r: &OptimResult, out: &Path, trace: Option<&Path>) -> Result<()> {
    create_parent(out)?;
    r.scene.write(out)?;
    if let Some(t) = trace {
        write_text(t, &r.trace.to_csv())?;
    }
    let totals = r.trace.totals();
    let first = totals.first().copied().unwrap_or(0.0);
    let best = totals.get(r.best_iteration).copied().unwrap_or(first);
    println!(
        "objective {first:.6e} -> {best:.6e} (best at iteration {} of {}); wrote {}",
        r.best_iteration,
        totals.len().saturating_sub(1),
        out.display()
    );
    Ok(())
}

fn fit_pose(cfg: &Config, args: FitArgs) -> Result<()> {
    let optim = optim_config(OptimConfig::default(), &cfg.fit, &args.optim, cfg)?;
    for (flag, v) in [("--rot-deg", args.rot_deg), ("--trans", args.trans), ("--scale-frac", args.scale_frac)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(usage(format!("{flag} must be non-negative")));
        }
    }
    if args.scale_frac >= 1.0 {
        return Err(usage("--scale-frac must be below 1"));
    }
    let db = load_db(&args.db)?;
    let gt = load_scene(&args.gt, &db)?;
    let init = match &args.init {
        Some(p) => {
            let s = load_scene(p, &db)?;
            if s.objects.len() != gt.objects.len() {
                bail!(
                    "{}: objects has {} entries, ground truth has {}",
                    p.display(),
                    s.objects.len(),
                    gt.objects.len()
                );
            }
            s
        }
        None => {
            let mut s = gt.clone();
            for (k, o) in s.objects.iter_mut().enumerate() {
                o.pose = perturb_pose(&o.pose, args.rot_deg, args.trans, args.scale_frac, optim.seed.wrapping_add(k as u64))?;
            }
            s
        }
    };
    let cache = ExemplarCache::new(&db);
    let targets = world_targets(&gt, &cache)?;
    let r = fit_poses(&init, &cache, &targets, &optim)?;
    write_result(&r, &args.out, args.trace.as_deref())
}

fn resolve(cfg: &Config, args: ResolveArgs) -> Result<()> {
    let optim = optim_config(OptimConfig::resolve(), &cfg.resolve.optim, &args.optim, cfg)?;
    let anchor = args.anchor.unwrap_or(cfg.resolve.anchor_weight);
    if !(anchor >= 0.0 && anchor.is_finite()) {
        return Err(usage("--anchor must be non-negative"));
    }
    let db = load_db(&args.db)?;
    let scene = load_scene(&args.scene, &db)?;
    let cache = ExemplarCache::new(&db);
    let r = resolve_collisions(&scene, &cache, &optim, anchor)?;
    write_result(&r, &args.out, args.trace.as_deref())
}

/// Scene files under `path` (or `path` itself), with their stems.
fn scene_files(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        Ok(sorted_entries(path)?
            .into_iter()
            .filter(|p| has_extension(p, "json") && !p.to_string_lossy().ends_with(".scores.json"))
            .map(|p| (file_stem(&p), p))
            .collect())
    } else {
        Ok(vec![(file_stem(path), path.to_path_buf())])
    }
}

struct Pair {
    name: String,
    pred: Scene,
    pred_path: PathBuf,
    gt: Option<Scene>,
}

fn scene_pairs(args: &EvalArgs, db: &ShapeDatabase, gt_db: &ShapeDatabase) -> Result<Vec<Pair>> {
    if let Some(gt) = &args.gt {
        if args.pred.is_dir() != gt.is_dir() {
            return Err(usage("--pred and --gt must both be files or both be directories"));
        }
    }
    let preds = scene_files(&args.pred)?;
    if preds.is_empty() {
        bail!("{}: no scene files", args.pred.display());
    }
    preds
        .into_iter()
        .map(|(name, pred_path)| {
            let gt = match &args.gt {
                Some(g) if g.is_dir() => {
                    let p = g.join(pred_path.file_name().unwrap_or_default());
                    if !p.is_file() {
                        bail!("{}: missing ground truth for {}", p.display(), pred_path.display());
                    }
                    Some(load_scene(&p, gt_db)?)
                }
                Some(g) => Some(load_scene(g, gt_db)?),
                None => None,
            };
            Ok(Pair {
                name,
                pred: load_scene(&pred_path, db)?,
                pred_path,
                gt,
            })
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn render(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    for r in rows {
        line(&mut out, r);
    }
    out
}

fn evaluate(cfg: &Config, args: EvalArgs) -> Result<()> {
    let db = load_db(&args.db)?;
    let gt_db = args.gt_db.as_deref().map(load_db).transpose()?;
    let gt_db_ref = gt_db.as_ref().unwrap_or(&db);
    if args.metric != Metric::Miv && args.gt.is_none() {
        return Err(usage("--gt is required for iou and map"));
    }
    if args.res == Some(0) {
        return Err(usage("--res must be positive"));
    }
    let pairs = scene_pairs(&args, &db, gt_db_ref)?;
    let (doc, table) = match args.metric {
        Metric::Iou => eval_iou(&pairs, &db, gt_db_ref, args.res.unwrap_or(cfg.eval.iou_resolution))?,
        Metric::Map => {
            let thresholds = if args.thresh.is_empty() { cfg.eval.thresholds.clone() } else { args.thresh.clone() };
            if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(usage("--thresh values must lie in [0, 1]"));
            }
            eval_map(&pairs, &thresholds)?
        }
        Metric::Miv => eval_miv(&pairs, &db, args.res.unwrap_or(cfg.eval.miv_resolution), cfg.eval.epsilon_voxels)?,
    };
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &args.json {
        Some(p) => {
            write_text(p, &text)?;
            print!("{table}");
        }
        None => {
            eprint!("{table}");
            print!("{text}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct NamedIoU<'a> {
    scene: &'a str,
    #[serde(flatten)]
    report: IoUReport,
}

fn eval_iou(pairs: &[Pair], db: &ShapeDatabase, gt_db: &ShapeDatabase, res: usize) -> Result<(serde_json::Value, String)> {
    let mut reports = Vec::with_capacity(pairs.len());
    for p in pairs {
        let gt = p.gt.as_ref().expect("ground truth required");
        let oracle = oracle_scene(gt, gt_db, db)?;
        let r = relative_iou_across(&p.pred, &oracle, db, gt, gt_db, res)
            .with_context(|| format!("{}: cannot score", p.pred_path.display()))?;
        reports.push(NamedIoU { scene: &p.name, report: r });
    }
    let mut header = vec!["scene".to_string()];
    header.extend(db.classes.iter().cloned());
    header.extend(["mean".into(), "global".into(), "rel. mean".into(), "rel. global".into()]);
    let row_of = |name: &str, per_class: Vec<Option<f64>>, m: Option<f64>, g: Option<f64>, rm: Option<f64>, rg: Option<f64>| {
        let mut row = vec![name.to_string()];
        row.extend(per_class.into_iter().map(cell));
        row.extend([cell(m), cell(g), cell(rm), cell(rg)]);
        row
    };
    let rel = |r: &IoUReport| r.relative.clone().unwrap_or_else(|| unreachable!("relative IoU always set"));
    let mut rows: Vec<Vec<String>> = reports
        .iter()
        .map(|n| {
            let r = &n.report;
            let rl = rel(r);
            row_of(
                n.scene,
                r.per_class.iter().map(|c| c.iou).collect(),
                Some(r.mean_iou),
                Some(r.global_iou),
                rl.mean_iou,
                rl.global_iou,
            )
        })
        .collect();
    let class_means: Vec<Option<f64>> =
        (0..db.classes.len()).map(|c| mean(reports.iter().map(|n| n.report.per_class[c].iou))).collect();
    let summary = json!({
        "per_class": db.classes.iter().zip(&class_means).map(|(c, v)| json!({"class": c, "iou": v})).collect::<Vec<_>>(),
        "mean_iou": mean(reports.iter().map(|n| Some(n.report.mean_iou))),
        "global_iou": mean(reports.iter().map(|n| Some(n.report.global_iou))),
        "relative_mean_iou": mean(reports.iter().map(|n| rel(&n.report).mean_iou)),
        "relative_global_iou": mean(reports.iter().map(|n| rel(&n.report).global_iou)),
    });
    rows.push(row_of(
        "mean",
        class_means,
        summary["mean_iou"].as_f64(),
        summary["global_iou"].as_f64(),
        summary["relative_mean_iou"].as_f64(),
        summary["relative_global_iou"].as_f64(),
    ));
    let table = render(&header, &rows);
    let doc = json!({ "metric": "iou", "resolution": res, "scenes": reports, "summary": summary });
    Ok((doc, table))
}

fn read_scores(pred_path: &Path, n: usize) -> Result<Vec<f64>> {
    let sidecar = pred_path.with_extension("scores.json");
    if !sidecar.is_file() {
        return Ok(vec![1.0; n]);
    }
    let text = fs::read_to_string(&sidecar).with_context(|| format!("{}: cannot read", sidecar.display()))?;
    let scores: Vec<f64> =
        serde_json::from_str(&text).with_context(|| format!("{}: expected an array of scores", sidecar.display()))?;
    if scores.len() != n {
        bail!("{}: {} scores for {n} objects", sidecar.display(), scores.len());
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        bail!("{}: score [{i}] is not finite", sidecar.display());
    }
    Ok(scores)
}

fn eval_map(pairs: &[Pair], thresholds: &[f64]) -> Result<(serde_json::Value, String)> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let scores = read_scores(&p.pred_path, p.pred.objects.len())?;
        for (o, score) in p.pred.objects.iter().zip(scores) {
            preds.push(ScoredBox {
                scene: i,
                class: o.class.clone(),
                pose: o.pose,
                score,
            });
        }
        for o in &p.gt.as_ref().expect("ground truth required").objects {
            gts.push(GtBox {
                scene: i,
                class: o.class.clone(),
                pose: o.pose,
            });
        }
    }
    let reports: Vec<MapReport> = thresholds.iter().map(|&t| map3d(&preds, &gts, t)).collect();
    let mut header = vec!["class".to_string()];
    header.extend(thresholds.iter().map(|t| format!("AP@{t}")));
    let classes: Vec<&String> = reports.first().map(|r| r.per_class.iter().map(|(c, _)| c).collect()).unwrap_or_default();
    let mut rows: Vec<Vec<String>> = classes
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let mut row = vec![(*name).clone()];
            row.extend(reports.iter().map(|r| cell(Some(r.per_class[c].1))));
            row
        })
        .collect();
    let mut last = vec!["mAP".to_string()];
    last.extend(reports.iter().map(|r| cell(Some(r.map))));
    rows.push(last);
    let table = render(&header, &rows);
    let scenes: Vec<&str> = pairs.iter().map(|p| p.name.as_str()).collect();
    Ok((json!({ "metric": "map", "scenes": scenes, "reports": reports }), table))
}

#[derive(Serialize)]
struct NamedMiv<'a> {
    scene: &'a str,
    #[serde(flatten)]
    report: MivReport,
}

fn eval_miv(pairs: &[Pair], db: &ShapeDatabase, res: usize, eps: usize) -> Result<(serde_json::Value, String)> {
    let reports = pairs
        .iter()
        .map(|p| {
            Ok(NamedMiv {
                scene: &p.name,
                report: miv_and_collisions(&p.pred, db, res, eps)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plain: Vec<MivReport> = reports.iter().map(|n| n.report.clone()).collect();
    let (miv, collisions) = MivReport::pooled(&plain);
    let header: Vec<String> = ["scene", "collisions", "mIV"].map(String::from).to_vec();
    let mut rows: Vec<Vec<String>> = reports
        .iter()
        .map(|n| vec![n.scene.to_string(), n.report.collisions.to_string(), format!("{:.6}", n.report.miv)])
        .collect();
    rows.push(vec!["pooled".into(), collisions.to_string(), format!("{miv:.6}")]);
    let table = render(&header, &rows);
    let doc = json!({
        "metric": "miv",
        "resolution": res,
        "epsilon_voxels": eps,
        "scenes": reports,
        "summary": { "miv": miv, "collisions": collisions },
    });
    Ok((doc, table))
}

fn merged_mesh(scene: &Scene, db: &ShapeDatabase) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for m in scene.posed_meshes(db)? {
        let base = vertices.len();
        vertices.extend_from_slice(m.vertices());
        triangles.extend(m.triangles().iter().map(|t| t.map(|i| i + base)));
    }
    Ok(TriMesh::new(vertices, triangles)?)
}

fn export(db: &Path, scene: &Path, format: ExportFormat, out: &Path, res: usize) -> Result<()> {
    if res == 0 {
        return Err(usage("--res must be positive"));
    }
    let db = load_db(db)?;
    let s = load_scene(scene, &db)?;
    if s.objects.is_empty() {
        bail!("{}: objects is empty", scene.display());
    }
    create_parent(out)?;
    match format {
        ExportFormat::Obj => write_obj(&merged_mesh(&s, &db)?, out)?,
        ExportFormat::Ply => {
            let m = merged_mesh(&s, &db)?;
            write_ply(m.vertices(), m.triangles(), out)?;
        }
        ExportFormat::Points => {
            let mut points = Vec::new();
            for o in &s.objects {
                points.extend(db.entry(o.exemplar)?.points.transformed(&o.pose).points);
            }
            write_points(&PointCloud::new(points)?, out)?;
        }
        ExportFormat::Sdfg => {
            let bounds = s.bounds(&db)?.ok_or_else(|| anyhow!("{}: scene has no geometry", scene.display()))?;
            let spec = scene_grid(bounds, res)?;
            let mut all = OccupancyGrid::empty(spec);
            for g in s.rasterize(&db, &spec)? {
                all.union_with(&g);
            }
            write_occupancy(&all, out)?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
