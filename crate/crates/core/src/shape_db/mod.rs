//! Exemplar shape database: per-class k-means++ clustering of flattened SDFs,
//! nearest-exemplar relabeling, and hard/soft selection targets.

pub mod kmeans;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::io::{read_obj, read_points, read_sdf, write_obj, write_points, write_sdf};
use crate::voxel::{clamp_interior, mesh_to_sdf, sample_surface_points, PointCloud, SdfGrid, TriMesh};

pub use kmeans::{kmeans, KMeansResult};

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_K_PER_CLASS: usize = 50;
pub const DEFAULT_SDF_RESOLUTION: usize = 32;
pub const DEFAULT_POINTS_PER_SHAPE: usize = 1024;
pub const DEFAULT_MAX_LLOYD_ITERS: usize = 100;

/// One input shape for database construction, already canonicalized.
#[derive(Debug, Clone)]
pub struct ShapeSource {
    pub class: String,
    pub name: String,
    pub mesh: TriMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEntry {
    pub class_id: usize,
    pub exemplar_index: usize,
    /// Name of the source shape this exemplar was taken from.
    pub source: String,
    pub sdf: SdfGrid,
    pub points: PointCloud,
    pub mesh: TriMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDatabase {
    pub classes: Vec<String>,
    pub k_per_class: usize,
    pub resolution: usize,
    /// Divisor applied to flattened SDF distances before soft labeling.
    pub normalization: f64,
    pub entries: Vec<ShapeEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbConfig {
    pub resolution: usize,
    pub points_per_shape: usize,
    pub max_iters: usize,
    /// `None` selects `√(voxel count)`, i.e. RMS distances.
    pub normalization: Option<f64>,
}

impl Default for DbConfig {
    fn default() -> Self {
        DbConfig {
            resolution: DEFAULT_SDF_RESOLUTION,
            points_per_shape: DEFAULT_POINTS_PER_SHAPE,
            max_iters: DEFAULT_MAX_LLOYD_ITERS,
            normalization: None,
        }
    }
}

/// Result of clustering one class, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct ClassClustering {
    pub class: String,
    /// Indices into the class's shapes, one per exemplar, in exemplar order.
    pub exemplar_members: Vec<usize>,
    pub result: KMeansResult,
}

/// Soft selection target, one value in `[0, 1]` per exemplar.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelVector(pub Vec<f64>);

fn flatten(g: &SdfGrid) -> Vec<f64> {
    g.values().to_vec()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    kmeans::squared_distance(a, b).sqrt()
}

/// Builds the database and also returns each class's clustering.
pub fn build_database_with_diagnostics(
    shapes: &[ShapeSource],
    k_per_class: usize,
    seed: u64,
    cfg: &DbConfig,
) -> Result<(ShapeDatabase, Vec<ClassClustering>)> {
    if k_per_class == 0 {
        return Err(Error::InvalidArgument("k_per_class must be positive".into()));
    }
    let mut classes: Vec<String> = shapes.iter().map(|s| s.class.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::InvalidArgument("no input shapes".into()));
    }
    for class in &classes {
        let available = shapes.iter().filter(|s| &s.class == class).count();
        if available < k_per_class {
            return Err(Error::InsufficientShapes {
                class: class.clone(),
                available,
                required: k_per_class,
            });
        }
    }
    let sdfs: Vec<SdfGrid> = shapes
        .par_iter()
        .map(|s| mesh_to_sdf(&s.mesh, cfg.resolution).map(|g| g.quantized()))
        .collect::<Result<_>>()?;

    let clusterings: Vec<ClassClustering> = classes
        .par_iter()
        .enumerate()
        .map(|(class_id, class)| {
            let members: Vec<usize> = (0..shapes.len()).filter(|&i| &shapes[i].class == class).collect();
            let data: Vec<Vec<f64>> = members.iter().map(|&i| flatten(&sdfs[i])).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class_id as u64);
            let result = kmeans(&data, k_per_class, cfg.max_iters, &mut rng);
            let mut exemplar_members: Vec<usize> = (0..k_per_class)
                .map(|c| {
                    result
                        .members(c)
                        .min_by(|&a, &b| {
                            let da = kmeans::squared_distance(&data[a], &result.centroids[c]);
                            let db = kmeans::squared_distance(&data[b], &result.centroids[c]);
                            da.total_cmp(&db).then(a.cmp(&b))
                        })
                        .expect("clusters are non-empty")
                })
                .collect();
            exemplar_members.sort_unstable();
            ClassClustering {
                class: class.clone(),
                exemplar_members,
                result,
            }
        })
        .collect();

    let mut picks = Vec::new();
    for (class_id, cl) in clusterings.iter().enumerate() {
        let members: Vec<usize> = (0..shapes.len()).filter(|&i| shapes[i].class == cl.class).collect();
        for &m in &cl.exemplar_members {
            picks.push((class_id, members[m]));
        }
    }
    let entries: Vec<ShapeEntry> = picks
        .par_iter()
        .enumerate()
        .map(|(k, &(class_id, shape))| {
            let src = &shapes[shape];
            let points = sample_surface_points(&src.mesh, cfg.points_per_shape, seed.wrapping_add(k as u64))?
                .quantized();
            Ok(ShapeEntry {
                class_id,
                exemplar_index: k,
                source: src.name.clone(),
                sdf: sdfs[shape].clone(),
                points,
                mesh: src.mesh.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let voxels = sdfs[0].values().len() as f64;
    let db = ShapeDatabase {
        classes,
        k_per_class,
        resolution: cfg.resolution,
        normalization: cfg.normalization.unwrap_or(voxels.sqrt()),
        entries,
    };
    Ok((db, clusterings))
}

/// Clusters each class's SDFs with k-means++ and keeps, per cluster, the
/// member shape closest to the centroid. Deterministic for a fixed seed.
pub fn build_database(
    shapes: &[ShapeSource],
    k_per_class: usize,
    seed: u64,
    cfg: &DbConfig,
) -> Result<ShapeDatabase> {
    build_database_with_diagnostics(shapes, k_per_class, seed, cfg).map(|(db, _)| db)
}

impl ShapeDatabase {
    /// Total number of exemplars `K`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_id(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn class_name(&self, class_id: usize) -> Result<&str> {
        self.classes
            .get(class_id)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownClass(class_id.to_string()))
    }

    pub fn entry(&self, exemplar: usize) -> Result<&ShapeEntry> {
        self.entries.get(exemplar).ok_or(Error::UnknownExemplar(exemplar))
    }

    pub fn class_entries(&self, class_id: usize) -> impl Iterator<Item = &ShapeEntry> {
        self.entries.iter().filter(move |e| e.class_id == class_id)
    }

    /// Interior-depth fields `max(−φ, 0)` of every exemplar, in index order.
    pub fn clamped_fields(&self) -> Vec<Arc<SdfGrid>> {
        self.entries.iter().map(|e| Arc::new(clamp_interior(&e.sdf))).collect()
    }

    fn check_resolution(&self, phi: &SdfGrid) -> Result<()> {
        let expected = self.entries.first().map(|e| e.sdf.values().len()).unwrap_or(0);
        if phi.values().len() != expected {
            return Err(Error::MismatchedLengths(phi.values().len(), expected));
        }
        Ok(())
    }

    /// Nearest exemplar of `class_id` in L2 over the flattened SDF; ties go
    /// to the lowest index.
    pub fn assign_exemplar(&self, phi: &SdfGrid, class_id: usize) -> Result<usize> {
        if class_id >= self.classes.len() {
            return Err(Error::UnknownClass(class_id.to_string()));
        }
        self.check_resolution(phi)?;
        let mut best: Option<(usize, f64)> = None;
        for e in self.class_entries(class_id) {
            let d = kmeans::squared_distance(phi.values(), e.sdf.values());
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((e.exemplar_index, d));
            }
        }
        best.map(|(k, _)| k).ok_or_else(|| Error::UnknownClass(class_id.to_string()))
    }

    /// One-hot `K`-vector at the nearest exemplar.
    pub fn hard_label(&self, phi: &SdfGrid, class_id: usize) -> Result<Vec<f64>> {
        let k = self.assign_exemplar(phi, class_id)?;
        let mut z = vec![0.0; self.len()];
        z[k] = 1.0;
        Ok(z)
    }

    /// Normalized distance `‖φ − φᵏ‖₂ / normalization` to every exemplar.
    pub fn normalized_distances(&self, phi: &SdfGrid) -> Result<Vec<f64>> {
        self.check_resolution(phi)?;
        Ok(self
            .entries
            .iter()
            .map(|e| l2(phi.values(), e.sdf.values()) / self.normalization)
            .collect())
    }

    /// `max(1 − ‖φ − φᵏ‖₂ / normalization, 0)` for every exemplar.
    pub fn soft_label(&self, phi: &SdfGrid) -> Result<SoftLabelVector> {
        Ok(SoftLabelVector(
            self.normalized_distances(phi)?
                .into_iter()
                .map(|d| (1.0 - d).max(0.0))
                .collect(),
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    k_per_class: usize,
    classes: Vec<String>,
    normalization: f64,
    resolution: usize,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    index: usize,
    class: String,
    source: String,
    sdf: String,
    points: String,
    mesh: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl ShapeDatabase {
    /// Writes `manifest.json` plus per-entry `.sdfg`, `.pts` and `.obj` files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let stem = format!("exemplar_{:04}", e.exemplar_index);
            let (sdf, points, mesh) = (
                format!("{stem}.sdfg"),
                format!("{stem}.pts"),
                format!("{stem}.obj"),
            );
            write_sdf(&e.sdf, &dir.join(&sdf))?;
            write_points(&e.points, &dir.join(&points))?;
            write_obj(&e.mesh, &dir.join(&mesh))?;
            entries.push(ManifestEntry {
                index: e.exemplar_index,
                class: self.classes[e.class_id].clone(),
                source: e.source.clone(),
                sdf,
                points,
                mesh,
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            k_per_class: self.k_per_class,
            classes: self.classes.clone(),
            normalization: self.normalization,
            resolution: self.resolution,
            entries,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = crate::error::parse_json(&text, &path)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(
                &path,
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for (k, me) in manifest.entries.iter().enumerate() {
            if me.index != k {
                return Err(Error::format(&path, format!("entry {k} has index {}", me.index)));
            }
            let class_id = manifest
                .classes
                .iter()
                .position(|c| c == &me.class)
                .ok_or_else(|| Error::format(&path, format!("entry {k}: unknown class {}", me.class)))?;
            entries.push(ShapeEntry {
                class_id,
                exemplar_index: k,
                source: me.source.clone(),
                sdf: read_sdf(&dir.join(&me.sdf))?,
                points: read_points(&dir.join(&me.points))?,
                mesh: read_obj(&dir.join(&me.mesh))?,
            });
        }
        for (c, name) in manifest.classes.iter().enumerate() {
            let n = entries.iter().filter(|e| e.class_id == c).count();
            if n != manifest.k_per_class {
                return Err(Error::format(
                    &path,
                    format!("class {name} has {n} entries, expected {}", manifest.k_per_class),
                ));
            }
        }
        Ok(ShapeDatabase {
            classes: manifest.classes,
            k_per_class: manifest.k_per_class,
            resolution: manifest.resolution,
            normalization: manifest.normalization,
            entries,
        })
    }
}
