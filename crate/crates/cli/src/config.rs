//! Optional JSON experiment configuration; command-line flags win.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;
use shapesel::eval::{DEFAULT_COLLISION_EPSILON_VOXELS, DEFAULT_IOU_RESOLUTION, DEFAULT_MIV_RESOLUTION};
use shapesel::losses::{LossWeights, RtNormalization};
use shapesel::optim::{Freeze, OptimConfig, DEFAULT_ANCHOR_WEIGHT};
use shapesel::scene::GenConfig;
use shapesel::shape_db::{DbConfig, DEFAULT_K_PER_CLASS};

use crate::UsageError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: Option<u64>,
    pub db: DbSection,
    pub gen: GenSection,
    pub fit: OptimSection,
    pub resolve: ResolveSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbSection {
    pub k_per_class: usize,
    pub resolution: usize,
    pub points_per_shape: usize,
    pub max_iters: usize,
    pub normalization: Option<f64>,
}

impl Default for DbSection {
    fn default() -> Self {
        let d = DbConfig::default();
        DbSection {
            k_per_class: DEFAULT_K_PER_CLASS,
            resolution: d.resolution,
            points_per_shape: d.points_per_shape,
            max_iters: d.max_iters,
            normalization: d.normalization,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub objects: usize,
    pub scale_range: Option<[f64; 2]>,
    pub xy_range: Option<[f64; 2]>,
    pub max_attempts: Option<usize>,
    pub check_resolution: Option<usize>,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            objects: 3,
            scale_range: None,
            xy_range: None,
            max_attempts: None,
            check_resolution: None,
        }
    }
}

impl GenSection {
    pub fn gen_config(&self) -> GenConfig {
        let d = GenConfig::default();
        GenConfig {
            scale_range: self.scale_range.unwrap_or(d.scale_range),
            xy_range: self.xy_range.unwrap_or(d.xy_range),
            max_attempts: self.max_attempts.unwrap_or(d.max_attempts),
            check_resolution: self.check_resolution.unwrap_or(d.check_resolution),
        }
    }
}

/// Overrides applied on top of a driver's defaults.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub lr: Option<f64>,
    pub iters: Option<usize>,
    pub warmup: Option<usize>,
    pub tol: Option<f64>,
    pub freeze: Option<Freeze>,
    pub weights: Option<LossWeights>,
    pub normalization: Option<RtNormalization>,
}

impl OptimSection {
    pub fn apply(&self, base: OptimConfig) -> OptimConfig {
        OptimConfig {
            lr: self.lr.unwrap_or(base.lr),
            iters: self.iters.unwrap_or(base.iters),
            warmup: self.warmup.unwrap_or(base.warmup),
            tol: self.tol.unwrap_or(base.tol),
            freeze: self.freeze.unwrap_or(base.freeze),
            weights: self.weights.unwrap_or(base.weights),
            normalization: self.normalization.unwrap_or(base.normalization),
            seed: base.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolveSection {
    pub anchor_weight: f64,
    pub optim: OptimSection,
}

impl Default for ResolveSection {
    fn default() -> Self {
        ResolveSection {
            anchor_weight: DEFAULT_ANCHOR_WEIGHT,
            optim: OptimSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_resolution: usize,
    pub miv_resolution: usize,
    pub epsilon_voxels: usize,
    pub thresholds: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            iou_resolution: DEFAULT_IOU_RESOLUTION,
            miv_resolution: DEFAULT_MIV_RESOLUTION,
            epsilon_voxels: DEFAULT_COLLISION_EPSILON_VOXELS,
            thresholds: vec![0.25, 0.5],
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
        let cfg: Config = serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text))
            .map_err(|e| UsageError(format!("{}: invalid config at {}: {}", path.display(), e.path(), e.inner())))?;
        cfg.validate()
            .map_err(|e| UsageError(format!("{}: invalid config: {e}", path.display())))?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.db.k_per_class == 0 {
            return Err("db.k_per_class must be positive".into());
        }
        if self.db.resolution < 5 || self.db.points_per_shape == 0 || self.db.max_iters == 0 {
            return Err("db.resolution must be ≥ 5, db.points_per_shape and db.max_iters positive".into());
        }
        if self.db.normalization.is_some_and(|n| !(n > 0.0 && n.is_finite())) {
            return Err("db.normalization must be positive".into());
        }
        if self.gen.objects == 0 {
            return Err("gen.objects must be positive".into());
        }
        self.gen.gen_config().validate().map_err(|e| format!("gen: {e}"))?;
        self.fit.apply(OptimConfig::default()).validate().map_err(|e| format!("fit: {e}"))?;
        self.resolve.optim.apply(OptimConfig::resolve()).validate().map_err(|e| format!("resolve: {e}"))?;
        if !(self.resolve.anchor_weight >= 0.0 && self.resolve.anchor_weight.is_finite()) {
            return Err("resolve.anchor_weight must be non-negative".into());
        }
        let e = &self.eval;
        if e.iou_resolution == 0 || e.miv_resolution == 0 {
            return Err("eval resolutions must be positive".into());
        }
        if e.thresholds.is_empty() || e.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err("eval.thresholds must be non-empty values in [0, 1]".into());
        }
        Ok(())
    }
}
