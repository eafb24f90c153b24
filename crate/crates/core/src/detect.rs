//! Center-point heatmaps: Gaussian target splatting, the penalty-reduced
//! focal loss and 3×3 peak extraction.

use std::path::Path;

use crate::error::{Error, Result};
use crate::voxel::io::{SdfgContainer, SDFG_VERSION_HEATMAP};

/// Output stride of the heatmaps relative to the input image.
pub const DOWNSAMPLE: usize = 4;
pub const FOCAL_ALPHA: f64 = 2.0;
pub const FOCAL_BETA: f64 = 4.0;
/// Predictions are clamped to `[ε, 1 − ε]` before taking logs.
pub const PRED_CLAMP: f64 = 1e-7;
pub const DEFAULT_PEAK_THRESHOLD: f64 = 1e-2;

/// Per-class score maps of size `width × height × channels`, values in `[0, 1]`.
///
/// Storage is channel-major, then row, then column: `c·H·W + y·W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * channels {
            return Err(Error::MismatchedLengths(values.len(), width * height * channels));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "heatmap value {} at index {i} is outside [0, 1]",
                values[i]
            )));
        }
        Ok(Heatmap {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Heatmap {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[self.index(x, y, c)]
    }

    fn same_shape(&self, o: &Heatmap) -> Result<()> {
        if (self.width, self.height, self.channels) != (o.width, o.height, o.channels) {
            return Err(Error::InvalidArgument(format!(
                "heatmap shapes differ: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, o.width, o.height, o.channels
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> SdfgContainer {
        SdfgContainer {
            version: SDFG_VERSION_HEATMAP,
            dims: [self.width as u32, self.height as u32, self.channels as u32],
            origin: [0.0; 3],
            spacing: DOWNSAMPLE as f64,
            values: self.values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_container(c: SdfgContainer, path: &Path) -> Result<Self> {
        if c.version != SDFG_VERSION_HEATMAP {
            return Err(Error::format(path, "not a heatmap (version 2) container"));
        }
        let [w, h, ch] = c.dims.map(|d| d as usize);
        Heatmap::new(w, h, ch, c.values.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Heatmap::from_container(SdfgContainer::read(path)?, path)
    }
}

/// A ground-truth center to splat: heatmap pixel coordinates, class and spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub x: f64,
    pub y: f64,
    pub class: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub class: usize,
    pub score: f64,
}

/// Gaussian spread for an object whose 2D box is `w × h` input pixels.
pub fn gaussian_sigma(w: f64, h: f64) -> f64 {
    gaussian_sigma_with(w, h, DOWNSAMPLE as f64)
}

/// `max(1, min(w, h) / (6·stride))`.
pub fn gaussian_sigma_with(w: f64, h: f64, stride: f64) -> f64 {
    (w.min(h) / (6.0 * stride)).max(1.0)
}

/// Target heatmap: per channel, the element-wise maximum of the Gaussians
/// of that class's centers.
pub fn make_targets(centers: &[Center], width: usize, height: usize, channels: usize) -> Result<Heatmap> {
    let mut out = Heatmap::zeros(width, height, channels);
    for c in centers {
        let inside = c.x >= 0.0 && c.y >= 0.0 && c.x <= (width as f64 - 1.0) && c.y <= (height as f64 - 1.0);
        if !inside || c.class >= channels {
            return Err(Error::InvalidArgument(format!(
                "center ({}, {}) of class {} lies outside the {width}x{height}x{channels} heatmap",
                c.x, c.y, c.class
            )));
        }
        if !(c.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", c.sigma)));
        }
        let denom = 2.0 * c.sigma * c.sigma;
        for y in 0..height {
            let dy = y as f64 - c.y;
            for x in 0..width {
                let dx = x as f64 - c.x;
                let g = (-(dx * dx + dy * dy) / denom).exp();
                let i = out.index(x, y, c.class);
                out.values[i] = out.values[i].max(g);
            }
        }
    }
    Ok(out)
}

/// Focal loss value together with its gradient with respect to every
/// prediction (zero where the clamp is active).
#[derive(Debug, Clone, PartialEq)]
pub struct FocalLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn focal_loss(pred: &Heatmap, target: &Heatmap, n_objects: usize) -> Result<f64> {
    focal_loss_with(pred, target, n_objects, FOCAL_ALPHA, FOCAL_BETA).map(|f| f.value)
}

/// `−1/N Σ` of `(1−p)^α ln p` where the target is exactly 1 and
/// `(1−y)^β p^α ln(1−p)` elsewhere.
pub fn focal_loss_with(
    pred: &Heatmap,
    target: &Heatmap,
    n_objects: usize,
    alpha: f64,
    beta: f64,
) -> Result<FocalLoss> {
    pred.same_shape(target)?;
    if n_objects == 0 {
        return Err(Error::InvalidArgument("focal loss needs at least one object".into()));
    }
    let n = n_objects as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.values.len()];
    for (i, (&raw, &y)) in pred.values.iter().zip(&target.values).enumerate() {
        let p = raw.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
        let active = p == raw;
        let (term, d) = if y == 1.0 {
            let q = 1.0 - p;
            (
                q.powf(alpha) * p.ln(),
                -alpha * q.powf(alpha - 1.0) * p.ln() + q.powf(alpha) / p,
            )
        } else {
            let w = (1.0 - y).powf(beta);
            let l = (1.0 - p).ln();
            (
                w * p.powf(alpha) * l,
                w * (alpha * p.powf(alpha - 1.0) * l - p.powf(alpha) / (1.0 - p)),
            )
        };
        value -= term;
        if active {
            grad[i] = -d / n;
        }
    }
    Ok(FocalLoss { value: value / n, grad })
}

/// Local maxima of every channel at or above `tau`.
///
/// A pixel survives when it is `≥` every pixel of its 3×3 neighborhood
/// (clipped at the border), and among equal neighbors only the one with the
/// smallest `(y, x)` survives. Detections come out ordered by class, then
/// `y`, then `x`.
pub fn extract_peaks(pred: &Heatmap, tau: f64) -> Vec<Detection> {
    let (w, h) = (pred.width, pred.height);
    let mut out = Vec::new();
    for c in 0..pred.channels {
        for y in 0..h {
            for x in 0..w {
                let v = pred.get(x, y, c);
                if v < tau {
                    continue;
                }
                let mut is_peak = true;
                'scan: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if (nx, ny) == (x, y) {
                            continue;
                        }
                        let o = pred.get(nx, ny, c);
                        if o > v || (o == v && (ny, nx) < (y, x)) {
                            is_peak = false;
                            break 'scan;
                        }
                    }
                }
                if is_peak {
                    out.push(Detection { x, y, class: c, score: v });
                }
            }
        }
    }
    out
}
