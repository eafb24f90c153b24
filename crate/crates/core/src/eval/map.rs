//! Detection mAP with greedy score-ordered matching and all-point
//! interpolated average precision.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::boxes::oriented_box_iou;
use crate::geom::Pose9DoF;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    /// Matching only pairs boxes of the same scene.
    pub scene: usize,
    pub class: String,
    pub pose: Pose9DoF,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub scene: usize,
    pub class: String,
    pub pose: Pose9DoF,
}

/// One prediction and the ground truth it claimed, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub prediction: usize,
    pub ground_truth: Option<usize>,
    pub iou: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapReport {
    pub threshold: f64,
    /// Average precision of every class with at least one ground truth.
    pub per_class: Vec<(String, f64)>,
    pub map: f64,
    pub matches: Vec<DetectionMatch>,
}

/// Area under the precision envelope of a ranked list of hits.
pub fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(hits.len());
    for (k, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in curve {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Per-class AP at `iou_threshold` and their mean over classes that have
/// ground truth. Predictions are taken in descending score order (input
/// order breaks ties); each claims the unmatched ground truth of its class
/// and scene with the highest IoU, if that IoU reaches the threshold.
pub fn map3d(preds: &[ScoredBox], gts: &[GtBox], iou_threshold: f64) -> MapReport {
    let classes: BTreeSet<&str> = gts.iter().map(|g| g.class.as_str()).collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut claimed = vec![false; gts.len()];
    let mut matches = Vec::with_capacity(preds.len());
    for &p in &order {
        let pred = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] || gt.scene != pred.scene || gt.class != pred.class {
                continue;
            }
            let iou = oriented_box_iou(&pred.pose, &gt.pose);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let hit = best.filter(|&(_, iou)| iou >= iou_threshold);
        if let Some((g, _)) = hit {
            claimed[g] = true;
        }
        matches.push(DetectionMatch {
            prediction: p,
            ground_truth: hit.map(|(g, _)| g),
            iou: best.map_or(0.0, |(_, iou)| iou),
            score: pred.score,
        });
    }
    let per_class: Vec<(String, f64)> = classes
        .iter()
        .map(|&c| {
            let hits: Vec<bool> = matches
                .iter()
                .filter(|m| preds[m.prediction].class == c)
                .map(|m| m.ground_truth.is_some())
                .collect();
            let n_gt = gts.iter().filter(|g| g.class == c).count();
            (c.to_string(), average_precision(&hits, n_gt))
        })
        .collect();
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64
    };
    MapReport {
        threshold: iou_threshold,
        per_class,
        map,
        matches,
    }
}
