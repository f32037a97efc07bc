//! Detection metrics: temporal IoU, average precision and mAP tables.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Intersection over union of two `(start, end)` intervals.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub class: usize,
}

/// Prediction indices by descending score; equal scores keep input order.
pub fn rank_order(preds: &[&Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    order
}

/// True-positive flags in rank order. Each prediction takes the unmatched
/// ground truth of its video with the highest tIoU, if that reaches `thr`.
pub fn match_predictions(preds: &[&Prediction], gts: &[&GroundTruth], thr: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    rank_order(preds)
        .into_iter()
        .map(|i| {
            let p = preds[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if used[j] || g.video_id != p.video_id {
                    continue;
                }
                let iou = tiou((p.t_start, p.t_end), (g.t_start, g.t_end));
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                used[j] = true;
            }
            best.is_some()
        })
        .collect()
}

/// Area under the precision/recall staircase for rank-ordered TP flags.
pub fn ap_from_flags(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut area = 0.0;
    for (r, &is_tp) in tp.iter().enumerate() {
        if is_tp {
            hits += 1;
            area += hits as f64 / (r + 1) as f64;
        }
    }
    area / num_gt as f64
}

/// AP of one class; inputs are already restricted to that class.
pub fn average_precision(preds: &[&Prediction], gts: &[&GroundTruth], thr: f64) -> f64 {
    ap_from_flags(&match_predictions(preds, gts, thr), gts.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    pub ap: f64,
    pub num_gt: usize,
    /// No ground truth: AP is reported as 0 and left out of the mean.
    pub no_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub tiou: f64,
    pub per_class: Vec<ClassAp>,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTable {
    pub rows: Vec<ThresholdRow>,
    pub average_map: f64,
}

impl MapTable {
    pub fn map_at(&self, thr: f64) -> Option<f64> {
        self.rows.iter().find(|r| (r.tiou - thr).abs() < 1e-12).map(|r| r.map)
    }
}

/// Per-class AP and mAP for classes `1..=num_classes` at each threshold.
pub fn map_at(preds: &[Prediction], gts: &[GroundTruth], num_classes: usize, thresholds: &[f64]) -> MapTable {
    let by_class: Vec<(Vec<&Prediction>, Vec<&GroundTruth>)> = (1..=num_classes)
        .map(|c| (preds.iter().filter(|p| p.class == c).collect(), gts.iter().filter(|g| g.class == c).collect()))
        .collect();
    let rows: Vec<ThresholdRow> = thresholds
        .iter()
        .map(|&thr| {
            let per_class: Vec<ClassAp> = by_class
                .iter()
                .enumerate()
                .map(|(i, (p, g))| ClassAp {
                    class: i + 1,
                    ap: average_precision(p, g, thr),
                    num_gt: g.len(),
                    no_ground_truth: g.is_empty(),
                })
                .collect();
            let counted: Vec<f64> = per_class.iter().filter(|c| !c.no_ground_truth).map(|c| c.ap).collect();
            let map = if counted.is_empty() { 0.0 } else { counted.iter().sum::<f64>() / counted.len() as f64 };
            ThresholdRow { tiou: thr, per_class, map }
        })
        .collect();
    let average_map = if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.map).sum::<f64>() / rows.len() as f64 };
    MapTable { rows, average_map }
}
