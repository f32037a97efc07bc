//! Segment proposals from the activation sequence.
//!
//! Classes whose video-level score passes `tau_cls` are kept; their
//! activation row is min-max normalised, every maximal run above each
//! threshold of the sweep becomes a candidate scored by the
//! outer-inner-contrastive score, and class-wise NMS removes duplicates.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::InferenceConfig;
use crate::error::Result;
use crate::eval::tiou;
use crate::math::{mean, softmax};
use crate::matrix::Matrix;
use crate::network::{forward_cas, topk_aggregate, ForwardOptions, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedInstance {
    pub t_start_sec: f64,
    pub t_end_sec: f64,
    pub class_id: usize,
    pub confidence: f64,
}

/// Candidate on the frame grid, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Inner mean minus the mean of the two flanks of length `ceil(inflation * len)`.
pub fn oic_score(row: &[f64], start: usize, end: usize, inflation: f64) -> f64 {
    assert!(start < end && end <= row.len(), "segment must satisfy 0 <= start < end <= T");
    let inner = mean(&row[start..end]);
    let flank = libm::ceil(inflation * (end - start) as f64) as usize;
    let left = start.saturating_sub(flank);
    let right = (end + flank).min(row.len());
    let outer: Vec<f64> = row[left..start].iter().chain(&row[end..right]).copied().collect();
    if outer.is_empty() {
        inner
    } else {
        inner - mean(&outer)
    }
}

/// Maximal runs of frames with value strictly above `threshold`.
pub fn runs_above(row: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &v) in row.iter().enumerate() {
        match (v > threshold, open) {
            (true, None) => open = Some(t),
            (false, Some(s)) => {
                runs.push((s, t));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, row.len()));
    }
    runs
}

pub fn min_max_normalize(row: &[f64]) -> Vec<f64> {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return alloc::vec![0.0; row.len()];
    }
    row.iter().map(|&v| (v - lo) / span).collect()
}

/// Greedy suppression by descending score (ties: earlier start).
pub fn nms(mut candidates: Vec<Candidate>, tiou_threshold: f64) -> Vec<Candidate> {
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.start.cmp(&b.start)).then(a.end.cmp(&b.end)));
    let mut kept: Vec<Candidate> = Vec::new();
    for c in candidates {
        let overlaps = kept
            .iter()
            .any(|k| tiou((c.start as f64, c.end as f64), (k.start as f64, k.end as f64)) >= tiou_threshold);
        if !overlaps {
            kept.push(c);
        }
    }
    kept
}

/// Candidates for one class row before NMS.
pub fn class_candidates(row: &[f64], cfg: &InferenceConfig) -> Vec<Candidate> {
    let norm = min_max_normalize(row);
    let mut out = Vec::new();
    for &theta in &cfg.seg_thresholds {
        for (start, end) in runs_above(&norm, theta) {
            out.push(Candidate { start, end, score: oic_score(&norm, start, end, cfg.inflation) });
        }
    }
    out
}

/// Softmax over the top-k aggregated class scores.
pub fn video_scores(scores: &Matrix, k: usize) -> Vec<f64> {
    let agg: Vec<f64> = (0..scores.cols()).map(|c| topk_aggregate(&scores.column(c), k).value).collect();
    softmax(&agg)
}

/// Detections from a frame-major activation sequence (`T x (C+1)`).
pub fn localize_scores(scores: &Matrix, k: usize, cfg: &InferenceConfig, duration_sec: f64) -> Vec<DetectedInstance> {
    let len = scores.rows();
    let video = video_scores(scores, k);
    let step = duration_sec / len as f64;
    let mut out = Vec::new();
    for c in 1..scores.cols() {
        if video[c] < cfg.tau_cls {
            continue;
        }
        for cand in nms(class_candidates(&scores.column(c), cfg), cfg.nms_tiou) {
            out.push(DetectedInstance {
                t_start_sec: cand.start as f64 * step,
                t_end_sec: cand.end as f64 * step,
                class_id: c,
                confidence: cand.score,
            });
        }
    }
    out
}

/// Runs the network and localizes on the branch used for inference.
pub fn localize(
    params: &ModelParams,
    features: &Matrix,
    opts: &ForwardOptions,
    k: usize,
    cfg: &InferenceConfig,
    duration_sec: f64,
) -> Result<Vec<DetectedInstance>> {
    let pass = forward_cas(params, features, opts)?;
    Ok(localize_scores(&pass.inference_scores().scores, k, cfg, duration_sec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn oic_examples() {
        assert!(oic_score(&[0.4; 10], 3, 6, 0.25).abs() < 1e-15);
        assert_eq!(oic_score(&[0.5; 10], 3, 6, 0.25), 0.0);
        let row = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        assert_eq!(oic_score(&row, 2, 6, 0.25), 1.0);
        assert_eq!(oic_score(&[0.25, 0.5, 0.75], 0, 3, 0.25), 0.5);
        // Left flank clipped at the sequence start.
        assert_eq!(oic_score(&[1.0, 1.0, 0.5, 0.0], 0, 2, 0.5), 1.0 - 0.5);
    }

    #[test]
    fn runs_examples() {
        assert_eq!(runs_above(&[0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0], 0.5), vec![(2, 5)]);
        assert!(runs_above(&[0.1, 0.2], 0.5).is_empty());
        assert_eq!(runs_above(&[0.9, 0.1, 0.9], 0.5), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn nms_examples() {
        let a = Candidate { start: 0, end: 4, score: 0.5 };
        let b = Candidate { start: 6, end: 9, score: 0.7 };
        assert_eq!(nms(vec![a, b], 0.5).len(), 2);
        assert_eq!(nms(vec![a, a], 0.5), vec![a]);
        assert_eq!(nms(vec![], 0.5), vec![]);
    }

    /// Every subset of candidates is tested against the greedy rule: a kept
    /// set is correct iff, scanning in rank order, each candidate is kept
    /// exactly when it does not overlap an earlier kept one.
    fn brute_force_nms(cands: &[Candidate], thr: f64) -> Vec<Candidate> {
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&i, &j| {
            cands[j].score.total_cmp(&cands[i].score).then(cands[i].start.cmp(&cands[j].start)).then(cands[i].end.cmp(&cands[j].end))
        });
        let overlap = |a: &Candidate, b: &Candidate| tiou((a.start as f64, a.end as f64), (b.start as f64, b.end as f64)) >= thr;
        for mask in 0u32..(1 << cands.len()) {
            let kept = |i: usize| mask & (1 << i) != 0;
            let consistent = order.iter().enumerate().all(|(r, &i)| {
                let blocked = order[..r].iter().any(|&j| kept(j) && overlap(&cands[i], &cands[j]));
                kept(i) == !blocked
            });
            if consistent {
                return order.iter().copied().filter(|&i| kept(i)).map(|i| cands[i]).collect();
            }
        }
        unreachable!("the greedy rule always has a consistent subset")
    }

    #[test]
    fn nms_matches_exhaustive_oracle() {
        let cands = vec![
            Candidate { start: 0, end: 10, score: 0.9 },
            Candidate { start: 2, end: 11, score: 0.8 },
            Candidate { start: 9, end: 20, score: 0.7 },
        ];
        assert_eq!(nms(cands.clone(), 0.5), brute_force_nms(&cands, 0.5));
        assert_eq!(nms(cands.clone(), 0.5).len(), 2);
    }

    fn scores_with_row(row: &[f64], class: usize, classes: usize) -> Matrix {
        let mut m = Matrix::filled(row.len(), classes + 1, -5.0);
        for (t, &v) in row.iter().enumerate() {
            m.set(t, class, v);
        }
        m
    }

    #[test]
    fn class_below_tau_is_discarded() {
        let s = scores_with_row(&[0.0, 0.0, 1.0, 1.0, 0.0], 1, 2);
        let mut m = s.clone();
        for t in 0..5 {
            m.set(t, 1, -10.0);
        }
        let cfg = InferenceConfig::default();
        assert!(!localize_scores(&s, 2, &cfg, 10.0).is_empty());
        assert!(localize_scores(&m, 2, &cfg, 10.0).is_empty());
    }

    #[test]
    fn single_block_becomes_one_detection() {
        let s = scores_with_row(&[0.0, 0.0, 4.0, 4.0, 4.0, 0.0, 0.0], 1, 1);
        let cfg = InferenceConfig { seg_thresholds: vec![0.5], ..InferenceConfig::default() };
        let d = localize_scores(&s, 2, &cfg, 7.0);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].t_start_sec, d[0].t_end_sec, d[0].class_id), (2.0, 5.0, 1));
    }

    fn arb_row() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, 8..40)
    }

    proptest! {
        #[test]
        fn kept_candidates_do_not_overlap(row in arb_row()) {
            let cfg = InferenceConfig::default();
            let kept = nms(class_candidates(&row, &cfg), cfg.nms_tiou);
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(tiou((a.start as f64, a.end as f64), (b.start as f64, b.end as f64)) < cfg.nms_tiou);
                }
            }
            let norm = min_max_normalize(&row);
            for c in &kept {
                prop_assert!(cfg.seg_thresholds.iter().any(|&th| norm[c.start..c.end].iter().all(|&v| v > th)));
            }
        }

        #[test]
        fn boundaries_invariant_to_positive_affine_rescaling(
            row in arb_row(), scale_pow in -3i32..4, offset in -2.0f64..2.0,
        ) {
            let cfg = InferenceConfig::default();
            let scale = 2f64.powi(scale_pow);
            let moved: Vec<f64> = row.iter().map(|v| v * scale + offset).collect();
            let spans = |r: &[f64]| {
                let mut v: Vec<(usize, usize)> = nms(class_candidates(r, &cfg), cfg.nms_tiou).iter().map(|c| (c.start, c.end)).collect();
                v.sort_unstable();
                v
            };
            prop_assert_eq!(spans(&row), spans(&moved));
        }
    }
}
