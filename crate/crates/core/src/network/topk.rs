//! Top-k aggregation and the pseudo action frames it induces.

use alloc::vec::Vec;

use crate::data::ClickLabel;
use crate::matrix::Matrix;

/// Indices of the `k` largest values, largest first; ties go to the lower index.
pub fn topk_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k.min(values.len()));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub value: f64,
    /// Selected positions in increasing order.
    pub indices: Vec<usize>,
}

/// Mean of the `k` largest entries of one class row.
pub fn topk_aggregate(row: &[f64], k: usize) -> TopK {
    assert!(k >= 1 && k <= row.len(), "k must lie in [1, T]");
    let mut indices = topk_indices(row, k);
    // Sum in selection order so the value does not depend on unselected entries.
    let value = indices.iter().map(|&t| row[t]).sum::<f64>() / k as f64;
    indices.sort_unstable();
    TopK { value, indices }
}

/// Labels after inserting the top-k frames of every labelled class as pseudo actions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabelState {
    pub labels: Vec<ClickLabel>,
    /// `(class, selected frames)` for each labelled class, classes increasing.
    pub topk: Vec<(usize, Vec<usize>)>,
}

impl FrameLabelState {
    pub fn background_frames(&self) -> Vec<usize> {
        self.frames_with(ClickLabel::Background)
    }

    pub fn action_frames(&self) -> Vec<usize> {
        self.frames_with(ClickLabel::PseudoAction)
    }

    fn frames_with(&self, l: ClickLabel) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &x)| x == l).map(|(t, _)| t).collect()
    }
}

/// `scores` is the frame-major activation sequence (`T x (C+1)`).
pub fn select_pseudo_action_frames(
    scores: &Matrix,
    action_classes: &[usize],
    k: usize,
    clicks: &[ClickLabel],
) -> FrameLabelState {
    let mut labels: Vec<ClickLabel> = clicks
        .iter()
        .map(|&b| if b == ClickLabel::Background { ClickLabel::Background } else { ClickLabel::Unknown })
        .collect();
    let mut topk = Vec::with_capacity(action_classes.len());
    for &c in action_classes {
        let sel = topk_aggregate(&scores.column(c), k).indices;
        for &t in &sel {
            if labels[t] != ClickLabel::Background {
                labels[t] = ClickLabel::PseudoAction;
            }
        }
        topk.push((c, sel));
    }
    FrameLabelState { labels, topk }
}

/// Fraction of the pooled top-k frames of the ground-truth classes that fall on
/// ground-truth action frames. `action_frames[t]` marks frames inside any
/// action instance.
pub fn topk_hit_ratio(scores: &Matrix, gt_classes: &[usize], action_frames: &[bool], k: usize) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for &c in gt_classes {
        for t in topk_indices(&scores.column(c), k) {
            total += 1;
            hits += usize::from(action_frames[t]);
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
