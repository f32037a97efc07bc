//! Training objectives. Each returns its value together with the gradient
//! with respect to the quantity it reads (activation sequence or embeddings).
//!
//! Activation sequences are frame-major, `T x (C+1)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::ClickLabel;
use crate::math::{ln, log_softmax, sigmoid, softmax, softplus};
use crate::matrix::Matrix;
use crate::network::{cosine_affinity, cosine_affinity_grad, topk_aggregate};

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// Cross-entropy between `target` and the softmax of the top-k aggregated scores.
pub fn branch_cls_loss(scores: &Matrix, target: &[f64], k: usize) -> LossGrad {
    let classes = scores.cols();
    assert_eq!(target.len(), classes);
    let aggregated: Vec<_> = (0..classes).map(|c| topk_aggregate(&scores.column(c), k)).collect();
    let logits: Vec<f64> = aggregated.iter().map(|a| a.value).collect();
    let logp = log_softmax(&logits);
    let value = -target.iter().zip(&logp).filter(|(&y, _)| y != 0.0).map(|(y, lp)| y * lp).sum::<f64>();
    let p = softmax(&logits);
    let mass: f64 = target.iter().sum();
    let mut grad = Matrix::zeros(scores.rows(), classes);
    for (c, agg) in aggregated.iter().enumerate() {
        let dlogit = p[c] * mass - target[c];
        let per = dlogit / k as f64;
        for &t in &agg.indices {
            grad.set(t, c, per);
        }
    }
    LossGrad { value, grad }
}

/// Video-level targets for the two branches: the base branch also labels
/// background, the suppressed branch labels only the action classes.
pub fn branch_targets(action_classes: &[usize], num_classes: usize) -> (Vec<f64>, Vec<f64>) {
    let n = action_classes.len() as f64;
    let mut base = vec![0.0; num_classes + 1];
    let mut supp = vec![0.0; num_classes + 1];
    base[0] = 1.0 / (n + 1.0);
    for &c in action_classes {
        base[c] = 1.0 / (n + 1.0);
        supp[c] = 1.0 / n;
    }
    (base, supp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClsLoss {
    pub value: f64,
    pub grad_base: Matrix,
    pub grad_suppressed: Option<Matrix>,
}

/// Video-level classification loss summed over the base and (when present) suppressed branch.
pub fn video_cls_loss(
    base: &Matrix,
    suppressed: Option<&Matrix>,
    action_classes: &[usize],
    k: usize,
) -> VideoClsLoss {
    let (yb, ys) = branch_targets(action_classes, base.cols() - 1);
    let b = branch_cls_loss(base, &yb, k);
    match suppressed {
        Some(s) => {
            let sl = branch_cls_loss(s, &ys, k);
            VideoClsLoss { value: b.value + sl.value, grad_base: b.grad, grad_suppressed: Some(sl.grad) }
        }
        None => VideoClsLoss { value: b.value, grad_base: b.grad, grad_suppressed: None },
    }
}

/// Background cross-entropy averaged over the clicked frames; 0 without clicks.
pub fn frame_cls_loss(scores: &Matrix, clicked: &[usize]) -> LossGrad {
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    if clicked.is_empty() {
        return LossGrad { value: 0.0, grad };
    }
    let n = clicked.len() as f64;
    let mut value = 0.0;
    for &t in clicked {
        let logp = log_softmax(scores.row(t));
        value -= logp[0];
        let p = softmax(scores.row(t));
        for (c, pc) in p.iter().enumerate() {
            let target = if c == 0 { 1.0 } else { 0.0 };
            grad.set(t, c, grad.get(t, c) + (pc - target) / n);
        }
    }
    LossGrad { value: value / n, grad }
}

/// Two-way softmax separation of one class: `-ln p̂_act - ln(1 - p̂_bg)`.
pub fn separation_term(p_act: f64, p_bg: f64) -> f64 {
    // Both terms depend only on the score difference, so shifting both
    // scores by a constant leaves the value unchanged.
    let d = p_bg - p_act;
    // ln of the action entry of softmax([p_act, p_bg])
    let log_act = -softplus(d);
    // 1 - p̂_bg equals p̂_act
    let log_one_minus_bg = -softplus(d);
    -log_act - log_one_minus_bg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSeparation {
    pub class_id: usize,
    pub p_act: f64,
    pub p_bg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationLoss {
    pub value: f64,
    pub grad: Matrix,
    pub per_class: Vec<ClassSeparation>,
}

/// Mean top-k score versus mean clicked-frame score per labelled class,
/// on raw activations, averaged over labelled classes.
pub fn score_separation_loss(scores: &Matrix, action_classes: &[usize], clicked: &[usize], k: usize) -> SeparationLoss {
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    let mut per_class = Vec::with_capacity(action_classes.len());
    if action_classes.is_empty() || clicked.is_empty() {
        return SeparationLoss { value: 0.0, grad, per_class };
    }
    let n_cls = action_classes.len() as f64;
    let n_bg = clicked.len() as f64;
    let mut value = 0.0;
    for &c in action_classes {
        let top = topk_aggregate(&scores.column(c), k);
        let p_act = top.value;
        let p_bg = clicked.iter().map(|&t| scores.get(t, c)).sum::<f64>() / n_bg;
        value += separation_term(p_act, p_bg);
        // d/d(p_bg - p_act) of 2 softplus(p_bg - p_act)
        let slope = 2.0 * sigmoid(p_bg - p_act) / n_cls;
        for &t in &top.indices {
            grad.set(t, c, grad.get(t, c) - slope / k as f64);
        }
        for &t in clicked {
            grad.set(t, c, grad.get(t, c) + slope / n_bg);
        }
        per_class.push(ClassSeparation { class_id: c, p_act, p_bg });
    }
    SeparationLoss { value: value / n_cls, grad, per_class }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AffinityTerms {
    pub background: f64,
    pub action: f64,
    pub cross: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityLoss {
    pub value: f64,
    pub terms: AffinityTerms,
    pub grad: Matrix,
}

/// The hardest pair of a set: lowest similarity within `set` (`cross = None`)
/// or highest similarity between `set` and `cross`.
fn hardest_pair(e: &Matrix, set: &[usize], cross: Option<&[usize]>) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    match cross {
        None => {
            for (i, &u) in set.iter().enumerate() {
                for &v in &set[i + 1..] {
                    let s = cosine_affinity(e.row(u), e.row(v));
                    if best.is_none_or(|(_, _, b)| s < b) {
                        best = Some((u, v, s));
                    }
                }
            }
        }
        Some(other) => {
            for &u in set {
                for &v in other {
                    let s = cosine_affinity(e.row(u), e.row(v));
                    if best.is_none_or(|(_, _, b)| s > b) {
                        best = Some((u, v, s));
                    }
                }
            }
        }
    }
    best
}

fn push_pair_grad(e: &Matrix, u: usize, v: usize, scale: f64, grad: &mut Matrix) {
    let dim = e.cols();
    let mut du = vec![0.0; dim];
    let mut dv = vec![0.0; dim];
    cosine_affinity_grad(e.row(u), e.row(v), scale, &mut du, &mut dv);
    for (g, d) in grad.row_mut(u).iter_mut().zip(&du) {
        *g += d;
    }
    for (g, d) in grad.row_mut(v).iter_mut().zip(&dv) {
        *g += d;
    }
}

/// Hinge losses on the hardest background pair, hardest action pair and
/// hardest background/action pair of the embedding sequence.
pub fn affinity_loss(e: &Matrix, labels: &[ClickLabel], tau_same: f64, tau_diff: f64) -> AffinityLoss {
    let bg: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == ClickLabel::Background).collect();
    let act: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == ClickLabel::PseudoAction).collect();
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    let mut terms = AffinityTerms::default();

    if let Some((u, v, s)) = hardest_pair(e, &bg, None) {
        let h = tau_same - s;
        if h > 0.0 {
            terms.background = h;
            push_pair_grad(e, u, v, -1.0, &mut grad);
        }
    }
    if let Some((u, v, s)) = hardest_pair(e, &act, None) {
        let h = tau_same - s;
        if h > 0.0 {
            terms.action = h;
            push_pair_grad(e, u, v, -1.0, &mut grad);
        }
    }
    if let Some((u, v, s)) = hardest_pair(e, &bg, Some(&act)) {
        let h = s - tau_diff;
        if h > 0.0 {
            terms.cross = h;
            push_pair_grad(e, u, v, 1.0, &mut grad);
        }
    }
    AffinityLoss { value: terms.background + terms.action + terms.cross, terms, grad }
}

/// Binary cross-entropy pushing attention weights to zero at clicked frames.
pub fn weight_supervision_loss(attention: &[f64], clicked: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; attention.len()];
    if clicked.is_empty() {
        return (0.0, grad);
    }
    let n = clicked.len() as f64;
    let mut value = 0.0;
    for &t in clicked {
        let w = attention[t];
        value -= ln((1.0 - w).max(1e-300));
        grad[t] += 1.0 / ((1.0 - w).max(1e-300) * n);
    }
    (value / n, grad)
}

/// Per-iteration loss breakdown.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_cls: f64,
    pub l_frame: f64,
    pub l_sep: f64,
    pub l_aff: f64,
    /// Attention-weight supervision; 0 unless that variant is enabled.
    pub l_ws: f64,
    pub separation: Vec<ClassSeparation>,
    pub total: f64,
}

/// Weighted composition `l_cls + l_frame + lambda * l_sep + beta * l_aff (+ l_ws)`.
pub fn total_loss(l_cls: f64, l_frame: f64, l_sep: f64, l_aff: f64, lambda: f64, beta: f64) -> LossReport {
    LossReport { l_cls, l_frame, l_sep, l_aff, total: l_cls + l_frame + lambda * l_sep + beta * l_aff, ..Default::default() }
}

impl LossReport {
    pub fn with_weight_supervision(mut self, l_ws: f64) -> Self {
        self.l_ws = l_ws;
        self.total += l_ws;
        self
    }

    pub fn is_finite(&self) -> bool {
        [self.l_cls, self.l_frame, self.l_sep, self.l_aff, self.l_ws, self.total].iter().all(|v| v.is_finite())
    }

    /// Mean `p_act - p_bg` over the labelled classes.
    pub fn mean_separation_gap(&self) -> Option<f64> {
        if self.separation.is_empty() {
            return None;
        }
        Some(self.separation.iter().map(|s| s.p_act - s.p_bg).sum::<f64>() / self.separation.len() as f64)
    }
}
