//! One video's full training objective and its parameter gradient.

use alloc::vec::Vec;

use crate::config::TrainConfig;
use crate::data::ClickLabel;
use crate::error::{CoreError, Result};
use crate::losses::{
    affinity_loss, frame_cls_loss, score_separation_loss, total_loss, video_cls_loss, weight_supervision_loss,
    LossReport,
};
use crate::matrix::Matrix;
use crate::network::{backward, forward_cas, select_pseudo_action_frames, ForwardOptions, ModelParams, Upstream};

/// A training sample on the fixed-length grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingVideo {
    pub video_id: alloc::string::String,
    /// `T x D_in`.
    pub features: Matrix,
    pub action_classes: Vec<usize>,
    pub clicks: Vec<ClickLabel>,
}

impl TrainingVideo {
    pub fn clicked_frames(&self) -> Vec<usize> {
        (0..self.clicks.len()).filter(|&t| self.clicks[t] == ClickLabel::Background).collect()
    }
}

/// Coefficient of each objective term; a zero weight skips that term's gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub frame: f64,
    pub sep: f64,
    pub aff: f64,
    pub ws: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub k: usize,
    pub weights: LossWeights,
    pub tau_same: f64,
    pub tau_diff: f64,
    pub use_affinity: bool,
    pub suppression: bool,
}

impl ObjectiveConfig {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        let t = cfg.toggles;
        ObjectiveConfig {
            k: cfg.k(),
            weights: LossWeights {
                cls: 1.0,
                frame: if t.frame_loss { 1.0 } else { 0.0 },
                sep: if t.score_separation { cfg.lambda } else { 0.0 },
                aff: if t.affinity { cfg.beta } else { 0.0 },
                ws: if t.weight_supervision && t.suppression { 1.0 } else { 0.0 },
            },
            tau_same: cfg.tau_same,
            tau_diff: cfg.tau_diff,
            use_affinity: t.affinity,
            suppression: t.suppression,
        }
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions::new(self.use_affinity, self.suppression)
    }
}

fn accumulate(dst: &mut Option<Matrix>, src: &Matrix, w: f64) {
    if w == 0.0 {
        return;
    }
    let d = dst.get_or_insert_with(|| Matrix::zeros(src.rows(), src.cols()));
    for (a, b) in d.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *a += w * b;
    }
}

/// Loss report and flat parameter gradient for one video.
///
/// Every component value is reported; only components with a nonzero weight
/// contribute to the gradient and to `total`.
pub fn loss_and_grad(params: &ModelParams, video: &TrainingVideo, cfg: &ObjectiveConfig) -> Result<(LossReport, Vec<f64>)> {
    let len = video.features.rows();
    if video.clicks.len() != len {
        return Err(CoreError::shape("click vector length differs from feature length"));
    }
    if cfg.k == 0 || cfg.k > len {
        return Err(CoreError::invalid("k must lie in [1, T]"));
    }
    let pass = forward_cas(params, &video.features, &cfg.forward_options())?;
    let s_base = &pass.base.scores;
    let clicked = video.clicked_frames();
    let w = cfg.weights;

    let cls = video_cls_loss(s_base, pass.suppressed.as_ref().map(|s| &s.scores), &video.action_classes, cfg.k);
    let frame = frame_cls_loss(s_base, &clicked);
    let sep = score_separation_loss(s_base, &video.action_classes, &clicked, cfg.k);
    let state = select_pseudo_action_frames(s_base, &video.action_classes, cfg.k, &video.clicks);
    let aff = affinity_loss(&pass.embeddings, &state.labels, cfg.tau_same, cfg.tau_diff);
    let (ws_value, ws_grad) = weight_supervision_loss(&pass.attention, &clicked);

    let mut report = total_loss(cls.value, frame.value, sep.value, aff.value, w.sep, w.aff);
    report.total = w.cls * cls.value + w.frame * frame.value + w.sep * sep.value + w.aff * aff.value;
    report.separation = sep.per_class;
    if w.ws != 0.0 {
        report = report.with_weight_supervision(w.ws * ws_value);
    } else {
        report.l_ws = ws_value;
    }

    let mut up = Upstream::default();
    accumulate(&mut up.base, &cls.grad_base, w.cls);
    if let Some(g) = &cls.grad_suppressed {
        accumulate(&mut up.suppressed, g, w.cls);
    }
    accumulate(&mut up.base, &frame.grad, w.frame);
    accumulate(&mut up.base, &sep.grad, w.sep);
    accumulate(&mut up.embeddings, &aff.grad, w.aff);
    if w.ws != 0.0 {
        up.attention = Some(ws_grad.iter().map(|g| g * w.ws).collect());
    }
    let grad = backward(params, &pass, &up);
    Ok((report, grad))
}

/// Mean report and mean gradient over a batch, reduced in the given order.
pub fn reduce_batch(items: Vec<(LossReport, Vec<f64>)>) -> (LossReport, Vec<f64>) {
    let n = items.len().max(1) as f64;
    let mut grad: Vec<f64> = Vec::new();
    let mut r = LossReport::default();
    for (rep, g) in items {
        if grad.is_empty() {
            grad = alloc::vec![0.0; g.len()];
        }
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        r.l_cls += rep.l_cls;
        r.l_frame += rep.l_frame;
        r.l_sep += rep.l_sep;
        r.l_aff += rep.l_aff;
        r.l_ws += rep.l_ws;
        r.total += rep.total;
        r.separation.extend(rep.separation);
    }
    for v in &mut grad {
        *v /= n;
    }
    r.l_cls /= n;
    r.l_frame /= n;
    r.l_sep /= n;
    r.l_aff /= n;
    r.l_ws /= n;
    r.total /= n;
    (r, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn video(seed: u64) -> TrainingVideo {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features =
            Matrix::from_vec(16, 8, (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut clicks = alloc::vec![ClickLabel::Unknown; 16];
        clicks[0] = ClickLabel::Background;
        clicks[9] = ClickLabel::Background;
        clicks[15] = ClickLabel::Background;
        TrainingVideo { video_id: "v".into(), features, action_classes: alloc::vec![1, 3], clicks }
    }

    fn shape() -> NetworkShape {
        NetworkShape { num_classes: 3, feature_dim: 8, embed_dim: 4, kernel_size: 3, hidden: [6, 6] }
    }

    #[test]
    fn total_matches_weighted_components() {
        let p = ModelParams::init(shape(), 3).unwrap();
        let cfg = TrainConfig { t_fixed: 16, ..TrainConfig::default() };
        let (r, _) = loss_and_grad(&p, &video(1), &ObjectiveConfig::from_train(&cfg)).unwrap();
        assert!((r.total - (r.l_cls + r.l_frame + 1.0 * r.l_sep + 0.8 * r.l_aff)).abs() < 1e-12);
        assert!(r.l_cls >= 0.0 && r.l_frame >= 0.0 && r.l_sep >= 0.0 && r.l_aff >= 0.0);
        assert_eq!(r.separation.len(), 2);
    }

    #[test]
    fn zero_lambda_equals_disabled_separation_bitwise() {
        let p = ModelParams::init(shape(), 4).unwrap();
        let v = video(2);
        let a = TrainConfig { t_fixed: 16, lambda: 0.0, ..TrainConfig::default() };
        let mut b = a.clone();
        b.lambda = 1.0;
        b.toggles.score_separation = false;
        let (ra, ga) = loss_and_grad(&p, &v, &ObjectiveConfig::from_train(&a)).unwrap();
        let (rb, gb) = loss_and_grad(&p, &v, &ObjectiveConfig::from_train(&b)).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(ra.total, rb.total);
    }

    #[test]
    fn mismatched_clicks_rejected() {
        let p = ModelParams::init(shape(), 4).unwrap();
        let mut v = video(2);
        v.clicks.pop();
        let cfg = ObjectiveConfig::from_train(&TrainConfig { t_fixed: 16, ..TrainConfig::default() });
        assert!(loss_and_grad(&p, &v, &cfg).is_err());
    }
}
