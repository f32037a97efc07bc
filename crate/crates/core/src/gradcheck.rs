//! Central finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::ClickLabel;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::network::{ModelParams, NetworkShape, ParamTensor};
use crate::objective::{loss_and_grad, LossWeights, ObjectiveConfig, TrainingVideo};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error: gradients smaller than this are
/// compared in absolute terms, where finite differences carry rounding noise
/// of order `machine_eps * |f| / step`.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` at `x` along every coordinate.
pub fn numeric_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn central(f: &mut impl FnMut(&[f64]) -> f64, probe: &mut [f64], i: usize, step: f64) -> f64 {
    let x = probe[i];
    probe[i] = x + step;
    let up = f(probe);
    probe[i] = x - step;
    let down = f(probe);
    probe[i] = x;
    (up - down) / (2.0 * step)
}

/// Disagreement between the differences at `h` and `h / 2` above which the
/// probe is taken to straddle a kink (a ReLU, top-k or argmax switch). The
/// absolute part sits above the rounding noise of steps down to `1e-7`.
const KINK_REL: f64 = 1e-5;
const KINK_ABS: f64 = 1e-8;

fn straddles_kink(a: f64, b: f64) -> bool {
    (a - b).abs() > KINK_REL * a.abs().max(b.abs()) + KINK_ABS
}

/// Central differences that step around nondifferentiable points.
///
/// On a smooth coordinate the differences at `h` and `h / 2` agree to
/// rounding, and the one at `h` is returned. When they disagree, the step is
/// shrunk tenfold (at most `retries` times) until a consistent pair is found;
/// if none is, the plain difference at `h` is kept. A wrong analytic gradient
/// is never moved towards agreement by this, only a straddled kink is.
pub fn kink_aware_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], step: f64, retries: usize) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let plain = central(f, &mut probe, i, step);
            let mut h = step;
            let mut d = plain;
            for _ in 0..=retries {
                let half = central(f, &mut probe, i, h / 2.0);
                if !straddles_kink(d, half) {
                    return d;
                }
                h /= 10.0;
                d = central(f, &mut probe, i, h);
            }
            plain
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Worst {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> Option<Worst> {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(index, (&a, &n))| Worst { index, analytic: a, numeric: n, rel_error: relative_error(a, n) })
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Cls,
    Frame,
    Sep,
    Aff,
    Total,
}

impl Component {
    pub const ALL: [Component; 5] = [Component::Cls, Component::Frame, Component::Sep, Component::Aff, Component::Total];

    pub fn name(self) -> &'static str {
        match self {
            Component::Cls => "l_cls",
            Component::Frame => "l_frame",
            Component::Sep => "l_sep",
            Component::Aff => "l_aff",
            Component::Total => "total",
        }
    }

    fn weights(self, full: LossWeights) -> LossWeights {
        let zero = LossWeights { cls: 0.0, frame: 0.0, sep: 0.0, aff: 0.0, ws: 0.0 };
        match self {
            Component::Cls => LossWeights { cls: 1.0, ..zero },
            Component::Frame => LossWeights { frame: 1.0, ..zero },
            Component::Sep => LossWeights { sep: 1.0, ..zero },
            Component::Aff => LossWeights { aff: 1.0, ..zero },
            Component::Total => full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorError {
    pub tensor: alloc::string::String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub component: Component,
    pub loss: f64,
    pub per_tensor: Vec<TensorError>,
    pub worst: Option<Worst>,
}

impl ComponentReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub components: Vec<ComponentReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.components.iter().map(ComponentReport::max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// Random instance for gradient checking.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub params: ModelParams,
    pub video: TrainingVideo,
    pub objective: ObjectiveConfig,
}

/// A random network and annotated video of length `t` (three clicks, one to
/// three labelled classes), checked with the affinity mask active.
pub fn random_instance(shape: NetworkShape, t: usize, cfg: &TrainConfig, seed: u64) -> Result<GradCheckInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(shape, rng.random())?;
    let features = Matrix::from_vec(
        t,
        shape.feature_dim,
        (0..t * shape.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let mut action_classes: Vec<usize> = (1..=shape.num_classes).filter(|_| rng.random_bool(0.5)).collect();
    if action_classes.is_empty() {
        action_classes.push(rng.random_range(1..=shape.num_classes));
    }
    let mut clicks = alloc::vec![ClickLabel::Unknown; t];
    let n_clicks = 3.min(t);
    while clicks.iter().filter(|&&c| c == ClickLabel::Background).count() < n_clicks {
        clicks[rng.random_range(0..t)] = ClickLabel::Background;
    }
    let mut cfg = cfg.clone();
    cfg.t_fixed = t;
    cfg.toggles.affinity = true;
    Ok(GradCheckInstance {
        params,
        video: TrainingVideo { video_id: alloc::format!("gradcheck_{seed}"), features, action_classes, clicks },
        objective: ObjectiveConfig::from_train(&cfg),
    })
}

/// Checks every loss component and the composed objective against central differences.
pub fn check_instance(inst: &GradCheckInstance, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let shape = inst.params.shape;
    let mut components = Vec::with_capacity(Component::ALL.len());
    for comp in Component::ALL {
        let objective = ObjectiveConfig { weights: comp.weights(inst.objective.weights), ..inst.objective };
        let (report, analytic) = loss_and_grad(&inst.params, &inst.video, &objective)?;
        let mut probe = inst.params.clone();
        let mut f = |x: &[f64]| {
            probe.values.copy_from_slice(x);
            loss_and_grad(&probe, &inst.video, &objective).map(|(r, _)| r.total).unwrap_or(f64::NAN)
        };
        let numeric = kink_aware_gradient(&mut f, &inst.params.values, step, 2);
        let per_tensor = ParamTensor::ALL
            .iter()
            .map(|&t| {
                let r = shape.tensor_range(t);
                TensorError {
                    tensor: t.name().into(),
                    max_rel_error: compare(&analytic[r.clone()], &numeric[r]).map_or(0.0, |w| w.rel_error),
                }
            })
            .collect();
        components.push(ComponentReport { component: comp, loss: report.total, per_tensor, worst: compare(&analytic, &numeric) });
    }
    Ok(GradCheckReport { components, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        let x = [0.5, -1.25, 3.0, 0.75];
        let mut f = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let numeric = numeric_gradient(&mut f, &x, DEFAULT_STEP);
        let analytic: Vec<f64> = x.iter().map(|a| 2.0 * a).collect();
        let worst = compare(&analytic, &numeric).unwrap();
        assert!(worst.rel_error < 1e-9, "{worst:?}");
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let x = [0.5, -1.25, 3.0];
        let mut f = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let numeric = numeric_gradient(&mut f, &x, DEFAULT_STEP);
        let corrupted: Vec<f64> = x.iter().map(|a| 4.0 * a).collect();
        assert!(compare(&corrupted, &numeric).unwrap().rel_error > DEFAULT_TOLERANCE);
    }

    #[test]
    fn kink_inside_the_step_is_stepped_around() {
        // |v - 1e-6| has slope 1 at 2e-6, but the plain difference straddles the kink.
        let mut f = |v: &[f64]| (v[0] - 1e-6).abs();
        let x = [2e-6];
        assert!((numeric_gradient(&mut f, &x, DEFAULT_STEP)[0] - 1.0).abs() > 0.5);
        assert!(relative_error(kink_aware_gradient(&mut f, &x, DEFAULT_STEP, 2)[0], 1.0) < 1e-6);
        let mut g = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let corrupted = [4.0 * 0.5, 4.0 * -1.25];
        let numeric = kink_aware_gradient(&mut g, &[0.5, -1.25], DEFAULT_STEP, 2);
        assert!(compare(&corrupted, &numeric).unwrap().rel_error > DEFAULT_TOLERANCE);
    }

    #[test]
    fn small_network_passes() {
        let shape = NetworkShape { num_classes: 3, feature_dim: 8, embed_dim: 4, kernel_size: 3, hidden: [8, 8] };
        let inst = random_instance(shape, 16, &TrainConfig::default(), 1).unwrap();
        let report = check_instance(&inst, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed(), "{:?}", report.components.iter().map(|c| (c.component, c.worst)).collect::<Vec<_>>());
    }
}
