//! Training loop: seeded batches, parallel per-video gradients, Adam updates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use backtal_core::losses::{score_separation_loss, LossReport};
use backtal_core::network::forward_cas;
use backtal_core::objective::{loss_and_grad, reduce_batch, ObjectiveConfig, TrainingVideo};
use backtal_core::optim::Adam;
use backtal_core::{ModelParams, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::formats::{self, Checkpoint};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iter} (batch: {videos:?}); dump written to {dump:?}")]
    NonFinite { iter: usize, videos: Vec<String>, dump: Option<PathBuf> },
    #[error(transparent)]
    Core(#[from] backtal_core::CoreError),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub iter: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

/// Seed used to initialize the network, derived from the run seed.
pub fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

pub fn initial_params(cfg: &TrainConfig, num_classes: usize, feature_dim: usize) -> Result<ModelParams, TrainError> {
    Ok(ModelParams::init(cfg.network_shape(num_classes, feature_dim), init_seed(cfg.seed))?)
}

/// Per-epoch permutations of `0..n`, chunked into batches (last one may be short).
pub fn batch_schedule(n: usize, cfg: &TrainConfig) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        out.extend(order.chunks(cfg.batch_size).map(<[usize]>::to_vec));
    }
    out
}

/// Trains from the initialization implied by `cfg.seed`.
pub fn train(cfg: &TrainConfig, videos: &[TrainingVideo], num_classes: usize, dump_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    let dim = videos.first().map(|v| v.features.cols()).ok_or_else(|| TrainError::Config("no training videos".into()))?;
    if let Some(v) = videos.iter().find(|v| v.features.rows() != cfg.t_fixed || v.features.cols() != dim) {
        return Err(TrainError::Config(format!("{} is not {} x {dim}", v.video_id, cfg.t_fixed)));
    }
    let mut params = initial_params(cfg, num_classes, dim)?;
    let objective = ObjectiveConfig::from_train(cfg);
    let mut opt = Adam::new(params.values.len(), cfg.lr, cfg.weight_decay, cfg.adam);
    let mut log = Vec::new();
    for (i, batch) in batch_schedule(videos.len(), cfg).into_iter().enumerate() {
        let iter = i + 1;
        let items = batch
            .par_iter()
            .map(|&v| loss_and_grad(&params, &videos[v], &objective))
            .collect::<Result<Vec<_>, _>>()?;
        let (report, grad) = reduce_batch(items);
        if !report.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let ids: Vec<String> = batch.iter().map(|&v| videos[v].video_id.clone()).collect();
            let dump = dump_dir.map(|d| d.join(format!("nonfinite_iter{iter}.json")));
            if let Some(path) = &dump {
                let body = serde_json::json!({ "iter": iter, "videos": ids, "report": report, "config": cfg });
                formats::write_json(path, &body)?;
            }
            return Err(TrainError::NonFinite { iter, videos: ids, dump });
        }
        opt.step(&mut params.values, &grad);
        log.push(LogRow { iter, report });
    }
    let checkpoint = Checkpoint {
        params,
        t_fixed: cfg.t_fixed,
        k: cfg.k(),
        use_affinity: cfg.toggles.affinity,
        suppression: cfg.toggles.suppression,
    };
    Ok(TrainOutcome { checkpoint, log })
}

pub fn log_csv(log: &[LogRow]) -> String {
    let mut s = String::from("iter,l_cls,l_frame,l_sep,l_aff,total\n");
    for row in log {
        let r = &row.report;
        writeln!(s, "{},{},{},{},{},{}", row.iter, r.l_cls, r.l_frame, r.l_sep, r.l_aff, r.total).unwrap();
    }
    s
}

/// Mean of `p_act - p_bg` over all labelled classes of all videos (base branch).
pub fn mean_separation_gap(params: &ModelParams, videos: &[TrainingVideo], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let objective = ObjectiveConfig::from_train(cfg);
    let gaps = videos
        .par_iter()
        .map(|v| {
            let pass = forward_cas(params, &v.features, &objective.forward_options())?;
            let sep = score_separation_loss(&pass.base.scores, &v.action_classes, &v.clicked_frames(), objective.k);
            Ok(sep.per_class.iter().map(|c| c.p_act - c.p_bg).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, backtal_core::CoreError>>()?;
    let all: Vec<f64> = gaps.into_iter().flatten().collect();
    Ok(all.iter().sum::<f64>() / all.len().max(1) as f64)
}
