//! Batch inference over a dataset.

use backtal_core::config::InferenceConfig;
use backtal_core::eval::Prediction;
use backtal_core::inference::localize;
use backtal_core::network::ForwardOptions;
use rayon::prelude::*;

use crate::dataset::VideoRecord;
use crate::formats::Checkpoint;

/// Predictions for every video, in input order; each video's detections are
/// sorted by descending score.
pub fn predict(ck: &Checkpoint, videos: &[VideoRecord], cfg: &InferenceConfig) -> backtal_core::Result<Vec<Prediction>> {
    let opts = ForwardOptions::new(ck.use_affinity, ck.suppression);
    let per_video = videos
        .par_iter()
        .map(|v| {
            let mut dets = localize(&ck.params, &v.features, &opts, ck.k, cfg, v.duration_sec)?;
            dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            Ok(dets
                .into_iter()
                .map(|d| Prediction {
                    video_id: v.video_id.clone(),
                    t_start: d.t_start_sec,
                    t_end: d.t_end_sec,
                    class: d.class_id,
                    score: d.confidence,
                })
                .collect::<Vec<_>>())
        })
        .collect::<backtal_core::Result<Vec<_>>>()?;
    Ok(per_video.into_iter().flatten().collect())
}
