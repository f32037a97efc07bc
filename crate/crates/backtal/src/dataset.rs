//! Datasets on disk and in memory.

use std::path::Path;

use backtal_core::eval::GroundTruth;
use backtal_core::objective::TrainingVideo;
use backtal_core::synth::{SynthDataset, SynthVideo};
use backtal_core::{rescale_to_fixed_length, Matrix, VideoAnnotation};

use crate::formats::{self, DatasetManifest, FormatError, ManifestEntry, Result};

/// One video rescaled to the dataset's fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration_sec: f64,
    /// `T_fixed x D_in`.
    pub features: Matrix,
    pub annotation: VideoAnnotation,
}

impl VideoRecord {
    pub fn training_video(&self) -> TrainingVideo {
        TrainingVideo {
            video_id: self.video_id.clone(),
            features: self.features.clone(),
            action_classes: self.annotation.action_classes(),
            clicks: self.annotation.clicks.clone(),
        }
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.annotation
            .segments
            .iter()
            .flatten()
            .map(|s| GroundTruth { video_id: self.video_id.clone(), t_start: s.start_sec, t_end: s.end_sec, class: s.class_id })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub t_fixed: usize,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.videos.first().map_or(0, |v| v.features.cols())
    }

    pub fn training_videos(&self) -> Vec<TrainingVideo> {
        self.videos.iter().map(VideoRecord::training_video).collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.videos.iter().flat_map(VideoRecord::ground_truth).collect()
    }

    pub fn from_synth(videos: &[SynthVideo], num_classes: usize, t_fixed: usize) -> Self {
        Dataset {
            class_names: class_names(num_classes),
            t_fixed,
            videos: videos
                .iter()
                .map(|v| VideoRecord {
                    video_id: v.features.video_id.clone(),
                    duration_sec: v.duration_sec,
                    features: v.features.data.clone(),
                    annotation: v.annotation.clone(),
                })
                .collect(),
        }
    }
}

pub fn class_names(num_classes: usize) -> Vec<String> {
    (1..=num_classes).map(|c| format!("class_{c}")).collect()
}

/// Loads, validates and rescales every video of a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let (m, root) = formats::load_manifest(manifest_path)?;
    let mut videos = Vec::with_capacity(m.videos.len());
    let mut dim = None;
    for entry in &m.videos {
        let seq = formats::load_feature_sequence(&root.join(&entry.feature_path), &entry.video_id, entry.duration_sec)?;
        if *dim.get_or_insert(seq.dim()) != seq.dim() {
            return Err(FormatError::Invalid(format!("{}: feature dimension differs from the first video", entry.video_id)));
        }
        let fixed = rescale_to_fixed_length(&seq, m.t_fixed).map_err(|e| FormatError::Invalid(e.to_string()))?;
        let annotation = formats::load_annotation(&root.join(&entry.annotation_path))?;
        if annotation.video_id != entry.video_id {
            return Err(FormatError::Invalid(format!("annotation for {} names {}", entry.video_id, annotation.video_id)));
        }
        annotation
            .validate(m.num_classes(), m.t_fixed)
            .map_err(|e| FormatError::Invalid(format!("{}: {e}", entry.video_id)))?;
        videos.push(VideoRecord { video_id: entry.video_id.clone(), duration_sec: entry.duration_sec, features: fixed.data, annotation });
    }
    Ok(Dataset { class_names: m.class_names, t_fixed: m.t_fixed, videos })
}

/// Writes `features/`, `annotations/` and `manifest.json` under `dir`.
pub fn write_split(dir: &Path, videos: &[SynthVideo], num_classes: usize, t_fixed: usize) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        let id = &v.features.video_id;
        let feature_path = format!("features/{id}.bin");
        let annotation_path = format!("annotations/{id}.json");
        formats::write_feature_file(&dir.join(&feature_path), &v.features.data)?;
        formats::write_json(&dir.join(&annotation_path), &v.annotation)?;
        entries.push(ManifestEntry { video_id: id.clone(), feature_path, annotation_path, duration_sec: v.duration_sec });
    }
    let manifest = DatasetManifest { class_names: class_names(num_classes), videos: entries, t_fixed };
    formats::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// `train/` and `test/` splits of a synthetic dataset.
pub fn write_synthetic(dir: &Path, ds: &SynthDataset, num_classes: usize, t_fixed: usize) -> Result<()> {
    write_split(&dir.join("train"), &ds.train, num_classes, t_fixed)?;
    write_split(&dir.join("test"), &ds.test, num_classes, t_fixed)?;
    Ok(())
}
