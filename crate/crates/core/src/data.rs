//! Feature sequences, annotations and the temporal grid.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;

/// Per-video snippet features. `data` is `T_raw x D_in`, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub data: Matrix,
    pub fps_of_snippets: f64,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, data: Matrix, fps_of_snippets: f64) -> Result<Self> {
        if data.cols() == 0 {
            return Err(CoreError::invalid("feature dimension must be positive"));
        }
        if data.rows() == 0 {
            return Err(CoreError::invalid("feature sequence has no snippets"));
        }
        if !data.is_finite() {
            return Err(CoreError::NonFinite("feature sequence".into()));
        }
        Ok(FeatureSequence { video_id: video_id.into(), data, fps_of_snippets })
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.data.row(t)
    }
}

/// Linearly interpolate a sequence onto `t_fixed` evenly spaced positions.
///
/// Output frame `t` samples the input at `t * (T_raw - 1) / (t_fixed - 1)`.
pub fn rescale_to_fixed_length(seq: &FeatureSequence, t_fixed: usize) -> Result<FeatureSequence> {
    if t_fixed < 2 {
        return Err(CoreError::invalid(format!("fixed length must be at least 2, got {t_fixed}")));
    }
    let t_raw = seq.data.rows();
    if t_raw == 0 {
        return Err(CoreError::invalid("cannot rescale an empty sequence"));
    }
    let dim = seq.data.cols();
    let mut out = Matrix::zeros(t_fixed, dim);
    let span = (t_raw - 1) as f64;
    let denom = (t_fixed - 1) as f64;
    for t in 0..t_fixed {
        let pos = (t as f64) * span / denom;
        let lo = libm::floor(pos) as usize;
        let frac = pos - lo as f64;
        if lo + 1 >= t_raw || frac == 0.0 {
            out.row_mut(t).copy_from_slice(seq.data.row(lo.min(t_raw - 1)));
        } else {
            let (a, b) = (seq.data.row(lo), seq.data.row(lo + 1));
            for (o, (x, y)) in out.row_mut(t).iter_mut().zip(a.iter().zip(b)) {
                *o = x * (1.0 - frac) + y * frac;
            }
        }
    }
    let fps = seq.fps_of_snippets * t_fixed as f64 / t_raw as f64;
    Ok(FeatureSequence { video_id: seq.video_id.clone(), data: out, fps_of_snippets: fps })
}

/// Index of the grid frame that contains time `t_sec`.
pub fn map_time_to_frame(t_sec: f64, duration_sec: f64, t_fixed: usize) -> Result<usize> {
    if !(duration_sec > 0.0) {
        return Err(CoreError::invalid(format!("duration must be positive, got {duration_sec}")));
    }
    if t_fixed == 0 {
        return Err(CoreError::invalid("grid length must be positive"));
    }
    if !(0.0..=duration_sec).contains(&t_sec) {
        return Err(CoreError::invalid(format!("time {t_sec} outside [0, {duration_sec}]")));
    }
    let frame = libm::floor(t_sec / duration_sec * t_fixed as f64) as usize;
    Ok(frame.min(t_fixed - 1))
}

/// Start time in seconds of grid frame `frame`.
pub fn frame_to_time(frame: usize, duration_sec: f64, t_fixed: usize) -> f64 {
    frame as f64 * duration_sec / t_fixed as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSegment {
    pub start_sec: f64,
    pub end_sec: f64,
    pub class_id: usize,
}

impl GroundTruthSegment {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.start_sec >= 0.0 && self.start_sec < self.end_sec) {
            return Err(CoreError::Annotation(format!(
                "segment [{}, {}] is not a valid interval",
                self.start_sec, self.end_sec
            )));
        }
        if self.class_id == 0 || self.class_id > num_classes {
            return Err(CoreError::Annotation(format!("class id {} out of range", self.class_id)));
        }
        Ok(())
    }

    /// Frames `[first, last)` whose centers fall inside the segment.
    pub fn frame_span(&self, duration_sec: f64, t_fixed: usize) -> (usize, usize) {
        let step = duration_sec / t_fixed as f64;
        let first = libm::ceil(self.start_sec / step - 0.5).max(0.0) as usize;
        let last = (libm::ceil(self.end_sec / step - 0.5).max(0.0) as usize).min(t_fixed);
        (first.min(last), last)
    }
}

/// Per-frame click label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum ClickLabel {
    /// Annotated background frame (`1`).
    Background,
    /// Runtime pseudo action frame (`0`).
    PseudoAction,
    /// No information (`-1`).
    Unknown,
}

impl From<ClickLabel> for i8 {
    fn from(l: ClickLabel) -> i8 {
        match l {
            ClickLabel::Background => 1,
            ClickLabel::PseudoAction => 0,
            ClickLabel::Unknown => -1,
        }
    }
}

impl TryFrom<i8> for ClickLabel {
    type Error = String;

    fn try_from(v: i8) -> core::result::Result<Self, String> {
        match v {
            1 => Ok(ClickLabel::Background),
            0 => Ok(ClickLabel::PseudoAction),
            -1 => Ok(ClickLabel::Unknown),
            other => Err(format!("click label must be -1, 0 or 1, got {other}")),
        }
    }
}

/// A click placed inside an action instance, carrying that instance's class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionClick {
    pub t_sec: f64,
    pub frame: usize,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    /// Length `C + 1`; entry 0 is reserved for background handling and stays 0.
    pub labels: Vec<u8>,
    pub clicks: Vec<ClickLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<GroundTruthSegment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_clicks: Option<Vec<ActionClick>>,
}

impl VideoAnnotation {
    pub fn num_classes(&self) -> usize {
        self.labels.len().saturating_sub(1)
    }

    /// Action classes present in the video, in increasing order.
    pub fn action_classes(&self) -> Vec<usize> {
        (1..self.labels.len()).filter(|&c| self.labels[c] != 0).collect()
    }

    pub fn clicked_frames(&self) -> Vec<usize> {
        self.clicks
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == ClickLabel::Background)
            .map(|(t, _)| t)
            .collect()
    }

    pub fn validate(&self, num_classes: usize, t_fixed: usize) -> Result<()> {
        if self.labels.len() != num_classes + 1 {
            return Err(CoreError::Annotation(format!(
                "{}: expected {} label entries, found {}",
                self.video_id,
                num_classes + 1,
                self.labels.len()
            )));
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(CoreError::Annotation(format!("{}: labels must be 0 or 1", self.video_id)));
        }
        if self.labels[0] != 0 {
            return Err(CoreError::Annotation(format!(
                "{}: label index 0 is reserved for background",
                self.video_id
            )));
        }
        if self.action_classes().is_empty() {
            return Err(CoreError::Annotation(format!("{}: no action class labelled", self.video_id)));
        }
        if self.clicks.len() != t_fixed {
            return Err(CoreError::Annotation(format!(
                "{}: expected {} click entries, found {}",
                self.video_id,
                t_fixed,
                self.clicks.len()
            )));
        }
        if self.clicks.contains(&ClickLabel::PseudoAction) {
            return Err(CoreError::Annotation(format!(
                "{}: pseudo action labels are produced during training, not stored",
                self.video_id
            )));
        }
        if let Some(segments) = &self.segments {
            for s in segments {
                s.validate(num_classes)?;
            }
        }
        Ok(())
    }
}
