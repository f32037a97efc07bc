//! Simulated click annotation from ground-truth segments.
//!
//! A background click is placed uniformly at random inside every maximal
//! stretch of time not covered by an action instance. Stretches shorter than
//! one grid frame are skipped since no frame can be clicked there.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{map_time_to_frame, ActionClick, ClickLabel, GroundTruthSegment, VideoAnnotation};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClickStatus {
    Ok,
    /// The video is fully covered by actions; no background click exists.
    NoBackgroundGap,
}

/// Half-open background interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub start: f64,
    pub end: f64,
}

impl Gap {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedClick {
    pub t_sec: f64,
    pub frame: usize,
    pub gap: Gap,
}

impl SimulatedClick {
    /// Position of the click within its gap, in `[0, 1)`.
    pub fn relative_position(&self) -> f64 {
        (self.t_sec - self.gap.start) / self.gap.len()
    }
}

#[derive(Debug, Clone)]
pub struct BackgroundClicks {
    pub annotation: VideoAnnotation,
    pub clicks: Vec<SimulatedClick>,
    pub status: ClickStatus,
}

/// Union of the action segments as sorted, disjoint intervals.
pub fn merge_segments(gt: &[GroundTruthSegment]) -> Vec<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = gt.iter().map(|s| (s.start_sec, s.end_sec)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Maximal background gaps of nonzero length, including leading and trailing ones.
pub fn background_gaps(gt: &[GroundTruthSegment], duration_sec: f64) -> Vec<Gap> {
    let mut gaps = Vec::new();
    let mut cursor = 0.0;
    for (s, e) in merge_segments(gt) {
        if s > cursor {
            gaps.push(Gap { start: cursor, end: s.min(duration_sec) });
        }
        cursor = cursor.max(e);
    }
    if duration_sec > cursor {
        gaps.push(Gap { start: cursor, end: duration_sec });
    }
    gaps.retain(|g| !g.is_empty());
    gaps
}

fn label_vector(gt: &[GroundTruthSegment], num_classes: usize) -> Vec<u8> {
    let mut labels = vec![0u8; num_classes + 1];
    for s in gt {
        labels[s.class_id] = 1;
    }
    labels
}

fn check_inputs(gt: &[GroundTruthSegment], num_classes: usize, duration_sec: f64, t_fixed: usize) -> Result<()> {
    if !(duration_sec > 0.0) || t_fixed == 0 {
        return Err(CoreError::invalid("duration and grid length must be positive"));
    }
    for s in gt {
        s.validate(num_classes)?;
        if s.end_sec > duration_sec {
            return Err(CoreError::Annotation(format!(
                "segment ends at {} beyond duration {}",
                s.end_sec, duration_sec
            )));
        }
    }
    Ok(())
}

/// Frames whose centers lie inside `gap`, as `[first, last]`.
fn frames_in_gap(gap: Gap, duration_sec: f64, t_fixed: usize) -> Option<(usize, usize)> {
    let step = duration_sec / t_fixed as f64;
    let first = libm::ceil(gap.start / step - 0.5).max(0.0) as usize;
    let end = (libm::ceil(gap.end / step - 0.5).max(0.0) as usize).min(t_fixed);
    (first < end).then(|| (first, end - 1))
}

pub fn simulate_background_clicks_with_rng<R: Rng + ?Sized>(
    video_id: &str,
    gt: &[GroundTruthSegment],
    num_classes: usize,
    duration_sec: f64,
    t_fixed: usize,
    rng: &mut R,
) -> Result<BackgroundClicks> {
    check_inputs(gt, num_classes, duration_sec, t_fixed)?;
    let min_len = duration_sec / t_fixed as f64;
    let mut clicks = Vec::new();
    let mut b = vec![ClickLabel::Unknown; t_fixed];
    for gap in background_gaps(gt, duration_sec) {
        if gap.len() < min_len {
            continue;
        }
        let Some((lo, hi)) = frames_in_gap(gap, duration_sec, t_fixed) else {
            continue;
        };
        let u: f64 = rng.random();
        let t_sec = gap.start + u * gap.len();
        let frame = map_time_to_frame(t_sec, duration_sec, t_fixed)?.clamp(lo, hi);
        b[frame] = ClickLabel::Background;
        clicks.push(SimulatedClick { t_sec, frame, gap });
    }
    let status = if clicks.is_empty() { ClickStatus::NoBackgroundGap } else { ClickStatus::Ok };
    let annotation = VideoAnnotation {
        video_id: video_id.into(),
        labels: label_vector(gt, num_classes),
        clicks: b,
        segments: Some(gt.to_vec()),
        action_clicks: None,
    };
    Ok(BackgroundClicks { annotation, clicks, status })
}

pub fn simulate_background_clicks(
    video_id: &str,
    gt: &[GroundTruthSegment],
    num_classes: usize,
    duration_sec: f64,
    t_fixed: usize,
    rng_seed: u64,
) -> Result<BackgroundClicks> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    simulate_background_clicks_with_rng(video_id, gt, num_classes, duration_sec, t_fixed, &mut rng)
}

/// One click per action instance, uniformly placed inside it.
pub fn simulate_action_clicks_with_rng<R: Rng + ?Sized>(
    video_id: &str,
    gt: &[GroundTruthSegment],
    num_classes: usize,
    duration_sec: f64,
    t_fixed: usize,
    rng: &mut R,
) -> Result<VideoAnnotation> {
    check_inputs(gt, num_classes, duration_sec, t_fixed)?;
    let mut clicks = Vec::with_capacity(gt.len());
    for s in gt {
        let u: f64 = rng.random();
        let t_sec = s.start_sec + u * (s.end_sec - s.start_sec);
        let frame = map_time_to_frame(t_sec, duration_sec, t_fixed)?;
        clicks.push(ActionClick { t_sec, frame, class_id: s.class_id });
    }
    Ok(VideoAnnotation {
        video_id: video_id.into(),
        labels: label_vector(gt, num_classes),
        clicks: vec![ClickLabel::Unknown; t_fixed],
        segments: Some(gt.to_vec()),
        action_clicks: Some(clicks),
    })
}

pub fn simulate_action_clicks(
    video_id: &str,
    gt: &[GroundTruthSegment],
    num_classes: usize,
    duration_sec: f64,
    t_fixed: usize,
    rng_seed: u64,
) -> Result<VideoAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    simulate_action_clicks_with_rng(video_id, gt, num_classes, duration_sec, t_fixed, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: f64, e: f64, c: usize) -> GroundTruthSegment {
        GroundTruthSegment { start_sec: s, end_sec: e, class_id: c }
    }

    #[test]
    fn single_action_yields_two_clicks() {
        let gt = [seg(10.0, 20.0, 1)];
        for seed in 0..50 {
            let r = simulate_background_clicks("v", &gt, 2, 30.0, 60, seed).unwrap();
            assert_eq!(r.clicks.len(), 2);
            assert!(r.clicks[0].t_sec >= 0.0 && r.clicks[0].t_sec < 10.0);
            assert!(r.clicks[1].t_sec >= 20.0 && r.clicks[1].t_sec <= 30.0);
            assert_eq!(r.annotation.clicked_frames().len(), 2);
            assert_eq!(r.annotation.labels, vec![0, 1, 0]);
            assert_eq!(r.status, ClickStatus::Ok);
        }
    }

    #[test]
    fn fully_covered_video_has_no_clicks() {
        let gt = [seg(0.0, 12.0, 1), seg(10.0, 30.0, 2)];
        let r = simulate_background_clicks("v", &gt, 2, 30.0, 60, 3).unwrap();
        assert!(r.clicks.is_empty());
        assert_eq!(r.status, ClickStatus::NoBackgroundGap);
        assert!(r.annotation.clicked_frames().is_empty());
    }

    #[test]
    fn sub_frame_gaps_receive_no_click() {
        // Grid step is 0.5 s; the 0.2 s gap between the actions is skipped.
        let gt = [seg(0.0, 10.0, 1), seg(10.2, 30.0, 1)];
        let r = simulate_background_clicks("v", &gt, 1, 30.0, 60, 0).unwrap();
        assert!(r.clicks.is_empty());
    }

    #[test]
    fn overlapping_segments_are_merged() {
        let merged = merge_segments(&[seg(5.0, 9.0, 1), seg(1.0, 6.0, 2), seg(12.0, 13.0, 1)]);
        assert_eq!(merged, vec![(1.0, 9.0), (12.0, 13.0)]);
    }

    #[test]
    fn action_clicks_one_per_instance() {
        let gt = [seg(10.0, 20.0, 2), seg(25.0, 28.0, 1), seg(40.0, 41.0, 2)];
        let a = simulate_action_clicks("v", &gt, 2, 60.0, 120, 9).unwrap();
        let clicks = a.action_clicks.unwrap();
        assert_eq!(clicks.len(), 3);
        for (c, s) in clicks.iter().zip(&gt) {
            assert!(c.t_sec >= s.start_sec && c.t_sec <= s.end_sec);
            assert_eq!(c.class_id, s.class_id);
        }
        let empty = simulate_action_clicks("v", &[], 2, 60.0, 120, 9).unwrap();
        assert!(empty.action_clicks.unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_annotation() {
        let gt = [seg(3.0, 7.5, 1), seg(20.0, 22.0, 2)];
        let a = simulate_background_clicks("v", &gt, 2, 40.0, 80, 77).unwrap();
        let b = simulate_background_clicks("v", &gt, 2, 40.0, 80, 77).unwrap();
        assert_eq!(a.annotation, b.annotation);
    }

    #[test]
    fn segment_past_duration_rejected() {
        assert!(simulate_background_clicks("v", &[seg(1.0, 50.0, 1)], 1, 40.0, 80, 0).is_err());
    }

    fn arb_segments() -> impl Strategy<Value = Vec<GroundTruthSegment>> {
        proptest::collection::vec((0.0f64..58.0, 0.1f64..10.0, 1usize..4), 0..6).prop_map(|v| {
            v.into_iter().map(|(s, l, c)| seg(s, (s + l).min(60.0), c)).collect()
        })
    }

    proptest! {
        #[test]
        fn clicks_never_land_inside_actions(gt in arb_segments(), seed in any::<u64>()) {
            let r = simulate_background_clicks("v", &gt, 3, 60.0, 120, seed).unwrap();
            for c in &r.clicks {
                for s in &gt {
                    prop_assert!(!(c.t_sec >= s.start_sec && c.t_sec < s.end_sec));
                    let (f0, f1) = s.frame_span(60.0, 120);
                    prop_assert!(!(c.frame >= f0 && c.frame < f1));
                }
            }
            let long_gaps = background_gaps(&gt, 60.0).iter().filter(|g| g.len() >= 0.5).count();
            prop_assert_eq!(r.clicks.len(), long_gaps);
        }
    }
}
