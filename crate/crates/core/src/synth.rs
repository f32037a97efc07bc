//! Desk-scale synthetic feature sequences with known action segments.
//!
//! Each class (and the background) owns a unit-norm mean vector; the means are
//! pairwise at least 60 degrees apart. Frames inside an action instance are
//! drawn around that class's mean, all other frames around the background mean.
//! Segments are laid out on the frame grid so frame labels are unambiguous.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clicks::simulate_background_clicks_with_rng;
use crate::data::{frame_to_time, FeatureSequence, GroundTruthSegment, VideoAnnotation};
use crate::error::{CoreError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub t_fixed: usize,
    pub duration_sec: f64,
    pub noise_sigma: f64,
    pub max_segments: usize,
    /// Segment length range in frames, inclusive.
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    /// Minimum number of background frames between two instances.
    pub min_gap_frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 20,
            n_test: 10,
            num_classes: 3,
            feature_dim: 16,
            t_fixed: 128,
            duration_sec: 64.0,
            noise_sigma: 0.1,
            max_segments: 4,
            min_segment_frames: 8,
            max_segment_frames: 24,
            min_gap_frames: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub features: FeatureSequence,
    pub annotation: VideoAnnotation,
    pub duration_sec: f64,
    /// Class of every frame; 0 for background.
    pub frame_classes: Vec<usize>,
}

impl SynthVideo {
    pub fn segments(&self) -> &[GroundTruthSegment] {
        self.annotation.segments.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Row 0 is the background mean, row `c` the mean of class `c`.
    pub means: Matrix,
    pub train: Vec<SynthVideo>,
    pub test: Vec<SynthVideo>,
}

/// Minimum angle between any two means, as a cosine bound.
const MAX_MEAN_COSINE: f64 = 0.5;

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn sample_means<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Result<Matrix> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while means.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(CoreError::invalid(format!(
                "could not place {count} means {dim}-dimensional with pairwise angle >= 60 degrees"
            )));
        }
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = crate::math::norm(&v);
        if n < 1e-6 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / n).collect();
        if means.iter().all(|m| crate::math::dot(m, &v) <= MAX_MEAN_COSINE) {
            means.push(v);
        }
    }
    let rounded: Vec<Vec<f64>> = means.into_iter().map(|m| m.into_iter().map(round_f32).collect()).collect();
    Matrix::from_rows(&rounded)
}

/// Frame spans `(start, end_exclusive, class)` packed without overlap.
fn layout_segments<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<(usize, usize, usize)> {
    let mut n = rng.random_range(1..=cfg.max_segments.max(1));
    loop {
        let lengths: Vec<usize> =
            (0..n).map(|_| rng.random_range(cfg.min_segment_frames..=cfg.max_segment_frames)).collect();
        let needed = lengths.iter().sum::<usize>() + (n - 1) * cfg.min_gap_frames;
        if needed > cfg.t_fixed {
            if n > 1 {
                n -= 1;
                continue;
            }
            // A single instance always fits once clipped to the grid.
            let len = lengths[0].min(cfg.t_fixed);
            let start = rng.random_range(0..=cfg.t_fixed - len);
            let class = rng.random_range(1..=cfg.num_classes);
            return alloc::vec![(start, start + len, class)];
        }
        let slack = cfg.t_fixed - needed;
        let mut cuts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
        cuts.sort_unstable();
        let mut out = Vec::with_capacity(n);
        let mut cursor = 0usize;
        let mut prev_cut = 0usize;
        for (i, (&len, &cut)) in lengths.iter().zip(&cuts).enumerate() {
            cursor += cut - prev_cut;
            prev_cut = cut;
            if i > 0 {
                cursor += cfg.min_gap_frames;
            }
            let class = rng.random_range(1..=cfg.num_classes);
            out.push((cursor, cursor + len, class));
            cursor += len;
        }
        return out;
    }
}

fn generate_video<R: Rng>(
    video_id: String,
    cfg: &SynthConfig,
    means: &Matrix,
    rng: &mut R,
) -> Result<SynthVideo> {
    let spans = layout_segments(cfg, rng);
    let mut frame_classes = alloc::vec![0usize; cfg.t_fixed];
    for &(s, e, c) in &spans {
        for f in &mut frame_classes[s..e] {
            *f = c;
        }
    }
    let mut data = Matrix::zeros(cfg.t_fixed, cfg.feature_dim);
    for (t, &c) in frame_classes.iter().enumerate() {
        let mean = means.row(c);
        for (x, &mu) in data.row_mut(t).iter_mut().zip(mean) {
            let noise: f64 = if cfg.noise_sigma > 0.0 {
                cfg.noise_sigma * Distribution::<f64>::sample(&StandardNormal, rng)
            } else {
                0.0
            };
            *x = round_f32(mu + noise);
        }
    }
    let segments: Vec<GroundTruthSegment> = spans
        .iter()
        .map(|&(s, e, c)| GroundTruthSegment {
            start_sec: frame_to_time(s, cfg.duration_sec, cfg.t_fixed),
            end_sec: frame_to_time(e, cfg.duration_sec, cfg.t_fixed),
            class_id: c,
        })
        .collect();
    let clicks = simulate_background_clicks_with_rng(
        &video_id,
        &segments,
        cfg.num_classes,
        cfg.duration_sec,
        cfg.t_fixed,
        rng,
    )?;
    let fps = cfg.t_fixed as f64 / cfg.duration_sec;
    Ok(SynthVideo {
        features: FeatureSequence::new(video_id, data, fps)?,
        annotation: clicks.annotation,
        duration_sec: cfg.duration_sec,
        frame_classes,
    })
}

pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.num_classes < 2 {
        return Err(CoreError::invalid("synthetic data needs at least 2 classes"));
    }
    if cfg.feature_dim < 4 {
        return Err(CoreError::invalid("synthetic data needs feature_dim >= 4"));
    }
    if cfg.t_fixed < 2 || !(cfg.duration_sec > 0.0) {
        return Err(CoreError::invalid("grid length must be >= 2 and duration positive"));
    }
    if cfg.min_segment_frames == 0 || cfg.min_segment_frames > cfg.max_segment_frames {
        return Err(CoreError::invalid("invalid segment length range"));
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(CoreError::invalid("noise sigma must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = sample_means(cfg.num_classes + 1, cfg.feature_dim, &mut rng)?;
    let train = (0..cfg.n_train)
        .map(|i| generate_video(format!("train_{i:04}"), cfg, &means, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..cfg.n_test)
        .map(|i| generate_video(format!("test_{i:04}"), cfg, &means, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset { means, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_frames_equal_means_and_nearest_mean_is_perfect() {
        let cfg = SynthConfig { noise_sigma: 0.0, n_train: 6, n_test: 2, ..SynthConfig::default() };
        let ds = generate_synthetic_dataset(&cfg).unwrap();
        for v in ds.train.iter().chain(&ds.test) {
            for (t, &c) in v.frame_classes.iter().enumerate() {
                assert_eq!(v.features.frame(t), ds.means.row(c));
                let best = (0..ds.means.rows())
                    .max_by(|&a, &b| {
                        crate::math::dot(ds.means.row(a), v.features.frame(t))
                            .total_cmp(&crate::math::dot(ds.means.row(b), v.features.frame(t)))
                    })
                    .unwrap();
                assert_eq!(best, c);
            }
        }
    }

    #[test]
    fn means_are_unit_norm_and_well_separated() {
        let ds = generate_synthetic_dataset(&SynthConfig { n_train: 0, n_test: 0, ..SynthConfig::default() })
            .unwrap();
        for a in 0..ds.means.rows() {
            assert!((crate::math::norm(ds.means.row(a)) - 1.0).abs() < 1e-6);
            for b in 0..a {
                assert!(crate::math::dot(ds.means.row(a), ds.means.row(b)) <= 0.5 + 1e-6);
            }
        }
    }

    #[test]
    fn segments_are_disjoint_and_in_range() {
        let cfg = SynthConfig { n_train: 40, n_test: 0, seed: 5, ..SynthConfig::default() };
        let ds = generate_synthetic_dataset(&cfg).unwrap();
        for v in &ds.train {
            let segs = v.segments();
            assert!((1..=4).contains(&segs.len()));
            for (i, a) in segs.iter().enumerate() {
                assert!(a.start_sec >= 0.0 && a.end_sec <= cfg.duration_sec);
                for b in &segs[i + 1..] {
                    assert!(a.end_sec <= b.start_sec || b.end_sec <= a.start_sec);
                }
            }
            v.annotation.validate(cfg.num_classes, cfg.t_fixed).unwrap();
            for t in v.annotation.clicked_frames() {
                assert_eq!(v.frame_classes[t], 0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig { n_train: 3, n_test: 1, ..SynthConfig::default() };
        let a = generate_synthetic_dataset(&cfg).unwrap();
        let b = generate_synthetic_dataset(&cfg).unwrap();
        assert_eq!(a.means, b.means);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.annotation, y.annotation);
        }
    }

    #[test]
    fn infeasible_packing_falls_back_to_fewer_segments() {
        let cfg = SynthConfig {
            t_fixed: 30,
            duration_sec: 15.0,
            min_segment_frames: 12,
            max_segment_frames: 14,
            n_train: 20,
            n_test: 0,
            ..SynthConfig::default()
        };
        let ds = generate_synthetic_dataset(&cfg).unwrap();
        for v in &ds.train {
            assert!(v.segments().len() <= 2);
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(generate_synthetic_dataset(&SynthConfig { num_classes: 1, ..SynthConfig::default() }).is_err());
        assert!(generate_synthetic_dataset(&SynthConfig { feature_dim: 3, ..SynthConfig::default() }).is_err());
    }
}
