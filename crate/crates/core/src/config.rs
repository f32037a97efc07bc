use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::network::NetworkShape;

/// Switches for the optional parts of the objective and network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModuleToggles {
    /// Cross-entropy on clicked background frames.
    pub frame_loss: bool,
    pub score_separation: bool,
    /// Affinity mask in the convolutions plus the affinity loss.
    pub affinity: bool,
    /// Attention-weight supervision at clicked frames (ablation variant).
    pub weight_supervision: bool,
    /// Second pass over attention-filtered features.
    pub suppression: bool,
}

impl Default for ModuleToggles {
    fn default() -> Self {
        ModuleToggles { frame_loss: true, score_separation: true, affinity: true, weight_supervision: false, suppression: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub beta: f64,
    pub tau_same: f64,
    pub tau_diff: f64,
    pub k_ratio: f64,
    pub t_fixed: usize,
    pub d_emb: usize,
    /// Temporal kernel size, shared by the convolutions and the affinity neighbourhood.
    pub h: usize,
    pub hidden: [usize; 2],
    pub seed: u64,
    pub toggles: ModuleToggles,
    pub adam: AdamSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 100,
            lambda: 1.0,
            beta: 0.8,
            tau_same: 0.5,
            tau_diff: 0.1,
            k_ratio: 0.125,
            t_fixed: 750,
            d_emb: 32,
            h: 3,
            hidden: [512, 512],
            seed: 0,
            toggles: ModuleToggles::default(),
            adam: AdamSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Thumos14,
    ActivityNet12,
    Hacs,
    /// Desk-scale synthetic data from [`crate::synth`].
    Synthetic,
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        let base = TrainConfig::default();
        match p {
            Preset::Thumos14 => TrainConfig { t_fixed: 750, epochs: 100, ..base },
            Preset::ActivityNet12 => TrainConfig { t_fixed: 100, epochs: 25, ..base },
            Preset::Hacs => TrainConfig { t_fixed: 200, epochs: 8, ..base },
            Preset::Synthetic => TrainConfig { t_fixed: 128, epochs: 100, hidden: [256, 256], ..base },
        }
    }

    /// Number of frames aggregated per class, `floor(k_ratio * T)`.
    pub fn k(&self) -> usize {
        libm::floor(self.k_ratio * self.t_fixed as f64) as usize
    }

    pub fn network_shape(&self, num_classes: usize, feature_dim: usize) -> NetworkShape {
        NetworkShape { num_classes, feature_dim, embed_dim: self.d_emb, kernel_size: self.h, hidden: self.hidden }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.lr, self.weight_decay, self.lambda, self.beta];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(CoreError::invalid("lr, weight_decay, lambda and beta must be non-negative"));
        }
        if self.batch_size == 0 || self.t_fixed < 2 || self.d_emb == 0 {
            return Err(CoreError::invalid("batch_size, d_emb must be positive and t_fixed >= 2"));
        }
        if self.k() < 1 || self.k() > self.t_fixed {
            return Err(CoreError::invalid(alloc::format!("k = floor({} * {}) must lie in [1, T]", self.k_ratio, self.t_fixed)));
        }
        if self.h % 2 == 0 || self.h > self.t_fixed {
            return Err(CoreError::invalid("h must be odd and at most T"));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(CoreError::invalid("invalid Adam settings"));
        }
        self.network_shape(1, 1).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub tau_cls: f64,
    pub seg_thresholds: alloc::vec::Vec<f64>,
    pub nms_tiou: f64,
    pub inflation: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            tau_cls: 0.25,
            seg_thresholds: (1..=10).map(|i| i as f64 * 0.05).collect(),
            nms_tiou: 0.5,
            inflation: 0.25,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.lr, c.weight_decay, c.d_emb), (16, 1e-4, 5e-4, 32));
        assert_eq!((c.lambda, c.beta, c.tau_same, c.tau_diff), (1.0, 0.8, 0.5, 0.1));
        assert_eq!(c.k(), 93);
        assert_eq!(TrainConfig::preset(Preset::Synthetic).k(), 16);
        assert_eq!(TrainConfig::preset(Preset::ActivityNet12).k(), 12);
        assert_eq!(TrainConfig::preset(Preset::Hacs).epochs, 8);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_zero_k_and_even_kernel() {
        assert!(TrainConfig { k_ratio: 0.01, t_fixed: 16, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { h: 4, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn default_threshold_sweep() {
        let c = InferenceConfig::default();
        assert_eq!(c.seg_thresholds.len(), 10);
        assert!((c.seg_thresholds[0] - 0.05).abs() < 1e-15 && (c.seg_thresholds[9] - 0.5).abs() < 1e-15);
    }
}
