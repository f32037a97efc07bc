//! Toggle and hyperparameter sweeps over seeds.

use backtal_core::config::{InferenceConfig, Preset};
use backtal_core::eval::map_at;
use backtal_core::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::Dataset;
use crate::train::{self, TrainError};

/// Grid file: `base` is merged over the synthetic preset, each variant's
/// `set` is merged over `base`, and every variant runs once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    #[serde(default)]
    pub base: Value,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

fn default_thresholds() -> Vec<f64> {
    vec![0.3, 0.5, 0.7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub set: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub map: Vec<f64>,
    /// Mean `p_act - p_bg` over training videos before and after training.
    pub separation_gap_init: f64,
    pub separation_gap_trained: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_map: Vec<f64>,
    pub mean_gap_init: f64,
    pub mean_gap_trained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub thresholds: Vec<f64>,
    pub runs: Vec<RunResult>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == name)
    }
}

fn merge(dst: &mut Value, src: &Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                merge(d.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (d, s) if !s.is_null() => *d = s.clone(),
        _ => {}
    }
}

impl AblationGrid {
    pub fn config(&self, variant: &Variant, seed: u64) -> Result<TrainConfig, TrainError> {
        let mut v = serde_json::to_value(TrainConfig::preset(Preset::Synthetic)).expect("config serializes");
        merge(&mut v, &self.base);
        merge(&mut v, &variant.set);
        let mut cfg: TrainConfig =
            serde_json::from_value(v).map_err(|e| TrainError::Config(format!("variant {}: {e}", variant.name)))?;
        cfg.seed = seed;
        Ok(cfg)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

pub fn run_ablation(grid: &AblationGrid, train_set: &Dataset, test_set: &Dataset) -> Result<AblationReport, TrainError> {
    let videos = train_set.training_videos();
    let gts = test_set.ground_truth();
    let inference = InferenceConfig::default();
    let mut runs = Vec::new();
    for variant in &grid.variants {
        for &seed in &grid.seeds {
            let mut cfg = grid.config(variant, seed)?;
            cfg.t_fixed = train_set.t_fixed;
            let init = train::initial_params(&cfg, train_set.num_classes(), train_set.feature_dim())?;
            let separation_gap_init = train::mean_separation_gap(&init, &videos, &cfg)?;
            let out = train::train(&cfg, &videos, train_set.num_classes(), None)?;
            let separation_gap_trained = train::mean_separation_gap(&out.checkpoint.params, &videos, &cfg)?;
            let preds = crate::infer::predict(&out.checkpoint, &test_set.videos, &inference)?;
            let table = map_at(&preds, &gts, test_set.num_classes(), &grid.thresholds);
            runs.push(RunResult {
                variant: variant.name.clone(),
                seed,
                map: table.rows.iter().map(|r| r.map).collect(),
                separation_gap_init,
                separation_gap_trained,
                final_loss: out.log.last().map_or(f64::NAN, |r| r.report.total),
            });
        }
    }
    let summary = grid
        .variants
        .iter()
        .map(|v| {
            let rs: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v.name).collect();
            VariantSummary {
                variant: v.name.clone(),
                mean_map: (0..grid.thresholds.len()).map(|i| mean(rs.iter().map(|r| r.map[i]))).collect(),
                mean_gap_init: mean(rs.iter().map(|r| r.separation_gap_init)),
                mean_gap_trained: mean(rs.iter().map(|r| r.separation_gap_trained)),
            }
        })
        .collect();
    Ok(AblationReport { thresholds: grid.thresholds.clone(), runs, summary })
}

/// The component ablation: full model, clicks only, and the no-click baseline.
pub fn component_grid(seeds: Vec<u64>) -> AblationGrid {
    let off = |frame: bool| serde_json::json!({ "toggles": { "frame_loss": frame, "score_separation": false, "affinity": false } });
    AblationGrid {
        base: Value::Null,
        variants: vec![
            Variant { name: "baseline+clicks+sep+aff".into(), set: Value::Null },
            Variant { name: "baseline+clicks".into(), set: off(true) },
            Variant { name: "baseline".into(), set: off(false) },
        ],
        seeds,
        thresholds: default_thresholds(),
    }
}

pub fn runs_csv(report: &AblationReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("variant,seed");
    for t in &report.thresholds {
        write!(s, ",map@{t}").unwrap();
    }
    s.push_str(",gap_init,gap_trained,final_loss\n");
    for r in &report.runs {
        write!(s, "{},{}", r.variant, r.seed).unwrap();
        for m in &r.map {
            write!(s, ",{m}").unwrap();
        }
        writeln!(s, ",{},{},{}", r.separation_gap_init, r.separation_gap_trained, r.final_loss).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misspelled_keys_are_rejected() {
        let grid: AblationGrid =
            serde_json::from_str(r#"{"base": {"epoch": 3}, "variants": [{"name": "x", "set": {"toggles": {"afinity": false}}}], "seeds": [0]}"#).unwrap();
        let err = grid.config(&grid.variants[0], 0).unwrap_err().to_string();
        assert!(err.contains("epoch"), "{err}");
    }

    #[test]
    fn variant_overrides_merge_over_base() {
        let grid: AblationGrid = serde_json::from_str(
            r#"{"base": {"lambda": 0.5, "epochs": 3}, "variants": [{"name": "no-aff", "set": {"toggles": {"affinity": false}}}], "seeds": [4]}"#,
        )
        .unwrap();
        let cfg = grid.config(&grid.variants[0], 4).unwrap();
        assert_eq!((cfg.lambda, cfg.epochs, cfg.seed), (0.5, 3, 4));
        assert!(!cfg.toggles.affinity && cfg.toggles.score_separation);
        assert_eq!(cfg.hidden, TrainConfig::preset(Preset::Synthetic).hidden);
    }

    #[test]
    fn unknown_value_type_is_reported() {
        let grid: AblationGrid =
            serde_json::from_str(r#"{"variants": [{"name": "bad", "set": {"epochs": "many"}}], "seeds": [0]}"#).unwrap();
        assert!(grid.config(&grid.variants[0], 0).is_err());
    }
}
