//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use backtal_core::clicks::{simulate_action_clicks_with_rng, simulate_background_clicks_with_rng, ClickStatus};
use backtal_core::config::{InferenceConfig, Preset};
use backtal_core::eval::{map_at, Prediction};
use backtal_core::gradcheck::{check_instance, random_instance, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use backtal_core::synth::{generate_synthetic_dataset, SynthConfig};
use backtal_core::{NetworkShape, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ablate::{self, AblationGrid};
use crate::dataset::{self, load_dataset};
use crate::formats::{self, DatasetManifest, ManifestEntry};
use crate::metrics::{self, Summary};
use crate::train;

#[derive(Debug, Parser)]
#[command(name = "backtal", version, about = "Background-click supervised temporal action localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (train/ and test/ splits).
    Synth(SynthArgs),
    /// Simulate click annotations from ground-truth segments.
    Simulate(SimulateArgs),
    /// Train a model and write checkpoint.bin, train_log.csv and run_meta.json.
    Train(TrainArgs),
    /// Localize actions in every video of a manifest.
    Infer(InferArgs),
    /// Compute AP / mAP tables for a prediction file.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Run a toggle / hyperparameter sweep over several seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed for means, segment layout, noise and clicks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of training videos.
    #[arg(long, default_value_t = 20)]
    pub n_train: usize,
    /// Number of test videos.
    #[arg(long, default_value_t = 10)]
    pub n_test: usize,
    /// Number of action classes.
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 128)]
    pub t_fixed: usize,
    /// Standard deviation of the additive feature noise.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClickMode {
    Background,
    Action,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Manifest whose annotations carry ground-truth segments.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Which kind of click to simulate.
    #[arg(long, value_enum, default_value_t = ClickMode::Background)]
    pub mode: ClickMode,
    /// Output directory for annotations/ and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// JSON training configuration; missing fields take the synthetic preset values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-video gradients.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, clap::Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of the videos to localize.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for predictions.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Video-level score a class needs to be localized.
    #[arg(long, default_value_t = 0.25)]
    pub tau_cls: f64,
    /// tIoU above which NMS suppresses a lower-scored segment.
    #[arg(long, default_value_t = 0.5)]
    pub nms_tiou: f64,
    /// Worker threads (one video per task).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// predictions.json written by `infer`.
    #[arg(long)]
    pub preds: PathBuf,
    /// Manifest whose annotations carry ground-truth segments.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated tIoU thresholds.
    #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9")]
    pub thresholds: String,
    /// Output directory for metrics.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    /// Number of random instances.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum relative error for PASS.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Optional directory for report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    /// JSON grid: {"base": {...}, "variants": [{"name", "set"}], "seeds": [...]}.
    #[arg(long)]
    pub grid: PathBuf,
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Test manifest.
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for per-video gradients.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Serialize)]
struct RunMeta<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: C,
    inputs: Vec<String>,
}

fn write_meta<C: Serialize>(dir: &Path, command: &str, seed: Option<u64>, config: C, inputs: &[&Path]) -> Result<()> {
    let meta = RunMeta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
    };
    formats::write_json(&dir.join("run_meta.json"), &meta)?;
    Ok(())
}

fn set_jobs(jobs: usize) {
    // Only the first call configures the global pool; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
}

/// Shape and training settings of the gradient-check instances.
pub fn gradcheck_setup() -> (NetworkShape, usize, TrainConfig) {
    let shape = NetworkShape { num_classes: 3, feature_dim: 8, embed_dim: 4, kernel_size: 3, hidden: [8, 8] };
    (shape, 16, TrainConfig { t_fixed: 16, d_emb: 4, h: 3, hidden: [8, 8], ..TrainConfig::default() })
}

pub fn gradcheck_suite(instances: usize, seed: u64, tolerance: f64) -> backtal_core::Result<Vec<GradCheckReport>> {
    let (shape, t, cfg) = gradcheck_setup();
    (0..instances as u64)
        .map(|i| check_instance(&random_instance(shape, t, &cfg, seed.wrapping_add(i))?, DEFAULT_STEP, tolerance))
        .collect()
}

/// Runs one command; `Ok(false)` means it finished but reported failure.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<bool> {
    let cfg = SynthConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        num_classes: a.classes,
        feature_dim: a.dim,
        t_fixed: a.t_fixed,
        noise_sigma: a.sigma,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic_dataset(&cfg)?;
    dataset::write_synthetic(&a.out, &ds, cfg.num_classes, cfg.t_fixed)?;
    write_meta(&a.out, "synth", Some(a.seed), &cfg, &[])?;
    println!("wrote {} train and {} test videos to {}", ds.train.len(), ds.test.len(), a.out.display());
    Ok(true)
}

fn simulate(a: SimulateArgs) -> Result<bool> {
    let (m, root) = formats::load_manifest(&a.manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut entries = Vec::with_capacity(m.videos.len());
    let mut total_clicks = 0usize;
    for v in &m.videos {
        let ann = formats::load_annotation(&root.join(&v.annotation_path))?;
        let gt = ann.segments.with_context(|| format!("{}: annotation has no ground-truth segments", v.video_id))?;
        let out_ann = match a.mode {
            ClickMode::Background => {
                let r = simulate_background_clicks_with_rng(&v.video_id, &gt, m.num_classes(), v.duration_sec, m.t_fixed, &mut rng)?;
                if r.status == ClickStatus::NoBackgroundGap {
                    eprintln!("warning: {} has no background gap; no clicks", v.video_id);
                }
                total_clicks += r.clicks.len();
                r.annotation
            }
            ClickMode::Action => {
                let ann = simulate_action_clicks_with_rng(&v.video_id, &gt, m.num_classes(), v.duration_sec, m.t_fixed, &mut rng)?;
                total_clicks += ann.action_clicks.as_ref().map_or(0, Vec::len);
                ann
            }
        };
        let annotation_path = format!("annotations/{}.json", v.video_id);
        formats::write_json(&a.out.join(&annotation_path), &out_ann)?;
        let feature = root.join(&v.feature_path);
        let feature = fs::canonicalize(&feature).with_context(|| feature.display().to_string())?;
        entries.push(ManifestEntry {
            video_id: v.video_id.clone(),
            feature_path: feature.display().to_string(),
            annotation_path,
            duration_sec: v.duration_sec,
        });
    }
    let out_manifest = DatasetManifest { class_names: m.class_names.clone(), videos: entries, t_fixed: m.t_fixed };
    formats::write_json(&a.out.join("manifest.json"), &out_manifest)?;
    let mode = match a.mode {
        ClickMode::Background => "background",
        ClickMode::Action => "action",
    };
    write_meta(&a.out, "simulate", Some(a.seed), serde_json::json!({ "mode": mode }), &[&a.manifest])?;
    println!("simulated {total_clicks} {mode} clicks for {} videos", m.videos.len());
    Ok(true)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else { return Ok(TrainConfig::preset(Preset::Synthetic)) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let user: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let seed = user.get("seed").and_then(serde_json::Value::as_u64).unwrap_or(0);
    let grid = AblationGrid { base: user, variants: vec![], seeds: vec![], thresholds: vec![] };
    let cfg = grid.config(&ablate::Variant { name: path.display().to_string(), set: serde_json::Value::Null }, seed)?;
    cfg.validate().map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<bool> {
    set_jobs(a.jobs);
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = load_dataset(&a.manifest)?;
    cfg.t_fixed = ds.t_fixed;
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let out = train::train(&cfg, &ds.training_videos(), ds.num_classes(), Some(&a.out))?;
    formats::save_checkpoint(&a.out.join("checkpoint.bin"), &out.checkpoint)?;
    formats::write_atomic(&a.out.join("train_log.csv"), train::log_csv(&out.log).as_bytes())?;
    let mut inputs: Vec<&Path> = vec![&a.manifest];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    write_meta(&a.out, "train", Some(cfg.seed), &cfg, &inputs)?;
    let first = out.log.first().map_or(f64::NAN, |r| r.report.total);
    let last = out.log.last().map_or(f64::NAN, |r| r.report.total);
    println!("{} iterations, total loss {first:.4} -> {last:.4}", out.log.len());
    Ok(true)
}

fn infer(a: InferArgs) -> Result<bool> {
    set_jobs(a.jobs);
    let ck = formats::load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest)?;
    if ds.t_fixed != ck.t_fixed || ds.num_classes() != ck.params.shape.num_classes || ds.feature_dim() != ck.params.shape.feature_dim {
        bail!("checkpoint (C, T, D_in) does not match the manifest");
    }
    let cfg = InferenceConfig { tau_cls: a.tau_cls, nms_tiou: a.nms_tiou, ..InferenceConfig::default() };
    let preds = crate::infer::predict(&ck, &ds.videos, &cfg)?;
    formats::write_json(&a.out.join("predictions.json"), &preds)?;
    write_meta(&a.out, "infer", None, &cfg, &[&a.checkpoint, &a.manifest])?;
    println!("{} detections in {} videos", preds.len(), ds.videos.len());
    Ok(true)
}

fn eval(a: EvalArgs) -> Result<bool> {
    set_jobs(a.jobs);
    let thresholds = metrics::parse_thresholds(&a.thresholds).map_err(anyhow::Error::msg)?;
    let preds: Vec<Prediction> = formats::read_json(&a.preds)?;
    let ds = load_dataset(&a.manifest)?;
    let gts = ds.ground_truth();
    if let Some(p) = preds.iter().find(|p| p.class == 0 || p.class > ds.num_classes()) {
        bail!("prediction for {} has class {} outside 1..={}", p.video_id, p.class, ds.num_classes());
    }
    let table = map_at(&preds, &gts, ds.num_classes(), &thresholds);
    let csv = metrics::table_csv(&table, &ds.class_names);
    formats::write_atomic(&a.out.join("metrics.csv"), csv.as_bytes())?;
    let summary = Summary {
        class_names: &ds.class_names,
        num_predictions: preds.len(),
        num_ground_truth: gts.len(),
        average_map: table.average_map,
        table: &table,
    };
    formats::write_json(&a.out.join("summary.json"), &summary)?;
    write_meta(&a.out, "eval", None, serde_json::json!({ "thresholds": thresholds }), &[&a.preds, &a.manifest])?;
    print!("{csv}");
    Ok(true)
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let reports = gradcheck_suite(a.instances, a.seed, a.tolerance)?;
    let mut ok = true;
    for (i, r) in reports.iter().enumerate() {
        let parts: Vec<String> =
            r.components.iter().map(|c| format!("{}={:.2e}", c.component.name(), c.max_rel_error())).collect();
        println!("instance {i:>3}: {} {}", parts.join(" "), if r.passed() { "ok" } else { "FAIL" });
        ok &= r.passed();
    }
    let worst = reports.iter().map(GradCheckReport::max_rel_error).fold(0.0, f64::max);
    if let Some(dir) = &a.out {
        formats::write_json(&dir.join("report.json"), &reports)?;
        write_meta(dir, "gradcheck", Some(a.seed), serde_json::json!({ "instances": a.instances, "tolerance": a.tolerance }), &[])?;
    }
    println!("{}: max relative error {worst:.3e} (tolerance {:.0e})", if ok { "PASS" } else { "FAIL" }, a.tolerance);
    Ok(ok)
}

fn ablate_cmd(a: AblateArgs) -> Result<bool> {
    set_jobs(a.jobs);
    let grid: AblationGrid = formats::read_json(&a.grid)?;
    let train_set = load_dataset(&a.train)?;
    let test_set = load_dataset(&a.test)?;
    let report = ablate::run_ablation(&grid, &train_set, &test_set)?;
    formats::write_atomic(&a.out.join("runs.csv"), ablate::runs_csv(&report).as_bytes())?;
    formats::write_json(&a.out.join("summary.json"), &report)?;
    write_meta(&a.out, "ablate", None, &grid, &[&a.grid, &a.train, &a.test])?;
    for s in &report.summary {
        println!("{:<28} mAP {:?}  gap {:.3} -> {:.3}", s.variant, s.mean_map, s.mean_gap_init, s.mean_gap_trained);
    }
    Ok(true)
}
