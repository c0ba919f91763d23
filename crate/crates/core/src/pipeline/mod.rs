//! End-to-end orchestration: dataset generation, desk-scale training, grasp
//! selection with the confidence cascade and implicit-surface fallback, the
//! declutter and reconstruction evaluations, and artifact export.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::dataset::{self, Manifest};
use crate::sim::{generate_labeled_scene, scene_seed, SceneGenConfig, SceneKind};

mod eval;
mod recon;
mod select;
mod train;

pub use eval::{
    cmd_eval_grasp, cmd_eval_recon, run_declutter_scene, DeclutterReport, ReconReport,
    SceneTrialLog,
};
pub use recon::cmd_reconstruct;
pub use select::{
    preprocess_view, select_grasp, ModelPerception, OraclePerception, Perception, SelectedGrasp,
    SelectionConfig,
};
pub use train::{cmd_train, load_model, prepare_step, validate_f1, TrainOutcome};

fn default_scenes() -> usize {
    10
}

/// `gen` subcommand settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub scene: SceneGenConfig,
}

fn default_epochs() -> usize {
    200
}
fn default_val_frac() -> f64 {
    0.1
}
fn default_patience() -> usize {
    10
}
fn default_lr() -> f64 {
    1e-3
}
fn default_occ_per_step() -> usize {
    64
}
fn default_contacts_per_step() -> usize {
    16
}
fn default_warmup_epochs() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_downsample_cell() -> f64 {
    0.002
}

/// Observation augmentation knobs for training (the per-step seed is derived
/// from the run seed).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainAugment {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "crate::cloud::default_noise_sigma_pub")]
    pub noise_sigma: f64,
    #[serde(default = "crate::cloud::default_erase_cell_pub")]
    pub erase_cell: f64,
    #[serde(default = "crate::cloud::default_erase_prob_pub")]
    pub erase_prob: f64,
    #[serde(default = "default_true")]
    pub elastic: bool,
}

impl Default for TrainAugment {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// `train` subcommand settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_warmup_epochs")]
    pub warmup_epochs: f64,
    #[serde(default = "default_occ_per_step")]
    pub occ_per_step: usize,
    #[serde(default = "default_contacts_per_step")]
    pub contacts_per_step: usize,
    #[serde(default = "default_downsample_cell")]
    pub downsample_cell: f64,
    #[serde(default)]
    pub net: crate::net::NetConfig,
    #[serde(default)]
    pub augment: TrainAugment,
}

/// Which scorer drives grasp selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Model,
    Oracle,
}

/// `eval-grasp` subcommand settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGraspConfig {
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub selector: SelectorKind,
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "crate::pipeline::eval::default_kind")]
    pub kind: SceneKind,
    #[serde(default = "crate::pipeline::eval::default_k")]
    pub k: usize,
    #[serde(default)]
    pub camera: crate::sim::CameraConfig,
    #[serde(default)]
    pub grasp: crate::geom::GraspConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
}

/// `eval-recon` subcommand settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReconConfig {
    /// None evaluates the ground-truth field as the "model" (pipeline
    /// self-check).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "crate::pipeline::eval::default_kind")]
    pub kind: SceneKind,
    #[serde(default = "crate::pipeline::eval::default_k")]
    pub k: usize,
    #[serde(default)]
    pub camera: crate::sim::CameraConfig,
    #[serde(default = "crate::pipeline::eval::default_mc_resolution")]
    pub mc_resolution: usize,
    #[serde(default = "crate::pipeline::eval::default_chamfer_samples")]
    pub chamfer_samples: usize,
    #[serde(default = "crate::pipeline::eval::default_iou_samples")]
    pub iou_samples: usize,
    #[serde(default)]
    pub selection: SelectionConfig,
}

/// `reconstruct` subcommand settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    #[serde(default = "crate::pipeline::eval::default_mc_resolution")]
    pub mc_resolution: usize,
    /// Viewpoint for normal orientation; defaults to high above the center.
    #[serde(default)]
    pub viewpoint: Option<crate::geom::Vec3>,
    #[serde(default)]
    pub selection: SelectionConfig,
}

/// Parse a JSON config file for one subcommand, rejecting unknown keys.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Every run echoes its fully-resolved config; re-running with the echo
/// reproduces the outputs bit-exactly.
pub fn write_config_echo<T: Serialize>(out_dir: &Path, config: &T) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(config).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(out_dir.join("config_echo.json"), json)?;
    Ok(())
}

/// Generate a dataset: n labeled scenes (parallel, per-scene derived seeds)
/// plus a manifest. Idempotent per seed — reruns produce byte-identical
/// files.
pub fn cmd_gen(cfg: &GenConfig) -> Result<Manifest> {
    std::fs::create_dir_all(&cfg.out)?;
    write_config_echo(&cfg.out, cfg)?;
    let scenes: Vec<(usize, crate::sim::LabeledScene)> = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| {
            let ls = generate_labeled_scene(&cfg.scene, scene_seed(cfg.seed, i))
                .map_err(|e| Error::Generation(format!("scene {i}: {e}")))?;
            Ok((i, ls))
        })
        .collect::<Result<_>>()?;

    let mut files = Vec::with_capacity(cfg.scenes);
    for (i, ls) in &scenes {
        let name = format!("scene_{i:05}.bin");
        dataset::write_record(&cfg.out.join(&name), ls)?;
        files.push(name);
    }
    let manifest = Manifest {
        version: 1,
        config: cfg.scene,
        base_seed: cfg.seed,
        count: cfg.scenes,
        files,
    };
    dataset::write_manifest(&cfg.out, &manifest)?;
    Ok(manifest)
}
