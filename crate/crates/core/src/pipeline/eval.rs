//! Declutter and reconstruction evaluation loops.

use rayon::prelude::*;
use serde::Serialize;

use crate::cloud::remove_table;
use crate::error::{Error, Result};
use crate::fields::{
    chamfer_l1, gt_field, marching_cubes, scene_occupancy, volumetric_iou, GripperModel, SceneGT,
};
use crate::geom::GraspPose;
use crate::net::Model;
use crate::sim::{
    generate_scene, oracle_grasp, render_depth, sample_camera_with, scene_seed, SceneKind,
};

use super::select::{preprocess_view, select_grasp, ModelPerception, OraclePerception};
use super::train::load_model;
use super::{EvalGraspConfig, EvalReconConfig, SelectorKind};

pub(super) fn default_kind() -> SceneKind {
    SceneKind::Packed
}
pub(super) fn default_k() -> usize {
    3
}
pub(super) fn default_mc_resolution() -> usize {
    32
}
pub(super) fn default_chamfer_samples() -> usize {
    10_000
}
pub(super) fn default_iou_samples() -> usize {
    100_000
}

/// One grasp interaction in a declutter run.
#[derive(Clone, Debug, Serialize)]
pub struct TrialEntry {
    pub interaction: usize,
    pub pose: Option<GraspPose>,
    pub score: f64,
    pub resampled: bool,
    /// "success", "failure", or "no_grasp".
    pub outcome: String,
}

/// Per-scene declutter log.
#[derive(Clone, Debug, Serialize)]
pub struct SceneTrialLog {
    pub scene_index: usize,
    pub objects_total: usize,
    pub objects_removed: usize,
    pub attempts: usize,
    pub successes: usize,
    pub trials: Vec<TrialEntry>,
}

/// Aggregated declutter metrics: grasp success rate (successes/attempts) and
/// declutter rate (removed/present), plus the per-scene logs.
#[derive(Clone, Debug, Serialize)]
pub struct DeclutterReport {
    pub schema_version: u32,
    pub gsr: f64,
    pub dr: f64,
    pub scenes: Vec<SceneTrialLog>,
}

/// Maximum interactions per scene; the paper's rules (two consecutive
/// failures, five graspless observations) terminate far earlier in practice.
const MAX_INTERACTIONS: usize = 64;

fn declutter_one_scene(
    cfg: &EvalGraspConfig,
    model: Option<&Model>,
    scene_index: usize,
) -> Result<SceneTrialLog> {
    let base_seed = scene_seed(cfg.seed, scene_index);
    let scene = generate_scene(cfg.kind, cfg.k, base_seed)?;
    run_declutter_scene(
        scene,
        model,
        &cfg.camera,
        &cfg.grasp,
        &cfg.selection,
        base_seed,
        scene_index,
    )
}

/// Declutter one prebuilt scene: capture from a fresh random viewpoint,
/// select, adjudicate with the oracle, remove on success; terminate after
/// two consecutive failures or five graspless observations.
pub fn run_declutter_scene(
    mut scene: SceneGT,
    model: Option<&Model>,
    camera: &crate::sim::CameraConfig,
    grasp: &crate::geom::GraspConfig,
    selection: &super::SelectionConfig,
    base_seed: u64,
    scene_index: usize,
) -> Result<SceneTrialLog> {
    let objects_total = scene.primitives.len();
    let gripper = GripperModel::new(grasp.w_max, 0.002);

    let mut trials = Vec::new();
    let mut removed = 0usize;
    let mut attempts = 0usize;
    let mut successes = 0usize;
    let mut consecutive_failures = 0usize;
    let mut graspless_observations = 0usize;

    for interaction in 0..MAX_INTERACTIONS {
        if scene.primitives.is_empty() {
            break;
        }
        // The scene is captured once before each interaction, from a fresh
        // random viewpoint.
        let cam_seed = scene_seed(base_seed, 1000 + interaction);
        let cam = sample_camera_with(camera, cam_seed);
        let rendered = render_depth(&scene, &cam)?;
        let above_table = remove_table(&rendered, 0.002);
        let view = preprocess_view(&above_table, cam.position, selection)?;

        let selection = match (&view, model) {
            (None, _) => None,
            (Some(view), Some(model)) => {
                let fp = model.forward(view, cam_seed ^ 0xf0)?;
                let frozen = model.freeze(&fp, view);
                drop(fp);
                let perception = ModelPerception::new(model, &frozen);
                select_grasp(
                    view,
                    &perception,
                    grasp,
                    &gripper,
                    scene.table_height,
                    selection,
                    cam_seed,
                )?
            }
            (Some(view), None) => {
                let perception = OraclePerception::new(&scene, grasp, &gripper);
                select_grasp(
                    view,
                    &perception,
                    grasp,
                    &gripper,
                    scene.table_height,
                    selection,
                    cam_seed,
                )?
            }
        };

        match selection {
            None => {
                graspless_observations += 1;
                trials.push(TrialEntry {
                    interaction,
                    pose: None,
                    score: 0.0,
                    resampled: false,
                    outcome: "no_grasp".into(),
                });
                if graspless_observations >= 5 {
                    break;
                }
            }
            Some(g) => {
                graspless_observations = 0;
                attempts += 1;
                let outcome =
                    oracle_grasp(&scene, g.contact, g.normal, g.alpha, grasp, &gripper)?;
                if outcome.success {
                    successes += 1;
                    removed += 1;
                    consecutive_failures = 0;
                    scene = scene.without(outcome.object_id as usize);
                    trials.push(TrialEntry {
                        interaction,
                        pose: Some(g.pose),
                        score: g.score,
                        resampled: g.resampled,
                        outcome: "success".into(),
                    });
                } else {
                    consecutive_failures += 1;
                    trials.push(TrialEntry {
                        interaction,
                        pose: Some(g.pose),
                        score: g.score,
                        resampled: g.resampled,
                        outcome: "failure".into(),
                    });
                    if consecutive_failures >= 2 {
                        break;
                    }
                }
            }
        }
    }

    Ok(SceneTrialLog {
        scene_index,
        objects_total,
        objects_removed: removed,
        attempts,
        successes,
        trials,
    })
}

/// Declutter evaluation: per scene, capture -> select -> adjudicate with the
/// oracle -> remove on success, until the termination rules fire.
pub fn cmd_eval_grasp(cfg: &EvalGraspConfig) -> Result<DeclutterReport> {
    std::fs::create_dir_all(&cfg.out)?;
    super::write_config_echo(&cfg.out, cfg)?;
    let model = match (&cfg.selector, &cfg.checkpoint) {
        (SelectorKind::Model, Some(path)) => Some(load_model(path)?),
        (SelectorKind::Model, None) => {
            return Err(Error::Config("model selector requires a checkpoint".into()))
        }
        (SelectorKind::Oracle, _) => None,
    };

    let mut scenes: Vec<SceneTrialLog> = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| declutter_one_scene(cfg, model.as_ref(), i))
        .collect::<Result<_>>()?;
    scenes.sort_by_key(|s| s.scene_index);

    let attempts: usize = scenes.iter().map(|s| s.attempts).sum();
    let successes: usize = scenes.iter().map(|s| s.successes).sum();
    let total: usize = scenes.iter().map(|s| s.objects_total).sum();
    let removed: usize = scenes.iter().map(|s| s.objects_removed).sum();
    let report = DeclutterReport {
        schema_version: 1,
        gsr: if attempts > 0 { successes as f64 / attempts as f64 } else { 0.0 },
        dr: if total > 0 { removed as f64 / total as f64 } else { 0.0 },
        scenes,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(cfg.out.join("declutter_report.json"), json)?;
    Ok(report)
}

/// Per-scene reconstruction metrics.
#[derive(Clone, Debug, Serialize)]
pub struct ReconSceneEntry {
    pub scene_index: usize,
    pub chamfer_l1: Option<f64>,
    pub iou: f64,
    pub empty_mesh: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconReport {
    pub schema_version: u32,
    pub scenes: Vec<ReconSceneEntry>,
    pub mean_chamfer: Option<f64>,
    pub std_chamfer: Option<f64>,
    pub mean_iou: f64,
    pub std_iou: f64,
}

fn recon_one_scene(
    cfg: &EvalReconConfig,
    model: Option<&Model>,
    scene_index: usize,
) -> Result<ReconSceneEntry> {
    let base_seed = scene_seed(cfg.seed.wrapping_add(0x5cee), scene_index);
    let scene = generate_scene(cfg.kind, cfg.k, base_seed)?;
    let gt = gt_field(&scene);
    let ws = scene.workspace;

    // Ground-truth mesh and field.
    let gt_scene_occ = |x| scene_occupancy(&gt, x);
    let mesh_gt = marching_cubes(gt_scene_occ, ws, cfg.mc_resolution, 0.5)?;

    let entry = match model {
        None => {
            // Pipeline self-check: the ground-truth field plays the model.
            let mesh_pred = marching_cubes(gt_scene_occ, ws, cfg.mc_resolution, 0.5)?;
            let iou = volumetric_iou(gt_scene_occ, gt_scene_occ, ws, cfg.iou_samples, base_seed)?;
            let chamfer = if mesh_pred.is_empty() || mesh_gt.is_empty() {
                None
            } else {
                Some(chamfer_l1(&mesh_pred, &mesh_gt, cfg.chamfer_samples, base_seed)?)
            };
            ReconSceneEntry {
                scene_index,
                chamfer_l1: chamfer,
                iou,
                empty_mesh: mesh_pred.is_empty(),
            }
        }
        Some(model) => {
            let cam = sample_camera_with(&cfg.camera, scene_seed(base_seed, 7));
            let rendered = render_depth(&scene, &cam)?;
            let above = remove_table(&rendered, 0.002);
            let Some(view) = preprocess_view(&above, cam.position, &cfg.selection)? else {
                return Ok(ReconSceneEntry {
                    scene_index,
                    chamfer_l1: None,
                    iou: 0.0,
                    empty_mesh: true,
                });
            };
            let fp = model.forward(&view, base_seed ^ 0x9)?;
            let frozen = model.freeze(&fp, &view);
            drop(fp);
            let field = crate::net::ModelField { model, frozen: &frozen };
            let pred_occ = |x| scene_occupancy(&field, x);
            let mesh_pred = marching_cubes(&pred_occ, ws, cfg.mc_resolution, 0.5)?;
            let iou = volumetric_iou(&pred_occ, gt_scene_occ, ws, cfg.iou_samples, base_seed)?;
            let chamfer = if mesh_pred.is_empty() || mesh_gt.is_empty() {
                None
            } else {
                Some(chamfer_l1(&mesh_pred, &mesh_gt, cfg.chamfer_samples, base_seed)?)
            };
            ReconSceneEntry {
                scene_index,
                chamfer_l1: chamfer,
                iou,
                empty_mesh: mesh_pred.is_empty(),
            }
        }
    };
    Ok(entry)
}

/// Reconstruction evaluation: scene occupancy from the per-instance decoder
/// maxima, meshed and compared against ground truth.
pub fn cmd_eval_recon(cfg: &EvalReconConfig) -> Result<ReconReport> {
    std::fs::create_dir_all(&cfg.out)?;
    super::write_config_echo(&cfg.out, cfg)?;
    let model = cfg.checkpoint.as_ref().map(|p| load_model(p)).transpose()?;

    let mut scenes: Vec<ReconSceneEntry> = (0..cfg.scenes)
        .into_par_iter()
        .map(|i| recon_one_scene(cfg, model.as_ref(), i))
        .collect::<Result<_>>()?;
    scenes.sort_by_key(|s| s.scene_index);

    let chamfers: Vec<f64> = scenes.iter().filter_map(|s| s.chamfer_l1).collect();
    let ious: Vec<f64> = scenes.iter().map(|s| s.iou).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let std = |v: &[f64], m: f64| {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64).sqrt()
    };
    let mean_chamfer = (!chamfers.is_empty()).then(|| mean(&chamfers));
    let report = ReconReport {
        schema_version: 1,
        mean_chamfer,
        std_chamfer: mean_chamfer.map(|m| std(&chamfers, m)),
        mean_iou: mean(&ious),
        std_iou: std(&ious, mean(&ious)),
        scenes,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(cfg.out.join("recon_report.json"), json)?;
    Ok(report)
}
