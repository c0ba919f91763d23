//! Desk-scale training: per-scene steps with observation augmentation and
//! label co-rotation, Hungarian-matched losses, validation affordance F1,
//! and early stopping on its plateau.

use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::{
    augment, augment_rotation_angle, statistical_outlier_removal, voxel_downsample, AugmentConfig,
    PointCloud, TABLE_ID,
};
use crate::error::{Error, Result};
use crate::geom::RotMat;
use crate::losses::{backward_params, match_forward, total_loss, TrainingLabels};
use crate::net::checkpoint::{self, CheckpointMeta};
use crate::net::optim::{AdamW, OptimConfig};
use crate::net::Model;
use crate::sim::dataset::read_dataset;
use crate::sim::LabeledScene;

use super::TrainConfig;

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub best_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
}

/// Build the network input and matched labels for one scene: optional
/// augmentation (labels co-rotated with the cloud), denoising, downsampling
/// to the contact grid, and per-step subsampling of the supervision sets.
pub fn prepare_step(
    scene: &LabeledScene,
    cfg: &TrainConfig,
    step_seed: u64,
    augment_on: bool,
) -> Result<Option<(PointCloud, TrainingLabels)>> {
    let mut cloud = scene.cloud.clone();
    let mut rot = RotMat::IDENTITY;
    if augment_on && cfg.augment.enabled {
        let aug = AugmentConfig {
            noise_sigma: cfg.augment.noise_sigma,
            erase_cell: cfg.augment.erase_cell,
            erase_prob: cfg.augment.erase_prob,
            elastic: cfg.augment.elastic,
            seed: step_seed,
        };
        rot = RotMat::rot_z(augment_rotation_angle(&aug));
        cloud = augment(&cloud, &aug)?;
    }
    if cloud.is_empty() {
        return Ok(None);
    }
    let denoised = if cloud.len() > 16 {
        statistical_outlier_removal(&cloud, 16, 2.0)?
    } else {
        cloud
    };
    if denoised.is_empty() {
        return Ok(None);
    }
    let mut down = voxel_downsample(&denoised, cfg.downsample_cell)?;
    // Drop stray table-labeled points so every input point has an instance.
    if let Some(ids) = down.instance_ids.clone() {
        let keep: Vec<bool> = ids.iter().map(|&i| i != TABLE_ID).collect();
        if keep.iter().any(|k| !k) {
            down = down.filter(&keep);
        }
    }
    if down.len() < 8 {
        return Ok(None);
    }

    let point_instance = down
        .instance_ids
        .clone()
        .ok_or_else(|| Error::Data("scene cloud lacks instance labels".into()))?;
    let instance_classes: Vec<u32> =
        scene.scene.primitives.iter().map(|p| p.class_id).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(step_seed ^ 0x51ab);
    let occ_total = scene.occupancy.len();
    let n_occ = cfg.occ_per_step.min(occ_total);
    let mut occ_points = Vec::with_capacity(n_occ);
    let mut occ_labels = Vec::with_capacity(n_occ);
    for _ in 0..n_occ {
        let s = &scene.occupancy[rng.gen_range(0..occ_total)];
        occ_points.push(rot.mul_vec(s.position));
        occ_labels.push(s.inside.clone());
    }
    let mut contacts = Vec::new();
    let mut contact_instance = Vec::new();
    let mut contact_success = Vec::new();
    let mut contact_width = Vec::new();
    if !scene.grasps.is_empty() {
        let n_contacts = cfg.contacts_per_step.min(scene.grasps.len());
        for _ in 0..n_contacts {
            let g = &scene.grasps[rng.gen_range(0..scene.grasps.len())];
            contacts.push(rot.mul_vec(g.contact));
            contact_instance.push(g.object_id);
            contact_success.push(g.success.clone());
            contact_width.push(g.width.clamp(0.0, cfg.net.w_max));
        }
    }

    Ok(Some((
        down,
        TrainingLabels {
            point_instance,
            instance_classes,
            occ_points,
            occ_labels,
            contacts,
            contact_instance,
            contact_success,
            contact_width,
        },
    )))
}

/// Affordance F1 at threshold 0.5 over every stored contact of the given
/// scenes, predictions taken from each contact's matched query.
pub fn validate_f1(model: &Model, scenes: &[&LabeledScene], cfg: &TrainConfig) -> Result<f64> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (si, scene) in scenes.iter().enumerate() {
        let Some((cloud, labels)) = prepare_step(scene, cfg, 0x7a1 ^ si as u64, false)? else {
            continue;
        };
        let fp_pass = model.forward(&cloud, 0xa17c ^ si as u64)?;
        let assignment = match_forward(&fp_pass, &labels)?;
        let frozen_all = model.freeze(&fp_pass, &cloud);
        let _ = frozen_all;
        for &(q, k) in &assignment.pairs {
            let idx: Vec<usize> = (0..scene.grasps.len())
                .filter(|&i| scene.grasps[i].object_id as usize == k)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let xs: Vec<_> = idx.iter().map(|&i| scene.grasps[i].contact).collect();
            let feats = model.interpolate_features(
                &fp_pass.bind,
                &xs,
                &fp_pass.tokens,
                &fp_pass.token_coords,
                &fp_pass.dense,
            );
            let rows = fp_pass.grasp_queries.gather_rows(&vec![q; xs.len()]);
            let anchors = vec![fp_pass.anchors[q]; xs.len()];
            let (aff, _) = model.decode_grasp(&fp_pass.bind, &xs, &anchors, &rows, &feats);
            let logits = aff.values();
            let na = model.cfg.n_alpha;
            for (j, &i) in idx.iter().enumerate() {
                for a in 0..na {
                    let pred = logits[j * na + a] > 0.0;
                    let truth = scene.grasps[i].success[a] > 0;
                    match (pred, truth) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
        }
    }
    if 2 * tp + fp + fn_ == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

#[derive(Serialize)]
struct StepLog<'a> {
    epoch: usize,
    step: usize,
    scene: usize,
    #[serde(flatten)]
    components: &'a crate::losses::LossComponents,
}

#[derive(Serialize)]
struct EpochLog {
    epoch: usize,
    mean_total: f64,
    val_f1: f64,
    lr: f64,
}

/// Train on a generated dataset, validate each epoch, early-stop on the
/// affordance F1 plateau, and write the best checkpoint plus a JSON-lines
/// metric log.
pub fn cmd_train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    std::fs::create_dir_all(&cfg.out)?;
    super::write_config_echo(&cfg.out, cfg)?;
    let (_manifest, scenes) = read_dataset(&cfg.dataset)?;
    if scenes.is_empty() {
        return Err(Error::Data("dataset has no scenes".into()));
    }

    let n_val = ((scenes.len() as f64 * cfg.val_frac).round() as usize)
        .clamp(1, scenes.len().saturating_sub(1).max(1));
    let n_train = scenes.len() - n_val.min(scenes.len() - 1);
    let (train_scenes, val_scenes) = scenes.split_at(n_train.max(1));
    let val_refs: Vec<&LabeledScene> = if val_scenes.is_empty() {
        vec![&scenes[0]]
    } else {
        val_scenes.iter().collect()
    };

    let mut model = Model::new(cfg.net.clone(), cfg.seed)?;
    let steps_per_epoch = train_scenes.len().max(1);
    let mut opt = AdamW::new(OptimConfig {
        lr: cfg.lr,
        warmup_steps: (cfg.warmup_epochs * steps_per_epoch as f64).round() as usize,
        total_steps: cfg.epochs * steps_per_epoch,
        ..Default::default()
    });

    let log_path = cfg.out.join("metrics.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);

    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.clone();
    let mut f1_history: Vec<f64> = Vec::new();
    let mut train_history: Vec<f64> = Vec::new();
    let mut epochs_run = 0usize;
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed ^ (epoch as u64) << 17);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut total_sum = 0.0;
        let mut total_count = 0usize;
        for &si in &order {
            let step_seed = crate::sim::scene_seed(cfg.seed, epoch * steps_per_epoch + si);
            let Some((cloud, labels)) = prepare_step(&train_scenes[si], cfg, step_seed, true)?
            else {
                continue;
            };
            let fp = model.forward(&cloud, step_seed ^ 0xa17)?;
            let assignment = match_forward(&fp, &labels)?;
            let (total, comps) = total_loss(&model, &fp, &labels, &assignment)?;
            let grads = backward_params(&fp, &total)?;
            drop(fp);
            opt.step(&mut model.params, &grads)?;
            total_sum += comps.total;
            total_count += 1;
            serde_json::to_writer(
                &mut log,
                &StepLog { epoch, step: global_step, scene: si, components: &comps },
            )
            .map_err(|e| Error::Data(e.to_string()))?;
            log.write_all(b"\n")?;
            global_step += 1;
        }

        let val_f1 = validate_f1(&model, &val_refs, cfg)?;
        f1_history.push(val_f1);
        let mean_total = if total_count > 0 { total_sum / total_count as f64 } else { 0.0 };
        train_history.push(mean_total);
        serde_json::to_writer(
            &mut log,
            &EpochLog { epoch, mean_total, val_f1, lr: opt.current_lr() },
        )
        .map_err(|e| Error::Data(e.to_string()))?;
        log.write_all(b"\n")?;
        log.flush()?;

        if val_f1 > best_f1 + 1e-4 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best_params = model.params.clone();
        } else if epoch >= best_epoch + cfg.patience {
            break;
        }
    }

    let mut metrics = std::collections::BTreeMap::new();
    metrics.insert("val_f1".to_string(), f1_history);
    metrics.insert("train_total".to_string(), train_history);
    let meta = CheckpointMeta {
        config: serde_json::to_value(&cfg.net).map_err(|e| Error::Data(e.to_string()))?,
        epoch: best_epoch,
        metrics,
    };
    let ckpt_path = cfg.out.join("model.ckpt");
    checkpoint::save(&ckpt_path, &best_params, &meta)?;

    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        best_f1: best_f1.max(0.0),
        best_epoch,
        epochs_run,
        train_scenes: train_scenes.len(),
        val_scenes: val_refs.len(),
    })
}

/// Load a model from a checkpoint written by [`cmd_train`].
pub fn load_model(path: &std::path::Path) -> Result<Model> {
    let (params, meta) = checkpoint::load(path)?;
    let cfg: crate::net::NetConfig =
        serde_json::from_value(meta.config).map_err(|e| Error::Data(e.to_string()))?;
    Model::from_parts(cfg, params)
}
