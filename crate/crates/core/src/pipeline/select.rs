//! Grasp selection: preprocessing, per-contact affordance scoring through a
//! perception backend (the network or the analytic oracle), the confidence
//! cascade, collision filtering, and the implicit-surface resampling
//! fallback.

use serde::{Deserialize, Serialize};

use crate::cloud::{estimate_normals, statistical_outlier_removal, voxel_downsample, PointCloud};
use crate::error::Result;
use crate::fields::{
    check_grasp_collision, gt_field, resample_surface, GripperModel, GtField, OccupancyField,
    SceneGT,
};
use crate::geom::{approach_angles, pose_at_angle, GraspConfig, GraspPose, UnitVec3, Vec3};
use crate::net::{FrozenScene, Model, ModelField};
use crate::sim::oracle_grasp_all_angles;

fn default_cascade() -> Vec<f64> {
    vec![0.9, 0.8, 0.7]
}
fn default_outlier_k() -> usize {
    16
}
fn default_outlier_ratio() -> f64 {
    2.0
}
fn default_normals_k() -> usize {
    16
}
fn default_cell() -> f64 {
    0.002
}
fn default_occ_thresh() -> f64 {
    0.5
}
fn default_resample_n() -> usize {
    200
}
fn default_fallback() -> bool {
    true
}
fn default_max_contacts() -> usize {
    96
}

/// Selection-time knobs shared by every selector.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    /// Confidence levels tried in order.
    #[serde(default = "default_cascade")]
    pub confidence_cascade: Vec<f64>,
    #[serde(default = "default_outlier_k")]
    pub outlier_k: usize,
    #[serde(default = "default_outlier_ratio")]
    pub outlier_ratio: f64,
    #[serde(default = "default_normals_k")]
    pub normals_k: usize,
    /// Voxel size of the contact grid, meters.
    #[serde(default = "default_cell")]
    pub downsample_cell: f64,
    #[serde(default = "default_occ_thresh")]
    pub occ_thresh: f64,
    /// Points resampled per instance when the fallback engages.
    #[serde(default = "default_resample_n")]
    pub resample_n: usize,
    /// Re-score resampled surface points when no grasp clears the cascade.
    #[serde(default = "default_fallback")]
    pub fallback: bool,
    /// Cap on scored contacts per instance (farthest-point subsample above
    /// it; 0 scores every downsampled point).
    #[serde(default = "default_max_contacts")]
    pub max_contacts_per_instance: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

/// A chosen grasp, ready for execution and adjudication.
#[derive(Clone, Debug, Serialize)]
pub struct SelectedGrasp {
    pub pose: GraspPose,
    pub width: f64,
    pub score: f64,
    /// Perception-side instance index the contact was assigned to.
    pub instance: usize,
    pub contact: Vec3,
    pub normal: UnitVec3,
    pub alpha: f64,
    /// Whether the contact came from the resampling fallback.
    pub resampled: bool,
}

/// What selection needs from a scene understanding: per-instance occupancy,
/// contact-to-instance assignment, and per-contact affordance scores.
pub trait Perception {
    fn num_instances(&self) -> usize;
    fn field(&self) -> &dyn OccupancyField;
    /// Instance of the i-th preprocessed contact point.
    fn assign_contact(&self, point_index: usize, position: Vec3) -> usize;
    /// Affordance probabilities ([n][n_alpha]) and widths for contacts of one
    /// instance.
    fn score_contacts(
        &self,
        instance: usize,
        contacts: &[Vec3],
        normals: &[UnitVec3],
    ) -> (Vec<Vec<f64>>, Vec<f64>);
}

/// Perception backed by a frozen network forward pass.
pub struct ModelPerception<'a> {
    pub model: &'a Model,
    pub frozen: &'a FrozenScene,
    field: ModelField<'a>,
}

impl<'a> ModelPerception<'a> {
    pub fn new(model: &'a Model, frozen: &'a FrozenScene) -> Self {
        ModelPerception { model, frozen, field: ModelField { model, frozen } }
    }
}

impl Perception for ModelPerception<'_> {
    fn num_instances(&self) -> usize {
        self.frozen.queries.len()
    }

    fn field(&self) -> &dyn OccupancyField {
        &self.field
    }

    fn assign_contact(&self, point_index: usize, _position: Vec3) -> usize {
        // The query whose mask claims the point.
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for (i, masks) in self.frozen.point_masks.iter().enumerate() {
            let p = masks[point_index];
            if p > best_p {
                best_p = p;
                best = i;
            }
        }
        best
    }

    fn score_contacts(
        &self,
        instance: usize,
        contacts: &[Vec3],
        _normals: &[UnitVec3],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.model.frozen_grasp(self.frozen, instance, contacts)
    }
}

/// Perception that bypasses learning entirely: ground-truth occupancy and
/// oracle scores (pipeline-correctness baseline).
pub struct OraclePerception<'a> {
    pub scene: &'a SceneGT,
    pub grasp_cfg: &'a GraspConfig,
    pub gripper: &'a GripperModel,
    field: GtField,
}

impl<'a> OraclePerception<'a> {
    pub fn new(scene: &'a SceneGT, grasp_cfg: &'a GraspConfig, gripper: &'a GripperModel) -> Self {
        OraclePerception { scene, grasp_cfg, gripper, field: gt_field(scene) }
    }
}

impl Perception for OraclePerception<'_> {
    fn num_instances(&self) -> usize {
        self.scene.primitives.len()
    }

    fn field(&self) -> &dyn OccupancyField {
        &self.field
    }

    fn assign_contact(&self, _point_index: usize, position: Vec3) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.scene.primitives.iter().enumerate() {
            let d = p.sdf(position).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn score_contacts(
        &self,
        _instance: usize,
        contacts: &[Vec3],
        normals: &[UnitVec3],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut probs = Vec::with_capacity(contacts.len());
        let mut widths = Vec::with_capacity(contacts.len());
        for (c, n) in contacts.iter().zip(normals) {
            match oracle_grasp_all_angles(self.scene, *c, *n, self.grasp_cfg, self.gripper) {
                Ok(label) => {
                    probs.push(label.success.iter().map(|&s| s as f64).collect());
                    widths.push(label.width.clamp(0.0, self.grasp_cfg.w_max));
                }
                Err(_) => {
                    probs.push(vec![0.0; self.grasp_cfg.n_alpha]);
                    widths.push(0.0);
                }
            }
        }
        (probs, widths)
    }
}

/// Denoise, downsample to the contact grid, and estimate viewpoint-oriented
/// normals. Returns `None` when too few points survive.
pub fn preprocess_view(
    cloud: &PointCloud,
    viewpoint: Vec3,
    cfg: &SelectionConfig,
) -> Result<Option<PointCloud>> {
    if cloud.is_empty() {
        return Ok(None);
    }
    let denoised = if cloud.len() > cfg.outlier_k {
        statistical_outlier_removal(cloud, cfg.outlier_k, cfg.outlier_ratio)?
    } else {
        cloud.clone()
    };
    if denoised.is_empty() {
        return Ok(None);
    }
    let down = voxel_downsample(&denoised, cfg.downsample_cell)?;
    if down.len() < cfg.normals_k {
        return Ok(None);
    }
    Ok(Some(estimate_normals(&down, cfg.normals_k, viewpoint)?))
}

struct Candidate {
    score: f64,
    pose_z: f64,
    alpha_abs: f64,
    contact_idx: usize,
    angle_idx: usize,
    instance: usize,
    width: f64,
    resampled: bool,
}

/// Pick the best grasp from a preprocessed view: score every contact under
/// its assigned instance, walk the confidence cascade, and return the
/// highest-scoring collision-free pose. If nothing clears the lowest
/// confidence level, resample unobserved surface points from the implicit
/// fields and try once more.
pub fn select_grasp(
    view: &PointCloud,
    perception: &dyn Perception,
    grasp_cfg: &GraspConfig,
    gripper: &GripperModel,
    table_height: f64,
    cfg: &SelectionConfig,
    seed: u64,
) -> Result<Option<SelectedGrasp>> {
    if view.is_empty() || perception.num_instances() == 0 {
        return Ok(None);
    }
    let normals = match &view.normals {
        Some(n) => n,
        None => return Ok(None),
    };
    let angles = approach_angles(grasp_cfg);

    // Group contacts by assigned instance and score per group.
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); perception.num_instances()];
    for i in 0..view.len() {
        groups[perception.assign_contact(i, view.points[i])].push(i);
    }
    let mut contacts: Vec<(Vec3, UnitVec3, usize, bool)> = Vec::new();
    let mut scores: Vec<Vec<f64>> = Vec::new();
    let mut widths: Vec<f64> = Vec::new();
    for (inst, idx) in groups.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        // Farthest-point subsample when the group exceeds the contact cap.
        let cap = cfg.max_contacts_per_instance;
        let chosen: Vec<usize> = if cap > 0 && idx.len() > cap {
            let sub = crate::cloud::PointCloud::from_points(
                idx.iter().map(|&i| view.points[i]).collect(),
            );
            crate::cloud::farthest_point_sampling(&sub, cap, seed ^ inst as u64)?
                .into_iter()
                .map(|j| idx[j])
                .collect()
        } else {
            idx.clone()
        };
        let xs: Vec<Vec3> = chosen.iter().map(|&i| view.points[i]).collect();
        let ns: Vec<UnitVec3> = chosen.iter().map(|&i| normals[i]).collect();
        let (p, w) = perception.score_contacts(inst, &xs, &ns);
        for (j, &i) in chosen.iter().enumerate() {
            contacts.push((view.points[i], normals[i], inst, false));
            scores.push(p[j].clone());
            widths.push(w[j]);
        }
    }

    if let Some(found) = cascade_pick(
        &contacts, &scores, &widths, &angles, perception, grasp_cfg, gripper, table_height, cfg,
    )? {
        return Ok(Some(found));
    }

    if !cfg.fallback {
        return Ok(None);
    }

    // Fallback: resample unobserved points from the implicit surfaces and
    // re-run scoring on them.
    let workspace = crate::fields::default_workspace();
    let mut contacts2: Vec<(Vec3, UnitVec3, usize, bool)> = Vec::new();
    let mut scores2: Vec<Vec<f64>> = Vec::new();
    let mut widths2: Vec<f64> = Vec::new();
    for inst in 0..perception.num_instances() {
        let resampled = resample_surface(
            perception.field(),
            inst,
            cfg.resample_n,
            workspace,
            seed ^ ((inst as u64) << 32),
        )?;
        if resampled.is_empty() {
            continue;
        }
        let ns = resampled.normals.as_ref().expect("resampled normals");
        let (p, w) = perception.score_contacts(inst, &resampled.points, ns);
        for j in 0..resampled.len() {
            contacts2.push((resampled.points[j], ns[j], inst, true));
            scores2.push(p[j].clone());
            widths2.push(w[j]);
        }
    }
    cascade_pick(
        &contacts2, &scores2, &widths2, &angles, perception, grasp_cfg, gripper, table_height, cfg,
    )
}

#[allow(clippy::too_many_arguments)]
fn cascade_pick(
    contacts: &[(Vec3, UnitVec3, usize, bool)],
    scores: &[Vec<f64>],
    widths: &[f64],
    angles: &[f64],
    perception: &dyn Perception,
    grasp_cfg: &GraspConfig,
    gripper: &GripperModel,
    table_height: f64,
    cfg: &SelectionConfig,
) -> Result<Option<SelectedGrasp>> {
    for &threshold in &cfg.confidence_cascade {
        let mut candidates: Vec<Candidate> = Vec::new();
        for (ci, (contact, normal, inst, resampled)) in contacts.iter().enumerate() {
            let width = widths[ci].clamp(0.0, grasp_cfg.w_max);
            for (ai, &alpha) in angles.iter().enumerate() {
                let s = scores[ci][ai];
                if s < threshold {
                    continue;
                }
                let pose = pose_at_angle(*contact, *normal, width, alpha, grasp_cfg)?;
                candidates.push(Candidate {
                    score: s,
                    pose_z: pose.translation.z,
                    alpha_abs: alpha.abs(),
                    contact_idx: ci,
                    angle_idx: ai,
                    instance: *inst,
                    width,
                    resampled: *resampled,
                });
            }
        }
        // Highest score first; ties prefer the higher pose, then the more
        // vertical approach, then stable indices.
        candidates.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(b.pose_z.partial_cmp(&a.pose_z).unwrap())
                .then(a.alpha_abs.partial_cmp(&b.alpha_abs).unwrap())
                .then(a.contact_idx.cmp(&b.contact_idx))
                .then(a.angle_idx.cmp(&b.angle_idx))
        });
        for cand in candidates {
            let (contact, normal, _, _) = contacts[cand.contact_idx];
            let alpha = angles[cand.angle_idx];
            let pose = pose_at_angle(contact, normal, cand.width, alpha, grasp_cfg)?;
            let opened = (cand.width + crate::sim::ORACLE_CLEARANCE).min(grasp_cfg.w_max);
            let collides = check_grasp_collision(
                &pose,
                opened,
                cand.instance,
                perception.field(),
                gripper,
                table_height,
                cfg.occ_thresh,
            )?;
            if !collides {
                // The declutter loop never attempts a flagged grasp: every
                // returned candidate has just passed the collision check.
                debug_assert!(!check_grasp_collision(
                    &pose,
                    opened,
                    cand.instance,
                    perception.field(),
                    gripper,
                    table_height,
                    cfg.occ_thresh
                )
                .unwrap_or(true));
                return Ok(Some(SelectedGrasp {
                    pose,
                    width: cand.width,
                    score: cand.score,
                    instance: cand.instance,
                    contact,
                    normal,
                    alpha,
                    resampled: cand.resampled,
                }));
            }
        }
    }
    Ok(None)
}
