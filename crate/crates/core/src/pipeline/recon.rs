//! Reconstruction export: per-instance meshes, the combined scene mesh, and
//! an instance/semantic-labeled (and colored) cloud.

use serde::Serialize;

use crate::cloud::ply;
use crate::error::{Error, Result};
use crate::fields::{marching_cubes, mesh_io, scene_occupancy};
use crate::geom::Vec3;
use crate::net::ModelField;

use super::select::preprocess_view;
use super::train::load_model;
use super::ReconstructConfig;

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructOutcome {
    pub instances: usize,
    pub mesh_files: Vec<String>,
    pub cloud_file: String,
}

/// Fixed palette for instance coloring.
fn palette(i: usize) -> [u8; 3] {
    const COLORS: [[u8; 3]; 8] = [
        [230, 60, 60],
        [60, 160, 230],
        [70, 200, 120],
        [240, 180, 40],
        [170, 90, 220],
        [240, 120, 200],
        [110, 220, 220],
        [160, 160, 80],
    ];
    COLORS[i % COLORS.len()]
}

/// Reconstruct every detected instance of an input cloud (PLY) and write
/// per-instance meshes, a combined scene mesh, and the labeled cloud.
pub fn cmd_reconstruct(cfg: &ReconstructConfig) -> Result<ReconstructOutcome> {
    std::fs::create_dir_all(&cfg.out)?;
    super::write_config_echo(&cfg.out, cfg)?;
    let model = load_model(&cfg.checkpoint)?;
    let raw = ply::read_ply(&cfg.input)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", cfg.input.display())))?;
    let viewpoint = cfg.viewpoint.unwrap_or(Vec3::new(0.0, 0.0, 0.8));
    let Some(view) = preprocess_view(&raw, viewpoint, &cfg.selection)? else {
        return Err(Error::Data("input cloud is empty after preprocessing".into()));
    };

    let fp = model.forward(&view, 0x9e)?;
    let frozen = model.freeze(&fp, &view);
    drop(fp);
    let field = ModelField { model: &model, frozen: &frozen };
    let ws = model.cfg.workspace;

    let mut mesh_files = Vec::new();
    for inst in 0..frozen.queries.len() {
        let occ = |x| field.model.frozen_occupancy(&frozen, inst, &[x])[0];
        let support = frozen.support[inst];
        let clipped = |x: Vec3| if support.contains(x) { occ(x) } else { 0.0 };
        let mesh = marching_cubes(clipped, ws, cfg.mc_resolution, 0.5)?;
        if mesh.is_empty() {
            continue;
        }
        let obj = format!("instance_{inst:02}.obj");
        mesh_io::write_obj(&mesh, &cfg.out.join(&obj))?;
        let plyf = format!("instance_{inst:02}.ply");
        mesh_io::write_mesh_ply(&mesh, &cfg.out.join(&plyf))?;
        mesh_files.push(obj);
        mesh_files.push(plyf);
    }

    // Combined scene mesh from the instance maxima.
    let scene_mesh = marching_cubes(|x| scene_occupancy(&field, x), ws, cfg.mc_resolution, 0.5)?;
    if !scene_mesh.is_empty() {
        let name = "scene.obj".to_string();
        mesh_io::write_obj(&scene_mesh, &cfg.out.join(&name))?;
        mesh_io::write_mesh_ply(&scene_mesh, &cfg.out.join("scene.ply"))?;
        mesh_files.push(name);
        mesh_files.push("scene.ply".into());
    }

    // Labeled, colored cloud: instance = argmax mask, semantic = its class.
    let mut labeled = view.clone();
    let mut colors = Vec::with_capacity(view.len());
    let mut inst_ids = Vec::with_capacity(view.len());
    let mut sem_ids = Vec::with_capacity(view.len());
    for i in 0..view.len() {
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for (q, masks) in frozen.point_masks.iter().enumerate() {
            if masks[i] > best_p {
                best_p = masks[i];
                best = q;
            }
        }
        if frozen.point_masks.is_empty() {
            inst_ids.push(0);
            sem_ids.push(0);
            colors.push([128, 128, 128]);
        } else {
            inst_ids.push(best as u32);
            let probs = &frozen.class_probs[best];
            let class = probs
                .iter()
                .take(probs.len() - 1)
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(c, _)| c as u32)
                .unwrap_or(0);
            sem_ids.push(class);
            colors.push(palette(best));
        }
    }
    labeled.instance_ids = Some(inst_ids);
    labeled.semantic_ids = Some(sem_ids);
    let cloud_file = "cloud_labeled.ply".to_string();
    ply::write_ply_colored(&labeled, &colors, &cfg.out.join(&cloud_file))?;

    let outcome = ReconstructOutcome {
        instances: frozen.queries.len(),
        mesh_files,
        cloud_file,
    };
    let json = serde_json::to_string_pretty(&outcome).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(cfg.out.join("reconstruct_report.json"), json)?;
    Ok(outcome)
}
