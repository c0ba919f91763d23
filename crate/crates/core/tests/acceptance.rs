//! Acceptance suite: every release criterion runs at its stated tolerance,
//! sequentially, printing one pass/fail line per criterion.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use icgrasp_core::cloud::PointCloud;
use icgrasp_core::fields::{
    gt_field, marching_cubes, scene_occupancy, volumetric_iou, Primitive, PrimitiveKind, SceneGT,
};
use icgrasp_core::fields::metrics::MeshContainment;
use icgrasp_core::geom::{
    approach_angles, pose_at_angle, GraspConfig, GraspPose, RotMat, UnitVec3, Vec3,
};
use icgrasp_core::losses::{
    backward_params, hungarian, match_forward, total_loss, CostMatrix, TrainingLabels,
};
use icgrasp_core::net::{Model, NetConfig};
use icgrasp_core::pipeline::{
    cmd_eval_grasp, cmd_gen, cmd_train, load_model, prepare_step, run_declutter_scene,
    validate_f1, EvalGraspConfig, GenConfig, SelectionConfig, SelectorKind, TrainAugment,
    TrainConfig,
};
use icgrasp_core::sim::{generate_scene, scene_seed, CameraConfig, SceneGenConfig, SceneKind};

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<String, String>,
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Criterion> = vec![
        Criterion { name: "geometry", budget: Duration::from_secs(1), run: geometry_suite },
        Criterion { name: "assignment", budget: Duration::from_secs(5), run: assignment_suite },
        Criterion { name: "gradients", budget: Duration::from_secs(120), run: gradient_suite },
        Criterion {
            name: "reconstruction-metrics",
            budget: Duration::from_secs(30),
            run: recon_metric_suite,
        },
        Criterion {
            name: "oracle-declutter",
            budget: Duration::from_secs(120),
            run: oracle_declutter,
        },
        Criterion {
            name: "desk-training",
            budget: Duration::from_secs(45 * 60),
            run: desk_training,
        },
        Criterion {
            name: "fallback-efficacy",
            budget: Duration::from_secs(15 * 60),
            run: fallback_efficacy,
        },
        Criterion { name: "determinism", budget: Duration::from_secs(10 * 60), run: determinism },
    ];

    // ICGRASP_ACCEPTANCE_ONLY=name1,name2 narrows the run (debugging aid).
    let only: Option<Vec<String>> = std::env::var("ICGRASP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());

    let mut failures = Vec::new();
    for c in &criteria {
        if let Some(names) = &only {
            if !names.iter().any(|n| n == c.name) {
                continue;
            }
        }
        let t0 = Instant::now();
        let result = (c.run)();
        let elapsed = t0.elapsed();
        match result {
            Ok(detail) if elapsed <= c.budget => {
                println!("[PASS] {}: {} ({:.1?})", c.name, detail, elapsed);
            }
            Ok(detail) => {
                println!(
                    "[FAIL] {}: over budget {:.1?} > {:.1?} ({})",
                    c.name, elapsed, c.budget, detail
                );
                failures.push(c.name);
            }
            Err(reason) => {
                println!("[FAIL] {}: {} ({:.1?})", c.name, reason, elapsed);
                failures.push(c.name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("icgrasp_acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn random_unit(rng: &mut ChaCha8Rng) -> UnitVec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm() > 1e-3 {
            return v.normalized().unwrap();
        }
    }
}

// ---------------------------------------------------------------------------
// 1. Geometry: 1000 random (n, z, alpha) triples.
// ---------------------------------------------------------------------------

fn geometry_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE01);
    let mut singular_cases = 0usize;
    for trial in 0..1000 {
        // One in eight draws is forced near the pole so the singular branch
        // gets well over 50 cases.
        let z = random_unit(&mut rng);
        let n = if trial % 8 == 0 {
            // Tilt below 11 degrees from ±z keeps |z·n| above 0.981.
            let tilt = rng.gen_range(0.0..0.19f64);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            // Build in a frame whose third axis is z.
            let zv = z.as_vec();
            let helper = if zv.x.abs() < 0.9 {
                Vec3::new(1.0, 0.0, 0.0)
            } else {
                Vec3::new(0.0, 1.0, 0.0)
            };
            let u = zv.cross(helper).normalized().unwrap().as_vec();
            let v = zv.cross(u);
            (zv * (tilt.cos() * sign) + u * (tilt.sin() * phi.cos()) + v * (tilt.sin() * phi.sin()))
                .normalized()
                .unwrap()
        } else {
            random_unit(&mut rng)
        };
        let alpha = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        let cfg = GraspConfig { gravity: z, ..Default::default() };
        if n.as_vec().dot(z.as_vec()).abs() > cfg.singularity_threshold {
            singular_cases += 1;
        }
        let pose = pose_at_angle(Vec3::new(0.0, 0.0, 0.1), n, 0.03, alpha, &cfg)
            .map_err(|e| format!("pose construction failed: {e}"))?;
        let r = pose.rotation;
        if r.ortho_defect() >= 1e-9 {
            return Err(format!("orthonormality defect {} at trial {trial}", r.ortho_defect()));
        }
        if (r.det() - 1.0).abs() >= 1e-9 {
            return Err(format!("determinant {} at trial {trial}", r.det()));
        }
        if (r.col(1) - n.as_vec()).norm() >= 1e-9 {
            return Err(format!("closing axis drifted at trial {trial}"));
        }
        if r.col(2).dot(n.as_vec()).abs() >= 1e-9 {
            return Err(format!("approach not perpendicular at trial {trial}"));
        }
    }
    if singular_cases < 50 {
        return Err(format!("only {singular_cases} singular cases"));
    }
    Ok(format!("1000 triples, {singular_cases} singular"))
}

// ---------------------------------------------------------------------------
// 2. Assignment: 200 random 7x7 matrices against exhaustive enumeration.
// ---------------------------------------------------------------------------

fn permutation_minimum(cost: &CostMatrix) -> f64 {
    // Heap's algorithm over all 5040 permutations of 7 columns; totals are
    // summed in ascending row order, matching Assignment::total.
    let n = 7;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut stack = vec![0usize; n];
    let total = |p: &[usize]| -> f64 { (0..n).map(|i| cost.at(i, p[i])).sum() };
    let mut best = total(&perm);
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.min(total(&perm));
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best
}

fn assignment_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE02);
    for case in 0..200 {
        let data: Vec<f64> = (0..49).map(|_| rng.gen_range(0.0..1.0)).collect();
        let cost = CostMatrix::new(7, 7, data).unwrap();
        let assignment = hungarian(&cost);
        let got = assignment.total(&cost);
        let expect = permutation_minimum(&cost);
        if got != expect {
            return Err(format!("case {case}: {got} != exhaustive {expect}"));
        }
    }
    Ok("200 random 7x7 matrices match the 5040-permutation minimum exactly".into())
}

// ---------------------------------------------------------------------------
// 3. Gradients: central finite differences over every parameter.
// ---------------------------------------------------------------------------

fn gradient_model_config() -> NetConfig {
    NetConfig {
        n_queries: 4,
        d_s: 8,
        d_v: 8,
        d_q: 16,
        n_refine_rounds: 3,
        n_heads: 2,
        knn_k: 4,
        fourier_freqs: 2,
        n_alpha: 4,
        dense_res: 8,
        dense_hidden: 4,
        ..NetConfig::default()
    }
}

fn gradient_fixture(seed: u64) -> (PointCloud, TrainingLabels) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [Vec3::new(-0.04, 0.0, 0.05), Vec3::new(0.05, 0.01, 0.04)];
    let mut points = Vec::new();
    let mut point_instance = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..25 {
            points.push(
                *c + Vec3::new(
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                    rng.gen_range(-0.02..0.02),
                ),
            );
            point_instance.push(k as u32);
        }
    }
    let mut occ_points = Vec::new();
    let mut occ_labels = Vec::new();
    for _ in 0..8 {
        let p = Vec3::new(
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(0.0..0.12),
        );
        occ_points.push(p);
        occ_labels.push(
            centers
                .iter()
                .map(|c| u8::from((p - *c).norm() < 0.025))
                .collect(),
        );
    }
    let mut contacts = Vec::new();
    let mut contact_instance = Vec::new();
    let mut contact_success = Vec::new();
    let mut contact_width = Vec::new();
    for i in 0..8usize {
        let k = i % 2;
        contacts.push(
            centers[k]
                + Vec3::new(0.02, rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01)),
        );
        contact_instance.push(k as u32);
        contact_success.push((0..4).map(|a| u8::from((a + i) % 3 != 0)).collect());
        contact_width.push(0.02 + 0.01 * (i % 3) as f64);
    }
    (
        PointCloud::from_points(points),
        TrainingLabels {
            point_instance,
            instance_classes: vec![0, 2],
            occ_points,
            occ_labels,
            contacts,
            contact_instance,
            contact_success,
            contact_width,
        },
    )
}

fn gradient_suite() -> Result<String, String> {
    let cfg = gradient_model_config();
    let mut model = Model::new(cfg, 0xACCE03).map_err(|e| e.to_string())?;
    let (cloud, labels) = gradient_fixture(0xACCE04);

    // Freeze the assignment from the unperturbed forward pass; matching is a
    // discrete decision outside the differentiated path. The anchor seed is
    // picked so every masked-attention logit sits far enough from the
    // sigmoid midpoint that finite-difference probes cannot flip a mask bit.
    let mut best: (u64, f64) = (0, f64::NEG_INFINITY);
    for anchor_seed in 11u64..27 {
        let fp = model.forward(&cloud, anchor_seed).map_err(|e| e.to_string())?;
        let mut margin = f64::INFINITY;
        for round in &fp.mask_logits {
            for &l in round.values().iter() {
                margin = margin.min(l.abs());
            }
        }
        if margin > best.1 {
            best = (anchor_seed, margin);
        }
    }
    let (anchor_seed, margin) = best;
    // A probe of ±1e-6 moves any logit by well under 1e-4; a flipped mask
    // would also fail the finite-difference comparison loudly below.
    if margin < 1e-4 {
        return Err(format!("mask logit margin {margin:.2e} too small for stable probes"));
    }
    let fp0 = model.forward(&cloud, anchor_seed).map_err(|e| e.to_string())?;
    let assignment = match_forward(&fp0, &labels).map_err(|e| e.to_string())?;

    let (total0, _) = total_loss(&model, &fp0, &labels, &assignment).map_err(|e| e.to_string())?;
    let analytic = backward_params(&fp0, &total0).map_err(|e| e.to_string())?;
    drop(total0);
    drop(fp0);

    let eval_loss = |model: &Model| -> f64 {
        let fp = model.forward(&cloud, anchor_seed).unwrap();
        let (total, _) = total_loss(model, &fp, &labels, &assignment).unwrap();
        total.scalar()
    };
    let _ = margin;

    let step = 1e-6;
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
    let mut checked = 0usize;
    let mut worst: (f64, String) = (0.0, String::new());
    for name in names {
        let len = model.params.get(&name).unwrap().data.len();
        for i in 0..len {
            let orig = model.params.get(&name).unwrap().data[i];
            model.params.get_mut(&name).unwrap().data[i] = orig + step;
            let hi = eval_loss(&model);
            model.params.get_mut(&name).unwrap().data[i] = orig - step;
            let lo = eval_loss(&model);
            model.params.get_mut(&name).unwrap().data[i] = orig;
            let fd = (hi - lo) / (2.0 * step);
            let a = analytic.get(&name).map_or(0.0, |g| g[i]);
            let err = (a - fd).abs() / a.abs().max(1.0);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]"));
            }
            if err >= 1e-4 {
                return Err(format!(
                    "{name}[{i}]: analytic {a:.6e} vs fd {fd:.6e} (rel {err:.2e})"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} parameters checked, worst relative error {:.2e} at {}",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------------------
// 4. Reconstruction metrics on the analytic sphere.
// ---------------------------------------------------------------------------

fn recon_metric_suite() -> Result<String, String> {
    let r = 0.05;
    let center = Vec3::new(0.0, 0.0, 0.15);
    let ws = icgrasp_core::fields::default_workspace();
    let occ = move |x: Vec3| (0.5 - ((x - center).norm() - r) * 50.0).clamp(0.0, 1.0);
    let mesh = marching_cubes(occ, ws, 64, 0.5).map_err(|e| e.to_string())?;
    if mesh.is_empty() {
        return Err("empty mesh".into());
    }
    if !mesh.is_closed() {
        return Err("mesh is not closed".into());
    }
    let euler = mesh.euler_characteristic();
    if euler != 2 {
        return Err(format!("Euler characteristic {euler} != 2"));
    }
    let area = mesh.surface_area();
    let expect_area = 4.0 * std::f64::consts::PI * r * r;
    let area_err = (area - expect_area).abs() / expect_area;
    if area_err >= 0.05 {
        return Err(format!("area error {:.1}%", area_err * 100.0));
    }
    let containment = MeshContainment::build(&mesh).map_err(|e| e.to_string())?;
    let iou = volumetric_iou(
        |x| if (x - center).norm() < r { 1.0 } else { 0.0 },
        |x| if containment.contains(x) { 1.0 } else { 0.0 },
        ws,
        60_000,
        0xACCE05,
    )
    .map_err(|e| e.to_string())?;
    if iou < 0.97 {
        return Err(format!("volumetric IoU {iou:.4} < 0.97"));
    }
    Ok(format!(
        "IoU {iou:.4}, area within {:.2}%, Euler 2, {} triangles",
        area_err * 100.0,
        mesh.triangles.len()
    ))
}

// ---------------------------------------------------------------------------
// 5. Oracle-driven declutter: pipeline correctness without learning.
// ---------------------------------------------------------------------------

fn oracle_declutter() -> Result<String, String> {
    let out = tmp("oracle_declutter");
    let cfg = EvalGraspConfig {
        checkpoint: None,
        out,
        selector: SelectorKind::Oracle,
        scenes: 20,
        seed: 0xACCE06,
        kind: SceneKind::Packed,
        k: 3,
        camera: CameraConfig::default(),
        grasp: GraspConfig::default(),
        selection: SelectionConfig::default(),
    };
    let report = cmd_eval_grasp(&cfg).map_err(|e| e.to_string())?;
    if report.gsr != 1.0 {
        let failures: Vec<usize> = report
            .scenes
            .iter()
            .filter(|s| s.successes != s.attempts)
            .map(|s| s.scene_index)
            .collect();
        return Err(format!("GSR {:.3} != 1.0 (scenes {failures:?})", report.gsr));
    }
    if report.dr != 1.0 {
        let failures: Vec<usize> = report
            .scenes
            .iter()
            .filter(|s| s.objects_removed != s.objects_total)
            .map(|s| s.scene_index)
            .collect();
        return Err(format!("DR {:.3} != 1.0 (scenes {failures:?})", report.dr));
    }
    Ok("GSR 100%, DR 100% over 20 packed 3-primitive scenes".into())
}

// ---------------------------------------------------------------------------
// 6. Desk-scale training.
// ---------------------------------------------------------------------------

fn desk_train_config(dataset: PathBuf, out: PathBuf) -> TrainConfig {
    TrainConfig {
        dataset,
        out,
        epochs: 200,
        seed: 0xACCE07,
        val_frac: 0.1,
        // The full 200 epochs are part of the criterion; the plateau rule is
        // exercised separately, so it is disabled here.
        patience: 200,
        lr: 1e-3,
        warmup_epochs: 1.0,
        occ_per_step: 96,
        contacts_per_step: 16,
        downsample_cell: 0.002,
        net: NetConfig::default(),
        augment: TrainAugment::default(),
    }
}

fn instance_miou(
    model: &Model,
    frozen: &icgrasp_core::net::FrozenScene,
    cloud: &PointCloud,
    labels: &TrainingLabels,
) -> f64 {
    let _ = model;
    let n = cloud.len();
    // Point -> active-query assignment by the strongest mask.
    let assigned: Vec<Option<usize>> = (0..n)
        .map(|p| {
            let mut best = None;
            let mut best_p = f64::NEG_INFINITY;
            for (q, masks) in frozen.point_masks.iter().enumerate() {
                if masks[p] > best_p {
                    best_p = masks[p];
                    best = Some(q);
                }
            }
            best
        })
        .collect();
    let k_gt = labels.num_instances();
    let mut per_instance = Vec::with_capacity(k_gt);
    for k in 0..k_gt {
        let mut best = 0.0f64;
        for q in 0..frozen.queries.len() {
            let mut inter = 0usize;
            let mut union = 0usize;
            for p in 0..n {
                let in_pred = assigned[p] == Some(q);
                let in_gt = labels.point_instance[p] as usize == k;
                if in_pred && in_gt {
                    inter += 1;
                }
                if in_pred || in_gt {
                    union += 1;
                }
            }
            if union > 0 {
                best = best.max(inter as f64 / union as f64);
            }
        }
        per_instance.push(best);
    }
    per_instance.iter().sum::<f64>() / per_instance.len().max(1) as f64
}

fn desk_training() -> Result<String, String> {
    // 50 single-primitive packed scenes, fixed seeds.
    let data_dir = tmp("desk_data");
    let gen_cfg = GenConfig {
        scenes: 50,
        seed: 0xACCE08,
        out: data_dir.clone(),
        scene: SceneGenConfig { k_min: 1, k_max: 1, ..Default::default() },
    };
    cmd_gen(&gen_cfg).map_err(|e| e.to_string())?;

    let train_out = tmp("desk_train");
    let tcfg = desk_train_config(data_dir, train_out);
    let outcome = cmd_train(&tcfg).map_err(|e| e.to_string())?;
    let model = load_model(&outcome.checkpoint).map_err(|e| e.to_string())?;

    // Held-out single-primitive scenes (fresh seed).
    let held_dir = tmp("desk_heldout");
    let held_cfg = GenConfig {
        scenes: 10,
        seed: 0xACCE09,
        out: held_dir.clone(),
        scene: SceneGenConfig { k_min: 1, k_max: 1, ..Default::default() },
    };
    cmd_gen(&held_cfg).map_err(|e| e.to_string())?;
    let (_, held) =
        icgrasp_core::sim::dataset::read_dataset(&held_dir).map_err(|e| e.to_string())?;

    let mut mious = Vec::new();
    let mut occ_ious = Vec::new();
    for (i, scene) in held.iter().enumerate() {
        let Some((cloud, labels)) =
            prepare_step(scene, &tcfg, 0xE0 + i as u64, false).map_err(|e| e.to_string())?
        else {
            continue;
        };
        let fp = model.forward(&cloud, 0xF0 + i as u64).map_err(|e| e.to_string())?;
        let frozen = model.freeze(&fp, &cloud);
        drop(fp);
        mious.push(instance_miou(&model, &frozen, &cloud, &labels));
        let field = icgrasp_core::net::ModelField { model: &model, frozen: &frozen };
        let gt = gt_field(&scene.scene);
        occ_ious.push(
            volumetric_iou(
                |x| scene_occupancy(&field, x),
                |x| scene_occupancy(&gt, x),
                scene.scene.workspace,
                30_000,
                0x100 + i as u64,
            )
            .map_err(|e| e.to_string())?,
        );
    }
    let miou = mious.iter().sum::<f64>() / mious.len().max(1) as f64;
    let occ_iou = occ_ious.iter().sum::<f64>() / occ_ious.len().max(1) as f64;
    let held_refs: Vec<&icgrasp_core::sim::LabeledScene> = held.iter().collect();
    let f1 = validate_f1(&model, &held_refs, &tcfg).map_err(|e| e.to_string())?;

    // Learned-model declutter on 20 fresh 2-primitive scenes.
    let mut removed = 0usize;
    let mut total = 0usize;
    for i in 0..20usize {
        let scene = generate_scene(SceneKind::Packed, 2, scene_seed(0xACCE0A, i))
            .map_err(|e| e.to_string())?;
        let log = run_declutter_scene(
            scene,
            Some(&model),
            &CameraConfig::default(),
            &GraspConfig::default(),
            &SelectionConfig::default(),
            scene_seed(0xACCE0B, i),
            i,
        )
        .map_err(|e| e.to_string())?;
        removed += log.objects_removed;
        total += log.objects_total;
    }
    let dr = removed as f64 / total.max(1) as f64;

    let detail = format!(
        "epochs {}, mask mIoU {miou:.3}, occupancy IoU {occ_iou:.3}, affordance F1 {f1:.3}, declutter DR {dr:.3}",
        outcome.epochs_run
    );
    if miou < 0.8 {
        return Err(format!("mask mIoU {miou:.3} < 0.8 ({detail})"));
    }
    if occ_iou < 0.7 {
        return Err(format!("occupancy IoU {occ_iou:.3} < 0.7 ({detail})"));
    }
    if f1 < 0.6 {
        return Err(format!("affordance F1 {f1:.3} < 0.6 ({detail})"));
    }
    if dr < 0.8 {
        return Err(format!("declutter DR {dr:.3} < 0.8 ({detail})"));
    }
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 7. Fallback efficacy under strictly top-down viewpoints.
// ---------------------------------------------------------------------------

fn tall_cylinder_scene(seed: u64) -> SceneGT {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.gen_range(0.018..0.028);
    // Taller than the gripper opening: top-down chords are ungraspable.
    let h = rng.gen_range(0.085..0.12);
    let x = rng.gen_range(-0.08..0.08);
    let y = rng.gen_range(-0.08..0.08);
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    SceneGT::new(vec![Primitive::new(
        PrimitiveKind::Cylinder,
        GraspPose::new(RotMat::rot_z(yaw), Vec3::new(x, y, h / 2.0)),
        Vec3::new(r, r, h),
    )])
}

fn fallback_efficacy() -> Result<String, String> {
    let camera = CameraConfig::top_down();
    let grasp = GraspConfig::default();
    let run = |fallback: bool| -> Result<(usize, usize), String> {
        let selection = SelectionConfig { fallback, ..Default::default() };
        let mut removed = 0usize;
        let mut total = 0usize;
        for i in 0..20usize {
            let scene = tall_cylinder_scene(scene_seed(0xACCE0C, i));
            let log = run_declutter_scene(
                scene,
                None,
                &camera,
                &grasp,
                &selection,
                scene_seed(0xACCE0D, i),
                i,
            )
            .map_err(|e| e.to_string())?;
            removed += log.objects_removed;
            total += log.objects_total;
        }
        Ok((removed, total))
    };
    let (off_removed, total) = run(false)?;
    let (on_removed, _) = run(true)?;
    let dr_off = off_removed as f64 / total as f64;
    let dr_on = on_removed as f64 / total as f64;
    if dr_on < dr_off {
        return Err(format!("fallback decreased DR: {dr_on:.2} < {dr_off:.2}"));
    }
    if on_removed < off_removed + 1 {
        return Err(format!(
            "fallback recovered no additional object: {on_removed} vs {off_removed}"
        ));
    }
    Ok(format!(
        "DR {dr_off:.2} -> {dr_on:.2} ({} extra objects over 20 scenes)",
        on_removed - off_removed
    ))
}

// ---------------------------------------------------------------------------
// 8. Determinism of gen and train.
// ---------------------------------------------------------------------------

fn determinism() -> Result<String, String> {
    let gen_once = |dir: PathBuf| -> Result<(Vec<String>, PathBuf), String> {
        let cfg = GenConfig {
            scenes: 4,
            seed: 0xACCE0E,
            out: dir.clone(),
            scene: SceneGenConfig {
                k_min: 1,
                k_max: 2,
                n_contacts: 8,
                n_occupancy: 200,
                ..Default::default()
            },
        };
        let manifest = cmd_gen(&cfg).map_err(|e| e.to_string())?;
        Ok((manifest.files, dir))
    };
    let (files_a, dir_a) = gen_once(tmp("det_gen_a"))?;
    let (files_b, dir_b) = gen_once(tmp("det_gen_b"))?;
    for (fa, fb) in files_a.iter().zip(&files_b) {
        let a = std::fs::read(dir_a.join(fa)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir_b.join(fb)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("dataset file {fa} differs between reruns"));
        }
    }

    let train_once = |out: PathBuf| -> Result<(Vec<u8>, Vec<u8>), String> {
        let cfg = TrainConfig {
            dataset: dir_a.clone(),
            out: out.clone(),
            epochs: 2,
            seed: 0xACCE0F,
            val_frac: 0.25,
            patience: 5,
            lr: 1e-3,
            warmup_epochs: 0.5,
            occ_per_step: 16,
            contacts_per_step: 8,
            downsample_cell: 0.004,
            net: gradient_model_config(),
            augment: TrainAugment::default(),
        };
        cmd_train(&cfg).map_err(|e| e.to_string())?;
        Ok((
            std::fs::read(out.join("metrics.jsonl")).map_err(|e| e.to_string())?,
            std::fs::read(out.join("model.ckpt")).map_err(|e| e.to_string())?,
        ))
    };
    let (log_a, ckpt_a) = train_once(tmp("det_train_a"))?;
    let (log_b, ckpt_b) = train_once(tmp("det_train_b"))?;
    if log_a != log_b {
        return Err("metric logs differ between identical training runs".into());
    }
    if ckpt_a != ckpt_b {
        return Err("checkpoints differ between identical training runs".into());
    }

    let mut by_name: BTreeMap<&str, ()> = BTreeMap::new();
    by_name.insert("gen", ());
    by_name.insert("train", ());
    Ok(format!(
        "{} reruns byte-identical (dataset files, metric logs, checkpoints)",
        by_name.len()
    ))
}
