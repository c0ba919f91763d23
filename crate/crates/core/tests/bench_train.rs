// Temporary calibration probe; removed before finalizing.
use std::time::Instant;

use icgrasp_core::pipeline::{cmd_gen, cmd_train, GenConfig, TrainAugment, TrainConfig};
use icgrasp_core::sim::SceneGenConfig;

#[test]
#[ignore]
fn calibrate_desk_training() {
    let dir = std::env::temp_dir().join("icg_calib");
    let _ = std::fs::remove_dir_all(&dir);
    let gen = GenConfig {
        scenes: 50,
        seed: 1234,
        out: dir.clone(),
        scene: SceneGenConfig { k_min: 1, k_max: 1, ..Default::default() },
    };
    let t0 = Instant::now();
    cmd_gen(&gen).unwrap();
    println!("gen 50 scenes: {:?}", t0.elapsed());

    let tcfg = TrainConfig {
        dataset: dir.clone(),
        out: dir.join("out"),
        epochs: 200,
        seed: 7,
        val_frac: 0.1,
        patience: 200,
        lr: 1e-3,
        warmup_epochs: 1.0,
        occ_per_step: 192,
        contacts_per_step: 16,
        downsample_cell: 0.002,
        net: icgrasp_core::net::NetConfig { decoder_blocks: 3, ..Default::default() },
        augment: TrainAugment { elastic: false, ..Default::default() },
    };
    let t0 = Instant::now();
    let out = cmd_train(&tcfg).unwrap();
    println!(
        "train: {:?} for {} epochs (best F1 {:.3} at {})",
        t0.elapsed(),
        out.epochs_run,
        out.best_f1,
        out.best_epoch
    );
    let log = std::fs::read_to_string(dir.join("out/metrics.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if let Some(f1) = v.get("val_f1") {
            println!(
                "epoch {} mean_total {:.4} val_f1 {:.4}",
                v["epoch"], v["mean_total"].as_f64().unwrap(), f1.as_f64().unwrap()
            );
        }
    }
}

use icgrasp_core::fields::{gt_field, scene_occupancy, volumetric_iou, OccupancyField};
use icgrasp_core::losses::match_forward;
use icgrasp_core::net::ModelField;
use icgrasp_core::pipeline::{
    load_model, prepare_step, run_declutter_scene, SelectionConfig, validate_f1,
};
use icgrasp_core::sim::{generate_scene, scene_seed, SceneKind};

#[test]
#[ignore]
fn desk_metrics_probe() {
    let dir = std::env::temp_dir().join("icg_calib");
    let model = load_model(&dir.join("out/model.ckpt")).unwrap();
    let tcfg = TrainConfig {
        dataset: dir.clone(),
        out: dir.join("out"),
        epochs: 1,
        seed: 7,
        val_frac: 0.1,
        patience: 200,
        lr: 1e-3,
        warmup_epochs: 1.0,
        occ_per_step: 96,
        contacts_per_step: 16,
        downsample_cell: 0.002,
        net: Default::default(),
        augment: TrainAugment::default(),
    };

    // Held-out single-primitive scenes.
    let gen = GenConfig {
        scenes: 10,
        seed: 99_999,
        out: dir.join("heldout"),
        scene: SceneGenConfig { k_min: 1, k_max: 1, ..Default::default() },
    };
    let _ = std::fs::remove_dir_all(&gen.out);
    cmd_gen(&gen).unwrap();
    let (_, held) = icgrasp_core::sim::dataset::read_dataset(&gen.out).unwrap();

    let mut mious = Vec::new();
    let mut occ_ious = Vec::new();
    let mut f1s = Vec::new();
    for (i, scene) in held.iter().enumerate() {
        let (cloud, labels) = prepare_step(scene, &tcfg, 5000 + i as u64, false).unwrap().unwrap();
        let fp = model.forward(&cloud, 42 + i as u64).unwrap();
        let frozen = model.freeze(&fp, &cloud);
        drop(fp);
        // mask mIoU: per gt instance, best active query by point-set IoU.
        let k_gt = labels.num_instances();
        let mut per_instance = Vec::new();
        for k in 0..k_gt {
            let gt_set: Vec<bool> = labels.point_instance.iter().map(|&g| g as usize == k).collect();
            let mut best = 0.0f64;
            for (qi, _q) in frozen.queries.iter().enumerate() {
                // Point assignment: argmax over active queries.
                let mut inter = 0;
                let mut union = 0;
                for p in 0..cloud.len() {
                    let assigned = {
                        let mut b = 0;
                        let mut bp = f64::NEG_INFINITY;
                        for (qq, m) in frozen.point_masks.iter().enumerate() {
                            if m[p] > bp { bp = m[p]; b = qq; }
                        }
                        b == qi
                    };
                    if assigned && gt_set[p] { inter += 1; }
                    if assigned || gt_set[p] { union += 1; }
                }
                if union > 0 { best = best.max(inter as f64 / union as f64); }
            }
            per_instance.push(best);
        }
        let miou = per_instance.iter().sum::<f64>() / per_instance.len() as f64;
        mious.push(miou);

        // occupancy IoU vs gt over the workspace.
        let field = ModelField { model: &model, frozen: &frozen };
        let gt = gt_field(&scene.scene);
        let iou = volumetric_iou(
            |x| scene_occupancy(&field, x),
            |x| scene_occupancy(&gt, x),
            scene.scene.workspace,
            30_000,
            17 + i as u64,
        )
        .unwrap();
        occ_ious.push(iou);
        println!("held {i}: active {} mIoU {:.3} occIoU {:.3}", frozen.queries.len(), miou, iou);
    }
    let refs: Vec<&icgrasp_core::sim::LabeledScene> = held.iter().collect();
    f1s.push(validate_f1(&model, &refs, &tcfg).unwrap());
    println!(
        "MEAN: mIoU {:.3}  occIoU {:.3}  F1 {:.3}",
        mious.iter().sum::<f64>() / mious.len() as f64,
        occ_ious.iter().sum::<f64>() / occ_ious.len() as f64,
        f1s[0]
    );

    // Declutter on fresh 2-primitive scenes.
    let t0 = Instant::now();
    let mut removed = 0;
    let mut total = 0;
    let mut attempts = 0;
    let mut succ = 0;
    for i in 0..20usize {
        let scene = generate_scene(SceneKind::Packed, 2, scene_seed(777, i)).unwrap();
        let log = run_declutter_scene(
            scene,
            Some(&model),
            &Default::default(),
            &Default::default(),
            &SelectionConfig::default(),
            scene_seed(778, i),
            i,
        )
        .unwrap();
        removed += log.objects_removed;
        total += log.objects_total;
        attempts += log.attempts;
        succ += log.successes;
        println!("scene {i}: {}/{} removed, {} attempts", log.objects_removed, log.objects_total, log.attempts);
    }
    println!(
        "DECLUTTER: DR {:.3} GSR {:.3} in {:?}",
        removed as f64 / total as f64,
        succ as f64 / attempts.max(1) as f64,
        t0.elapsed()
    );
}

#[test]
#[ignore]
fn occ_error_direction() {
    use icgrasp_core::geom::Vec3 as V;
    let dir = std::env::temp_dir().join("icg_calib");
    let model = load_model(&dir.join("out/model.ckpt")).unwrap();
    let tcfg = TrainConfig {
        dataset: dir.clone(),
        out: dir.join("out"),
        epochs: 1,
        seed: 7,
        val_frac: 0.1,
        patience: 10,
        lr: 1e-3,
        warmup_epochs: 1.0,
        occ_per_step: 96,
        contacts_per_step: 16,
        downsample_cell: 0.002,
        net: Default::default(),
        augment: TrainAugment::default(),
    };
    let (_, held) = icgrasp_core::sim::dataset::read_dataset(&dir.join("heldout")).unwrap();
    let mut rng_seed = 0u64;
    for (i, scene) in held.iter().enumerate() {
        let (cloud, _) = prepare_step(scene, &tcfg, 5000 + i as u64, false).unwrap().unwrap();
        let fp = model.forward(&cloud, 42 + i as u64).unwrap();
        let frozen = model.freeze(&fp, &cloud);
        drop(fp);
        let field = ModelField { model: &model, frozen: &frozen };
        let gt = gt_field(&scene.scene);
        let mut pred_only = 0; let mut gt_only = 0; let mut inter = 0;
        let ws = scene.scene.workspace;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
        rng_seed += 1;
        for _ in 0..20000 {
            let p = V::new(
                rng.gen_range(ws.min.x..ws.max.x),
                rng.gen_range(ws.min.y..ws.max.y),
                rng.gen_range(ws.min.z..ws.max.z),
            );
            let a = scene_occupancy(&field, p) > 0.5;
            let b = scene_occupancy(&gt, p) > 0.5;
            match (a, b) { (true,true)=>inter+=1, (true,false)=>pred_only+=1, (false,true)=>gt_only+=1, _=>{} }
        }
        let kind = scene.scene.primitives[0].kind;
        println!("held {i} {:?}: inter {inter} pred_only {pred_only} gt_only {gt_only}  IoU {:.3}", kind, inter as f64/(inter+pred_only+gt_only) as f64);
    }
}

#[test]
#[ignore]
fn inspect_heldout_scenes() {
    let dir = std::env::temp_dir().join("icg_calib");
    let (_, held) = icgrasp_core::sim::dataset::read_dataset(&dir.join("heldout")).unwrap();
    for (i, s) in held.iter().enumerate() {
        let p = &s.scene.primitives[0];
        let cam = s.camera.position;
        let theta = ((cam.z - 0.15) / (cam - icgrasp_core::geom::Vec3::new(0.0,0.0,0.15)).norm()).acos().to_degrees();
        println!(
            "held {i}: {:?} size ({:.3},{:.3},{:.3}) at ({:.3},{:.3},{:.3}) cloud {} pts, cam theta {:.0} deg",
            p.kind, p.size.x, p.size.y, p.size.z,
            p.pose.translation.x, p.pose.translation.y, p.pose.translation.z,
            s.cloud.len(), theta
        );
    }
}
