use super::*;
use rand::Rng;

fn tiny_cfg() -> NetConfig {
    NetConfig {
        n_queries: 4,
        d_s: 8,
        d_v: 8,
        d_q: 16,
        n_refine_rounds: 2,
        n_heads: 2,
        knn_k: 4,
        fourier_freqs: 2,
        n_alpha: 4,
        dense_res: 8,
        dense_hidden: 4,
        ..NetConfig::default()
    }
}

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::from_points(
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(0.02..0.2),
                )
            })
            .collect(),
    )
}

#[test]
fn encode_single_point_yields_one_token() {
    let model = Model::new(tiny_cfg(), 1).unwrap();
    let pc = PointCloud::from_points(vec![Vec3::new(0.01, 0.02, 0.05)]);
    let bind = Bindings::new(Tape::new(), &model.params);
    let (sparse, _dense, point_token) = model.encode(&bind, &pc).unwrap();
    assert_eq!(sparse.coords.len(), 1);
    assert_eq!(point_token, vec![0]);
    // The token sits at its voxel center.
    let c = sparse.coords[0];
    let cell = model.cfg.sparse_cell;
    for (p, q) in [(c.x, 0.01), (c.y, 0.02), (c.z, 0.05)] {
        assert!((p - q).abs() <= cell);
    }
}

#[test]
fn encode_rejects_empty_cloud() {
    let model = Model::new(tiny_cfg(), 1).unwrap();
    let bind = Bindings::new(Tape::new(), &model.params);
    assert!(model.encode(&bind, &PointCloud::default()).is_err());
}

#[test]
fn forward_is_permutation_invariant() {
    let model = Model::new(tiny_cfg(), 2).unwrap();
    let pc = random_cloud(120, 3);
    let perm: Vec<usize> = (0..pc.len()).rev().collect();
    let shuffled = pc.select(&perm);

    let fa = model.forward(&pc, 7).unwrap();
    let fb = model.forward(&shuffled, 7).unwrap();
    assert_eq!(*fa.queries.values(), *fb.queries.values());
    assert_eq!(*fa.class_logits.values(), *fb.class_logits.values());
    assert_eq!(
        *fa.final_mask_logits().values(),
        *fb.final_mask_logits().values()
    );
    // Point-token maps correspond through the permutation.
    for (i, &pi) in perm.iter().enumerate() {
        assert_eq!(fa.point_token[pi], fb.point_token[i]);
    }
}

#[test]
fn dense_features_shift_with_one_cell_translation() {
    let mut cfg = tiny_cfg();
    cfg.dense_res = 16;
    let model = Model::new(cfg, 4).unwrap();
    // A small blob well inside the workspace.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Vec3> = (0..200)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-0.02..0.02),
                rng.gen_range(-0.02..0.02),
                0.13 + rng.gen_range(-0.02..0.02),
            )
        })
        .collect();
    let pc = PointCloud::from_points(pts.clone());
    let cell = model.dense_cell();
    let shifted =
        PointCloud::from_points(pts.iter().map(|p| *p + Vec3::new(cell.x, 0.0, 0.0)).collect());

    let bind = Bindings::new(Tape::new(), &model.params);
    let (_s1, d1, _) = model.encode(&bind, &pc).unwrap();
    let (_s2, d2, _) = model.encode(&bind, &shifted).unwrap();
    let v1 = d1.feats.values();
    let v2 = d2.feats.values();
    let g = model.cfg.dense_res;
    let dv = model.cfg.d_v;
    // Interior cells (margin 6 covers the largest dilation stack) must obey
    // feats2[ix + 1, iy, iz] == feats1[ix, iy, iz].
    let margin = 6;
    let mut checked = 0;
    for iz in margin..g - margin {
        for iy in margin..g - margin {
            for ix in margin..g - margin - 1 {
                let a = ix + g * (iy + g * iz);
                let b = (ix + 1) + g * (iy + g * iz);
                for c in 0..dv {
                    let diff = (v1[a * dv + c] - v2[b * dv + c]).abs();
                    assert!(diff < 1e-9, "dense shift mismatch at {ix},{iy},{iz}: {diff}");
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn aggregate_nearest_cell_tie_takes_lower_index() {
    let model = Model::new(tiny_cfg(), 6).unwrap();
    let bind = Bindings::new(Tape::new(), &model.params);
    let pc = random_cloud(40, 7);
    let (_, dense, _) = model.encode(&bind, &pc).unwrap();
    // Exactly at a cell center: the containing cell.
    let center = dense.origin
        + Vec3::new(dense.cell.x * 2.5, dense.cell.y * 1.5, dense.cell.z * 3.5);
    assert_eq!(
        model.nearest_dense_cell(&dense, center),
        2 + dense.dims.0 * (1 + dense.dims.1 * 3)
    );
    // Exactly between cells 2 and 3 along x: tie goes to the lower index.
    let boundary = dense.origin
        + Vec3::new(dense.cell.x * 3.0, dense.cell.y * 1.5, dense.cell.z * 3.5);
    assert_eq!(
        model.nearest_dense_cell(&dense, boundary),
        2 + dense.dims.0 * (1 + dense.dims.1 * 3)
    );
    // Outside the workspace: clamped to the border cell.
    let outside = dense.origin - Vec3::new(1.0, 1.0, 1.0);
    assert_eq!(model.nearest_dense_cell(&dense, outside), 0);
}

#[test]
fn attention_weights_normalize_and_degenerate_cases() {
    let model = Model::new(tiny_cfg(), 8).unwrap();
    let bind = Bindings::new(Tape::new(), &model.params);
    let dq = model.cfg.d_q;
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // One query, one token: the weight is exactly 1.
    let q = bind.tape.constant(1, dq, (0..dq).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let t = bind.tape.constant(1, dq, (0..dq).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (_, attns) = model.attention(&bind, "ref0.cross", &q, &t, &t, None);
    for a in &attns {
        assert_eq!(*a.values(), vec![1.0]);
    }

    // Two identical tokens: 0.5 / 0.5.
    let row: Vec<f64> = (0..dq).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let two = bind.tape.constant(2, dq, [row.clone(), row].concat());
    let (_, attns) = model.attention(&bind, "ref0.cross", &q, &two, &two, None);
    for a in &attns {
        let v = a.values();
        assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);
    }

    // Random case: every row sums to one.
    let qs = bind.tape.constant(3, dq, (0..3 * dq).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let ts = bind.tape.constant(5, dq, (0..5 * dq).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (_, attns) = model.attention(&bind, "ref0.cross", &qs, &ts, &ts, None);
    for a in &attns {
        let v = a.values();
        for r in 0..3 {
            let s: f64 = v[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn masked_attention_ignores_masked_out_features() {
    let model = Model::new(tiny_cfg(), 10).unwrap();
    let bind = Bindings::new(Tape::new(), &model.params);
    let dq = model.cfg.d_q;
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let q = bind.tape.constant(1, dq, (0..dq).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let toks: Vec<f64> = (0..4 * dq).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Mask allows tokens 0 and 2 only.
    let bias = vec![0.0, -1e9, 0.0, -1e9];

    let t1 = bind.tape.constant(4, dq, toks.clone());
    let (out1, _) = model.attention(&bind, "ref0.cross", &q, &t1, &t1, Some(&bias));

    // Perturb the masked-out tokens 1 and 3 arbitrarily.
    let mut toks2 = toks;
    for c in 0..dq {
        toks2[dq + c] += 10.0;
        toks2[3 * dq + c] -= 7.0;
    }
    let t2 = bind.tape.constant(4, dq, toks2);
    let (out2, _) = model.attention(&bind, "ref0.cross", &q, &t2, &t2, Some(&bias));
    assert_eq!(*out1.values(), *out2.values());
}

#[test]
fn refine_round_zero_mask_is_all_pass_and_fallback_applies() {
    // With every mask logit pushed strongly negative, round 1 must fall back
    // to attending everywhere rather than an empty mask.
    let mut model = Model::new(tiny_cfg(), 12).unwrap();
    model.params.map_param("mask.q2.w", |_| 0.0).unwrap();
    model.params.map_param("mask.q2.b", |_| -5.0).unwrap();
    let pc = random_cloud(60, 13);
    let fp = model.forward(&pc, 3).unwrap();
    // All-negative logits mean empty masks each round; the forward must still
    // produce finite outputs through the fallback.
    assert!(fp.queries.values().iter().all(|v| v.is_finite()));
    let logits = fp.final_mask_logits().values();
    assert!(logits.iter().all(|&l| l < 0.0));
}

#[test]
fn classifier_uniform_when_zeroed_and_normalized() {
    let mut model = Model::new(tiny_cfg(), 14).unwrap();
    let nc = model.cfg.n_classes + 1;
    model.params.map_param("cls.fc2.w", |_| 0.0).unwrap();
    model.params.map_param("cls.fc2.b", |_| 0.0).unwrap();
    let pc = random_cloud(50, 15);
    let fp = model.forward(&pc, 1).unwrap();
    let logits = fp.class_logits.values();
    assert!(logits.iter().all(|&l| l == 0.0));
    // Softmax of zeros: uniform over the classes.
    let probs = 1.0 / nc as f64;
    let frozen_probs: Vec<f64> = vec![probs; nc];
    let _ = frozen_probs;

    // Dominant logit case through a crafted head bias.
    let mut model2 = Model::new(tiny_cfg(), 16).unwrap();
    model2.params.map_param("cls.fc2.w", |_| 0.0).unwrap();
    let p = model2.params.get_mut("cls.fc2.b").unwrap();
    p.data[0] = 10.0;
    let fp2 = model2.forward(&pc, 1).unwrap();
    let l2 = fp2.class_logits.values();
    let row = &l2[0..nc];
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    assert!(exps[0] / sum > 0.999);

    // Softmax sums to one for random queries.
    let model3 = Model::new(tiny_cfg(), 17).unwrap();
    let fp3 = model3.forward(&random_cloud(80, 18), 2).unwrap();
    let l3 = fp3.class_logits.values();
    for q in 0..model3.cfg.n_queries {
        let row = &l3[q * nc..(q + 1) * nc];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let total: f64 = row.iter().map(|&l| (l - max).exp() / sum).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn trilinear_reproduces_linear_fields() {
    let model = Model::new(tiny_cfg(), 19).unwrap();
    let bind = Bindings::new(Tape::new(), &model.params);
    let g = 6usize;
    let origin = Vec3::new(-0.15, -0.15, 0.0);
    let cell = Vec3::new(0.05, 0.05, 0.05);
    // Feature = [x, 2y - z] evaluated at each cell center.
    let mut data = Vec::new();
    for iz in 0..g {
        for iy in 0..g {
            for ix in 0..g {
                let p = Vec3::new(
                    origin.x + (ix as f64 + 0.5) * cell.x,
                    origin.y + (iy as f64 + 0.5) * cell.y,
                    origin.z + (iz as f64 + 0.5) * cell.z,
                );
                data.push(p.x);
                data.push(2.0 * p.y - p.z);
            }
        }
    }
    let dense = DenseGrid {
        origin,
        cell,
        dims: (g, g, g),
        feats: bind.tape.constant(g * g * g, 2, data),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    // Strictly inside the center-lattice hull so no clamping applies.
    let xs: Vec<Vec3> = (0..50)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-0.12..0.12),
                rng.gen_range(-0.12..0.12),
                rng.gen_range(0.03..0.27),
            )
        })
        .collect();
    let tri = model.trilinear(&dense, &xs);
    let v = tri.values();
    for (i, x) in xs.iter().enumerate() {
        assert!((v[i * 2] - x.x).abs() < 1e-9);
        assert!((v[i * 2 + 1] - (2.0 * x.y - x.z)).abs() < 1e-9);
    }

    // At a cell center the result is exactly that cell's feature.
    let center = Vec3::new(
        origin.x + 2.5 * cell.x,
        origin.y + 3.5 * cell.y,
        origin.z + 1.5 * cell.z,
    );
    let tri = model.trilinear(&dense, &[center]);
    let v = tri.values();
    assert!((v[0] - center.x).abs() < 1e-12);
    assert!((v[1] - (2.0 * center.y - center.z)).abs() < 1e-12);
}

#[test]
fn interpolation_distinguishes_opposite_sides() {
    let model = Model::new(tiny_cfg(), 21).unwrap();
    let pc = PointCloud::from_points(vec![Vec3::new(0.0, 0.0, 0.1)]);
    let fp = model.forward(&pc, 1).unwrap();
    // Two query points mirror-symmetric about the single token.
    let token = fp.token_coords[0];
    let d = Vec3::new(0.01, 0.0, 0.0);
    let feats = model.interpolate_features(
        &fp.bind,
        &[token + d, token - d],
        &fp.tokens,
        &fp.token_coords,
        &fp.dense,
    );
    let v = feats.values();
    let dqf = feats.cols();
    let a = &v[0..dqf];
    let b = &v[dqf..2 * dqf];
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-6, "symmetric points produced identical features");
}

#[test]
fn occupancy_decoder_zero_head_and_continuity() {
    let mut model = Model::new(tiny_cfg(), 22).unwrap();
    model.params.map_param("occ.out.w", |_| 0.0).unwrap();
    model.params.map_param("occ.out.b", |_| 0.0).unwrap();
    let pc = random_cloud(60, 23);
    let fp = model.forward(&pc, 1).unwrap();
    let frozen = model_freeze_all(&model, &fp, &pc);
    let probs = model.frozen_occupancy(&frozen, 0, &[Vec3::new(0.0, 0.0, 0.1)]);
    assert!((probs[0] - 0.5).abs() < 1e-12);

    // Continuity at a random point for a non-zero head.
    let model = Model::new(tiny_cfg(), 24).unwrap();
    let fp = model.forward(&pc, 1).unwrap();
    let frozen = model_freeze_all(&model, &fp, &pc);
    let x = Vec3::new(0.01, -0.02, 0.08);
    let delta = Vec3::new(1e-6, 0.0, 0.0);
    let p = model.frozen_occupancy(&frozen, 0, &[x, x + delta]);
    assert!((p[0] - p[1]).abs() < 1e-4);
}

#[test]
fn grasp_decoder_shapes_and_zero_head() {
    let mut model = Model::new(tiny_cfg(), 25).unwrap();
    for name in ["gr.aff.w", "gr.aff.b", "gr.width.w", "gr.width.b"] {
        model.params.map_param(name, |_| 0.0).unwrap();
    }
    let pc = random_cloud(60, 26);
    let fp = model.forward(&pc, 1).unwrap();
    let frozen = model_freeze_all(&model, &fp, &pc);
    let (probs, widths) = model.frozen_grasp(&frozen, 0, &[Vec3::new(0.0, 0.0, 0.1)]);
    assert_eq!(probs[0].len(), model.cfg.n_alpha);
    for p in &probs[0] {
        assert!((p - 0.5).abs() < 1e-12);
    }
    assert!((widths[0] - model.cfg.w_max / 2.0).abs() < 1e-12);

    // Default config emits twelve affordance slots and one width.
    let model12 = Model::new(NetConfig::default(), 27).unwrap();
    let fp12 = model12.forward(&pc, 1).unwrap();
    let frozen12 = model_freeze_all(&model12, &fp12, &pc);
    let (probs, widths) = model12.frozen_grasp(&frozen12, 0, &[Vec3::new(0.0, 0.0, 0.1)]);
    assert_eq!((probs[0].len(), widths.len()), (12, 1));
}

/// Freeze while keeping every query active (classifier decisions vary under
/// random init; tests want a stable instance 0).
fn model_freeze_all(model: &Model, fp: &ForwardPass, pc: &PointCloud) -> FrozenScene {
    let mut frozen = model.freeze(fp, pc);
    if frozen.queries.is_empty() {
        let dq = model.cfg.d_q;
        let q_vals = fp.queries.values();
        let g_vals = fp.grasp_queries.values();
        frozen.queries.push(InstanceQuery {
            embedding: q_vals[0..dq].to_vec(),
            anchor: fp.anchors[0],
        });
        frozen.grasp_embeddings.push(g_vals[0..dq].to_vec());
        frozen.active_indices.push(0);
        frozen.class_probs.push(vec![1.0 / (model.cfg.n_classes + 1) as f64; model.cfg.n_classes + 1]);
        frozen.point_masks.push(vec![1.0; pc.len()]);
        frozen.support.push(crate::fields::default_workspace());
    } else {
        for s in &mut frozen.support {
            *s = crate::fields::default_workspace();
        }
    }
    frozen
}

#[test]
fn forward_then_freeze_runs_model_field() {
    let model = Model::new(tiny_cfg(), 28).unwrap();
    let pc = random_cloud(80, 29);
    let fp = model.forward(&pc, 5).unwrap();
    let frozen = model_freeze_all(&model, &fp, &pc);
    let field = ModelField { model: &model, frozen: &frozen };
    use crate::fields::OccupancyField;
    let v = field.eval(Vec3::new(0.0, 0.0, 0.1));
    assert_eq!(v.len(), frozen.queries.len());
    for p in v {
        assert!((0.0..=1.0).contains(&p));
    }
}
