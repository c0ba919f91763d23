use super::metrics::{sample_surface, MeshContainment};
use super::*;
use crate::geom::RotMat;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sphere(r: f64, center: Vec3) -> Primitive {
    Primitive::new(
        PrimitiveKind::Sphere,
        GraspPose::new(RotMat::IDENTITY, center),
        Vec3::new(r, r, r),
    )
}

fn boxp(half: Vec3, center: Vec3) -> Primitive {
    Primitive::new(PrimitiveKind::Box, GraspPose::new(RotMat::IDENTITY, center), half)
}

fn cylinder(r: f64, h: f64, center: Vec3) -> Primitive {
    Primitive::new(
        PrimitiveKind::Cylinder,
        GraspPose::new(RotMat::IDENTITY, center),
        Vec3::new(r, r, h),
    )
}

// --- sdf ---------------------------------------------------------------------

#[test]
fn sdf_closed_forms() {
    let s = sphere(0.05, Vec3::ZERO);
    assert!(s.sdf(Vec3::new(0.0, 0.0, 0.05)).abs() < 1e-15);

    let b = boxp(Vec3::new(0.05, 0.05, 0.05), Vec3::ZERO);
    assert!((b.sdf(Vec3::ZERO) + 0.05).abs() < 1e-15);

    let c = cylinder(0.03, 0.1, Vec3::ZERO);
    assert!((c.sdf(Vec3::new(0.06, 0.0, 0.0)) - 0.03).abs() < 1e-15);
    // Above the cap: corner distance.
    let d = c.sdf(Vec3::new(0.0, 0.0, 0.08));
    assert!((d - 0.03).abs() < 1e-12);
}

#[test]
fn sdf_zero_on_sampled_surface() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in [PrimitiveKind::Sphere, PrimitiveKind::Box, PrimitiveKind::Cylinder] {
        for trial in 0..5 {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let pose = GraspPose::new(
                RotMat::rot_z(angle),
                Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.1),
            );
            let size = Vec3::new(
                rng.gen_range(0.02..0.05),
                rng.gen_range(0.02..0.05),
                rng.gen_range(0.04..0.12),
            );
            let p = Primitive::new(kind, pose, size);
            for s in p.sample_surface(200, trial) {
                assert!(p.sdf(s).abs() < 1e-9, "{kind:?} surface sample has sdf {}", p.sdf(s));
            }
        }
    }
}

#[test]
fn surface_normals_match_sdf_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let prims = [
        sphere(0.04, Vec3::new(0.02, -0.01, 0.05)),
        boxp(Vec3::new(0.03, 0.02, 0.05), Vec3::new(0.0, 0.05, 0.06)),
        cylinder(0.025, 0.09, Vec3::new(-0.04, 0.0, 0.05)),
    ];
    let h = 1e-6;
    for p in &prims {
        for s in p.sample_surface(100, rng.gen()) {
            let n = p.surface_normal(s).as_vec();
            let g = Vec3::new(
                p.sdf(s + Vec3::new(h, 0.0, 0.0)) - p.sdf(s - Vec3::new(h, 0.0, 0.0)),
                p.sdf(s + Vec3::new(0.0, h, 0.0)) - p.sdf(s - Vec3::new(0.0, h, 0.0)),
                p.sdf(s + Vec3::new(0.0, 0.0, h)) - p.sdf(s - Vec3::new(0.0, 0.0, h)),
            );
            if let Ok(gn) = g.normalized() {
                // Skip edge bands where the face pick is ambiguous.
                if n.dot(gn.as_vec()) < 0.999 {
                    let q = p.pose.inverse_transform_point(s);
                    let near_edge = match p.kind {
                        PrimitiveKind::Sphere => false,
                        PrimitiveKind::Box => {
                            let d = [
                                (q.x.abs() - p.size.x).abs(),
                                (q.y.abs() - p.size.y).abs(),
                                (q.z.abs() - p.size.z).abs(),
                            ];
                            d.iter().filter(|v| **v < 2e-3).count() >= 2
                        }
                        PrimitiveKind::Cylinder => {
                            let radial = ((q.x * q.x + q.y * q.y).sqrt() - p.size.x).abs();
                            let axial = (q.z.abs() - p.size.z / 2.0).abs();
                            radial < 2e-3 && axial < 2e-3
                        }
                    };
                    assert!(near_edge, "normal mismatch away from edges: {n:?} vs {gn:?}");
                }
            }
        }
    }
}

#[test]
fn ray_intersections_against_sdf_march() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let prims = [
        sphere(0.04, Vec3::new(0.0, 0.0, 0.05)),
        boxp(Vec3::new(0.03, 0.04, 0.02), Vec3::new(0.01, 0.0, 0.04)),
        cylinder(0.03, 0.08, Vec3::new(-0.02, 0.03, 0.05)),
    ];
    for p in &prims {
        for _ in 0..200 {
            let origin = Vec3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.1..0.3),
            );
            let dir = loop {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 {
                    break v * (1.0 / v.norm());
                }
            };
            let hit = p.ray_intersections(origin, dir);
            // Oracle: sign of the sdf sampled densely along the ray.
            let mut inside_t = None;
            for i in 0..4000 {
                let t = -0.3 + 0.7 * i as f64 / 4000.0;
                if p.sdf(origin + dir * t) < -1e-5 {
                    inside_t = Some(t);
                    break;
                }
            }
            match (hit, inside_t) {
                (Some((t0, t1)), Some(ti)) => {
                    assert!(t0 <= ti && ti <= t1, "interior sample outside [t0,t1]");
                }
                (None, Some(ti)) => panic!("missed ray with interior point at t={ti}"),
                _ => {}
            }
        }
    }
}

// --- gt field and scene occupancy ------------------------------------------------

#[test]
fn gt_field_per_instance_indicator() {
    let scene = SceneGT::new(vec![
        sphere(0.03, Vec3::new(-0.08, 0.0, 0.03)),
        sphere(0.03, Vec3::new(0.0, 0.0, 0.03)),
        sphere(0.03, Vec3::new(0.08, 0.0, 0.03)),
    ]);
    let f = gt_field(&scene);
    assert_eq!(f.eval(Vec3::new(0.0, 0.0, 0.03)), vec![0.0, 1.0, 0.0]);
    assert_eq!(f.eval(Vec3::new(0.0, 0.0, 0.25)), vec![0.0, 0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let p = Vec3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(0.0..0.3),
        );
        let vals = f.eval(p);
        for (i, prim) in scene.primitives.iter().enumerate() {
            assert_eq!(vals[i] > 0.5, prim.sdf(p) <= 0.0);
        }
    }
}

#[test]
fn scene_occupancy_is_max() {
    struct Fixed(Vec<f64>);
    impl OccupancyField for Fixed {
        fn num_instances(&self) -> usize {
            self.0.len()
        }
        fn eval_into(&self, _x: Vec3, out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
    }
    assert_eq!(scene_occupancy(&Fixed(vec![0.7]), Vec3::ZERO), 0.7);
    assert_eq!(scene_occupancy(&Fixed(vec![0.2, 0.9, 0.1]), Vec3::ZERO), 0.9);
    assert_eq!(scene_occupancy(&Fixed(vec![0.9, 0.1, 0.2]), Vec3::ZERO), 0.9);
    // Larger than every per-instance value.
    let f = Fixed(vec![0.3, 0.5, 0.4]);
    let m = scene_occupancy(&f, Vec3::ZERO);
    assert!(f.eval(Vec3::ZERO).iter().all(|&v| m >= v));
}

// --- marching cubes ---------------------------------------------------------------

fn sphere_occ(r: f64, center: Vec3) -> impl Fn(Vec3) -> f64 + Sync {
    move |x: Vec3| (0.5 - ((x - center).norm() - r) * 50.0).clamp(0.0, 1.0)
}

#[test]
fn marching_cubes_constant_field_is_empty() {
    let mesh = marching_cubes(|_| 0.0, default_workspace(), 16, 0.5).unwrap();
    assert!(mesh.is_empty());
    let mesh = marching_cubes(|_| 1.0, default_workspace(), 16, 0.5).unwrap();
    assert!(mesh.is_empty());
}

#[test]
fn marching_cubes_sphere_is_closed_and_accurate() {
    let r = 0.05;
    let center = Vec3::new(0.0, 0.0, 0.15);
    let mesh = marching_cubes(sphere_occ(r, center), default_workspace(), 64, 0.5).unwrap();
    assert!(!mesh.is_empty());
    assert!(mesh.is_closed());
    assert_eq!(mesh.euler_characteristic(), 2);
    let area = mesh.surface_area();
    let expect = 4.0 * std::f64::consts::PI * r * r;
    assert!(
        (area - expect).abs() / expect < 0.05,
        "area {area} vs analytic {expect}"
    );
    // Every vertex close to the sphere surface.
    for v in &mesh.vertices {
        assert!(((*v - center).norm() - r).abs() < 2e-3);
    }
}

#[test]
fn marching_cubes_hard_field_has_manifold_edges() {
    let scene = SceneGT::new(vec![
        sphere(0.04, Vec3::new(-0.05, 0.0, 0.05)),
        boxp(Vec3::new(0.03, 0.03, 0.04), Vec3::new(0.06, 0.0, 0.04)),
    ]);
    let f = gt_field(&scene);
    let mesh = marching_cubes(
        |x| scene_occupancy(&f, x),
        default_workspace(),
        24,
        0.5,
    )
    .unwrap();
    assert!(!mesh.is_empty());
    assert!(mesh.has_manifold_edges());
}

#[test]
fn marching_cubes_random_smooth_field_is_manifold() {
    let f = |p: Vec3| {
        0.5 + 0.5 * ((p.x * 37.0).sin() * (p.y * 29.0).cos() * (p.z * 23.0).sin())
    };
    let mesh = marching_cubes(f, default_workspace(), 20, 0.5).unwrap();
    assert!(mesh.has_manifold_edges());
}

// --- chamfer ------------------------------------------------------------------------

fn unit_square(z: f64) -> TriangleMesh {
    TriangleMesh {
        vertices: vec![
            Vec3::new(0.0, 0.0, z),
            Vec3::new(1.0, 0.0, z),
            Vec3::new(1.0, 1.0, z),
            Vec3::new(0.0, 1.0, z),
        ],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
    }
}

#[test]
fn chamfer_self_is_zero() {
    let mesh = marching_cubes(sphere_occ(0.05, Vec3::new(0.0, 0.0, 0.15)), default_workspace(), 24, 0.5)
        .unwrap();
    let d = chamfer_l1(&mesh, &mesh, 2000, 9).unwrap();
    assert!(d < 1e-6, "self chamfer {d}");
}

#[test]
fn chamfer_parallel_squares_equals_offset() {
    let d = 0.1;
    let a = unit_square(0.0);
    let b = unit_square(d);
    let got = chamfer_l1(&a, &b, 5000, 3).unwrap();
    assert!((got - d).abs() < 1e-12, "chamfer {got} vs offset {d}");
}

#[test]
fn chamfer_inflated_sphere_is_one_millimeter() {
    let c = Vec3::new(0.0, 0.0, 0.15);
    let a = marching_cubes(sphere_occ(0.05, c), default_workspace(), 48, 0.5).unwrap();
    let b = marching_cubes(sphere_occ(0.051, c), default_workspace(), 48, 0.5).unwrap();
    let got = chamfer_l1(&a, &b, 8000, 4).unwrap();
    assert!(
        (got - 0.001).abs() < 0.0001,
        "chamfer {got} vs 1 mm (±10%)"
    );
}

#[test]
fn chamfer_is_symmetric() {
    let a = unit_square(0.0);
    let b = unit_square(0.07);
    let ab = chamfer_l1(&a, &b, 3000, 5).unwrap();
    let ba = chamfer_l1(&b, &a, 3000, 5).unwrap();
    // Same construction up to which mesh supplies which sample set.
    assert!((ab - ba).abs() < 1e-4);
    assert!(chamfer_l1(&a, &TriangleMesh::default(), 10, 0).is_err());
}

// --- volumetric IoU ------------------------------------------------------------------

#[test]
fn iou_identical_and_disjoint() {
    let ws = default_workspace();
    let a = sphere_occ(0.05, Vec3::new(0.0, 0.0, 0.15));
    let same = sphere_occ(0.05, Vec3::new(0.0, 0.0, 0.15));
    assert_eq!(volumetric_iou(&a, &same, ws, 50_000, 1).unwrap(), 1.0);

    let b = sphere_occ(0.03, Vec3::new(0.1, 0.1, 0.05));
    assert_eq!(volumetric_iou(&a, &b, ws, 50_000, 2).unwrap(), 0.0);

    // Both empty: defined as 1.
    assert_eq!(volumetric_iou(|_| 0.0, |_| 0.0, ws, 1000, 3).unwrap(), 1.0);
}

#[test]
fn iou_concentric_spheres_is_half() {
    let c = Vec3::new(0.0, 0.0, 0.15);
    let r = 0.08;
    let r_half_vol = r * 2f64.powf(-1.0 / 3.0);
    let a = sphere_occ(r, c);
    let b = sphere_occ(r_half_vol, c);
    let got = volumetric_iou(&a, &b, default_workspace(), 100_000, 7).unwrap();
    assert!((got - 0.5).abs() < 0.02, "IoU {got}");
}

#[test]
fn iou_symmetry() {
    let c = Vec3::new(0.0, 0.0, 0.15);
    let a = sphere_occ(0.06, c);
    let b = sphere_occ(0.05, c + Vec3::new(0.02, 0.0, 0.0));
    let ab = volumetric_iou(&a, &b, default_workspace(), 30_000, 11).unwrap();
    let ba = volumetric_iou(&b, &a, default_workspace(), 30_000, 11).unwrap();
    assert_eq!(ab, ba);
}

// --- collision checking ----------------------------------------------------------------

#[test]
fn collision_empty_scene_above_table_is_free() {
    struct Empty;
    impl OccupancyField for Empty {
        fn num_instances(&self) -> usize {
            1
        }
        fn eval_into(&self, _x: Vec3, out: &mut [f64]) {
            out[0] = 0.0;
        }
    }
    let gripper = GripperModel::default();
    let pose = GraspPose::new(RotMat::IDENTITY, Vec3::new(0.0, 0.0, 0.15));
    let hit = check_grasp_collision(&pose, 0.04, 0, &Empty, &gripper, 0.0, 0.5).unwrap();
    assert!(!hit);

    // Same pose dropped to the table plane: finger/palm points below.
    let pose_low = GraspPose::new(RotMat::IDENTITY, Vec3::new(0.0, 0.0, -0.001));
    let hit = check_grasp_collision(&pose_low, 0.04, 0, &Empty, &gripper, 0.0, 0.5).unwrap();
    assert!(hit);

    assert!(check_grasp_collision(&pose, 0.04, 3, &Empty, &gripper, 0.0, 0.5).is_err());
}

#[test]
fn collision_sees_adjacent_box_only_on_blocked_side() {
    // Two boxes 1 cm apart along x; grasp box A (target 0) with the closing
    // axis along y so the fingers stay clear of box B, approaching from +z.
    let a = boxp(Vec3::new(0.02, 0.02, 0.04), Vec3::new(-0.025, 0.0, 0.04));
    let b = boxp(Vec3::new(0.02, 0.02, 0.04), Vec3::new(0.025, 0.0, 0.04));
    let scene = SceneGT::new(vec![a, b]);
    let f = gt_field(&scene);
    let gripper = GripperModel::default();
    let cfg = crate::geom::GraspConfig::default();

    // Free side: contact on the +y face of box A, normal +y, fingers close
    // along y, approach down.
    let contact = Vec3::new(-0.025, 0.02, 0.07);
    let n = crate::geom::UnitVec3::from_xyz(0.0, 1.0, 0.0).unwrap();
    let width = 0.04;
    let pose = crate::geom::pose_at_angle(contact, n, width, 0.0, &cfg).unwrap();
    let free = check_grasp_collision(&pose, width + 0.005, 0, &f, &gripper, 0.0, 0.5).unwrap();
    assert!(!free, "free-side grasp should not collide");

    // Blocked side: contact on the −x face of box A, normal −x: the far
    // finger must pass through the 1 cm gap toward box B and collide.
    let contact = Vec3::new(-0.045, 0.0, 0.07);
    let n = crate::geom::UnitVec3::from_xyz(-1.0, 0.0, 0.0).unwrap();
    let width = 0.04;
    let pose = crate::geom::pose_at_angle(contact, n, width, 0.0, &cfg).unwrap();
    let blocked = check_grasp_collision(&pose, width + 0.005, 0, &f, &gripper, 0.0, 0.5).unwrap();
    assert!(blocked, "grasp through the neighbor should collide");
}

#[test]
fn collision_is_monotone_in_sample_density() {
    let scene = SceneGT::new(vec![sphere(0.03, Vec3::new(0.0, 0.0, 0.03))]);
    let f = gt_field(&scene);
    let coarse = GripperModel::new(0.08, 0.004);
    let dense = GripperModel::new(0.08, 0.002);
    let cfg = crate::geom::GraspConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let angles = crate::geom::approach_angles(&cfg);
    // Fake a second instance so the sphere is an obstacle.
    let mut scene2 = scene.clone();
    scene2.primitives.push(sphere(0.02, Vec3::new(0.1, 0.1, 0.02)));
    let f2 = gt_field(&scene2);
    let _ = f;
    for _ in 0..100 {
        let contact = Vec3::new(
            rng.gen_range(-0.08..0.08),
            rng.gen_range(-0.08..0.08),
            rng.gen_range(0.01..0.1),
        );
        let n = loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                break v.normalized().unwrap();
            }
        };
        let alpha = angles[rng.gen_range(0..angles.len())];
        let width = rng.gen_range(0.0..0.075);
        let pose = crate::geom::pose_at_angle(contact, n, width, alpha, &cfg).unwrap();
        let hit_coarse =
            check_grasp_collision(&pose, width, 1, &f2, &coarse, 0.0, 0.5).unwrap();
        let hit_dense = check_grasp_collision(&pose, width, 1, &f2, &dense, 0.0, 0.5).unwrap();
        // Denser sampling can only find more collisions.
        if hit_coarse {
            assert!(hit_dense);
        }
    }
}

// --- resample_surface ---------------------------------------------------------------

#[test]
fn resample_sphere_points_and_normals() {
    let c = Vec3::new(0.0, 0.0, 0.15);
    let r = 0.05;
    let scene = SceneGT::new(vec![sphere(r, c)]);
    let f = gt_field(&scene);
    let pc = resample_surface(&f, 0, 200, default_workspace(), 3).unwrap();
    assert!(pc.len() >= 150, "only {} resampled points", pc.len());
    let normals = pc.normals.as_ref().unwrap();
    for (p, n) in pc.points.iter().zip(normals) {
        assert!(((*p - c).norm() - r).abs() < 1e-3);
        let radial = (*p - c).normalized().unwrap().as_vec();
        let cos = n.as_vec().dot(radial);
        assert!(cos > (5.0f64).to_radians().cos(), "normal off-radial: cos {cos}");
    }
}

#[test]
fn resample_empty_field_returns_empty() {
    struct Empty;
    impl OccupancyField for Empty {
        fn num_instances(&self) -> usize {
            1
        }
        fn eval_into(&self, _x: Vec3, out: &mut [f64]) {
            out[0] = 0.0;
        }
    }
    let pc = resample_surface(&Empty, 0, 50, default_workspace(), 1).unwrap();
    assert!(pc.is_empty());
}

#[test]
fn resample_box_normals_axis_aligned() {
    let b = boxp(Vec3::new(0.04, 0.03, 0.05), Vec3::new(0.0, 0.0, 0.08));
    let scene = SceneGT::new(vec![b]);
    let f = gt_field(&scene);
    let pc = resample_surface(&f, 0, 300, default_workspace(), 5).unwrap();
    assert!(pc.len() >= 200);
    let normals = pc.normals.as_ref().unwrap();
    for (p, n) in pc.points.iter().zip(normals) {
        let q = p.to_array();
        let center = [0.0, 0.0, 0.08];
        let half = [0.04, 0.03, 0.05];
        // Distance to each face plane; skip 2 mm edge bands.
        let d: Vec<f64> = (0..3).map(|i| half[i] - (q[i] - center[i]).abs()).collect();
        let near: Vec<usize> = (0..3).filter(|&i| d[i] < 0.002).collect();
        if near.len() != 1 {
            continue;
        }
        let axis = near[0];
        let expect_sign = (q[axis] - center[axis]).signum();
        let comp = n.as_vec().to_array()[axis] * expect_sign;
        assert!(comp > (5.0f64).to_radians().cos(), "box normal off-axis: {comp}");
    }
}

#[test]
fn resample_continuous_field_hits_half_level() {
    let c = Vec3::new(0.0, 0.0, 0.15);
    struct Smooth(Vec3);
    impl OccupancyField for Smooth {
        fn num_instances(&self) -> usize {
            1
        }
        fn eval_into(&self, x: Vec3, out: &mut [f64]) {
            out[0] = (0.5 - ((x - self.0).norm() - 0.05) * 20.0).clamp(0.0, 1.0);
        }
    }
    let f = Smooth(c);
    let pc = resample_surface(&f, 0, 100, default_workspace(), 9).unwrap();
    assert!(!pc.is_empty());
    for p in &pc.points {
        let occ = f.eval(*p)[0];
        assert!((occ - 0.5).abs() <= 1e-3, "resampled occupancy {occ}");
    }
}

// --- mesh io -----------------------------------------------------------------------

#[test]
fn mesh_export_round_trips() {
    let mesh =
        marching_cubes(sphere_occ(0.04, Vec3::new(0.0, 0.0, 0.1)), default_workspace(), 16, 0.5)
            .unwrap();
    let dir = std::env::temp_dir().join("icgrasp_mesh_io");
    std::fs::create_dir_all(&dir).unwrap();

    let obj = dir.join("m.obj");
    mesh_io::write_obj(&mesh, &obj).unwrap();
    let back = mesh_io::read_obj(&obj).unwrap();
    assert_eq!(back.triangles, mesh.triangles);
    for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
        assert!((*a - *b).norm() < 1e-9);
    }

    let ply = dir.join("m.ply");
    mesh_io::write_mesh_ply(&mesh, &ply).unwrap();
    let back = mesh_io::read_mesh_ply(&ply).unwrap();
    assert_eq!(back.triangles, mesh.triangles);
    assert_eq!(back.vertices, mesh.vertices);

    let raw = dir.join("grid.raw");
    mesh_io::write_field_grid(
        |p| p.x + p.y + p.z,
        Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0)),
        [4, 4, 4],
        &raw,
    )
    .unwrap();
    let bytes = std::fs::read(&raw).unwrap();
    assert_eq!(bytes.len(), 64 * 8);
    // x-fastest: the second value is (1/3, 0, 0).
    let second = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    assert!((second - 1.0 / 3.0).abs() < 1e-12);
    assert!(raw.with_extension("raw.json").exists());
}

// --- containment --------------------------------------------------------------------

#[test]
fn mesh_containment_matches_field_on_sphere() {
    let c = Vec3::new(0.0, 0.0, 0.15);
    let r = 0.05;
    let mesh = marching_cubes(sphere_occ(r, c), default_workspace(), 32, 0.5).unwrap();
    let cont = MeshContainment::build(&mesh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut agree = 0;
    let mut total = 0;
    for _ in 0..5000 {
        let p = Vec3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(0.0..0.3),
        );
        let inside_true = (p - c).norm() < r;
        // Skip the shell where discretization decides.
        if ((p - c).norm() - r).abs() < 2e-3 {
            continue;
        }
        total += 1;
        if cont.contains(p) == inside_true {
            agree += 1;
        }
    }
    assert_eq!(agree, total, "containment disagreements: {}", total - agree);
}

#[test]
fn surface_samples_lie_on_mesh() {
    let mesh = unit_square(0.3);
    for p in sample_surface(&mesh, 500, 2).unwrap() {
        assert!((p.z - 0.3).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y));
    }
}
