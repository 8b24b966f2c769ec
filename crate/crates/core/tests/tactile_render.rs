use nalgebra::UnitQuaternion;
use tacsim::geometry::{box_trimesh, icosphere, Pose, TriMesh, Vec3};
use tacsim::tactile_render::{
    decode_map, encode_map, gaussian_kernel, indentation_from, render_heightmap, smooth_pyramid, Grid,
    IndentationMap, SensorConfig, SurfaceRef, DEFAULT_KERNEL_SIZES,
};

/// Sphere whose first vertex faces the camera, pressed `d` past the rest surface.
fn pressed_sphere(mesh: &TriMesh, r: f64, d: f64, cfg: &SensorConfig, offset: (f64, f64)) -> Pose {
    let v0 = mesh.vertices()[0].normalize();
    let rot = UnitQuaternion::rotation_between(&v0, &-Vec3::z()).unwrap();
    Pose::new(Vec3::new(offset.0, offset.1, cfg.gelpad_thickness + r - d), rot)
}

fn contact_pixels(ind: &IndentationMap) -> usize {
    ind.values.data().iter().filter(|&&v| v > 0.0).count()
}

#[test]
fn empty_scene_is_uniform_rest_depth() {
    let cfg = SensorConfig::default();
    let hm = render_heightmap(&[], &Pose::identity(), &cfg);
    assert_eq!((hm.values.height(), hm.values.width()), (480, 640));
    assert!(hm.values.data().iter().all(|&v| v == cfg.gelpad_thickness));
    let ind = indentation_from(&hm, &cfg);
    assert!(ind.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sphere_press_matches_cap_geometry() {
    let cfg = SensorConfig::default();
    let (r, d) = (0.005, 0.001);
    let mesh = icosphere(r, 5).unwrap();
    let pose = pressed_sphere(&mesh, r, d, &cfg, (0.0, 0.0));
    let hm = render_heightmap(&[SurfaceRef::from_mesh(&mesh, pose)], &Pose::identity(), &cfg);
    let rest = cfg.gelpad_thickness;
    // No pixel center sits exactly under the apex vertex; the facets around it
    // lose well under a micrometer.
    assert!((hm.values.min() - (rest - d)).abs() < 1e-6, "{}", hm.values.min());

    let ind = indentation_from(&hm, &cfg);
    assert!((ind.values.max() - d).abs() < 1e-6);

    // Every contact pixel lies inside the analytic disk and the outermost one
    // reaches it to within one pixel.
    let disk = (2.0 * r * d - d * d).sqrt();
    let (px, _) = cfg.pixel_pitch();
    let mut outer: f64 = 0.0;
    for row in 0..480 {
        for col in 0..640 {
            if ind.values.get(row, col) > 0.0 {
                let (x, y) = cfg.pixel_center(row, col);
                outer = outer.max((x * x + y * y).sqrt());
            }
        }
    }
    assert!(outer <= disk && outer > disk - px, "outer {outer} vs {disk}");
    let equivalent = (contact_pixels(&ind) as f64 * px * px / std::f64::consts::PI).sqrt();
    assert!((equivalent - disk).abs() < px, "{equivalent} vs {disk}");
}

#[test]
fn flat_plate_gives_uniform_depth() {
    let cfg = SensorConfig::default();
    let d = 0.0007;
    let plate = box_trimesh(Vec3::new(0.02, 0.02, 0.001), [1, 1, 1]).unwrap();
    let pose = Pose::from_translation(Vec3::new(0.0, 0.0, cfg.gelpad_thickness - d + 0.001));
    let hm = render_heightmap(&[SurfaceRef::from_mesh(&plate, pose)], &Pose::identity(), &cfg);
    let expected = cfg.gelpad_thickness - d;
    assert!(hm.values.data().iter().all(|&v| (v - expected).abs() < 1e-15));
}

#[test]
fn deep_object_is_clamped_at_thickness() {
    let cfg = SensorConfig::default();
    let plate = box_trimesh(Vec3::new(0.002, 0.002, 0.002), [1, 1, 1]).unwrap();
    // Front face 1 mm behind the camera plane.
    let pose = Pose::from_translation(Vec3::new(0.0, 0.0, -0.001 + 0.002));
    let hm = render_heightmap(&[SurfaceRef::from_mesh(&plate, pose)], &Pose::identity(), &cfg);
    let ind = indentation_from(&hm, &cfg);
    assert_eq!(ind.values.max(), cfg.gelpad_thickness);
    assert!(ind.values.data().iter().all(|&v| v <= cfg.gelpad_thickness));
}

#[test]
fn render_ignores_triangle_and_object_order() {
    let cfg = SensorConfig::default();
    let a = icosphere(0.004, 3).unwrap();
    let b = box_trimesh(Vec3::new(0.002, 0.003, 0.002), [2, 2, 2]).unwrap();
    let pa = pressed_sphere(&a, 0.004, 0.0008, &cfg, (-0.004, 0.001));
    let pb = Pose::from_axis_angle(Vec3::new(0.005, -0.002, cfg.gelpad_thickness + 0.0015), Vec3::new(1.0, 1.0, 0.2), 0.4);
    let forward = render_heightmap(&[SurfaceRef::from_mesh(&a, pa), SurfaceRef::from_mesh(&b, pb)], &Pose::identity(), &cfg);
    let mut rev_tris: Vec<[usize; 3]> = a.triangles().to_vec();
    rev_tris.reverse();
    let rev = SurfaceRef { vertices: a.vertices(), triangles: &rev_tris, pose: pa };
    let backward = render_heightmap(&[SurfaceRef::from_mesh(&b, pb), rev], &Pose::identity(), &cfg);
    assert_eq!(forward, backward);
    assert!(indentation_from(&forward, &cfg).values.max() > 0.0);
}

#[test]
fn sensor_pose_moves_the_camera() {
    let cfg = SensorConfig::default();
    let mesh = icosphere(0.005, 3).unwrap();
    let local = pressed_sphere(&mesh, 0.005, 0.0005, &cfg, (0.001, 0.002));
    let case = Pose::from_axis_angle(Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.3, -1.0, 0.5), 1.1);
    let world = case.compose(&local);
    let a = render_heightmap(&[SurfaceRef::from_mesh(&mesh, local)], &Pose::identity(), &cfg);
    let b = render_heightmap(&[SurfaceRef::from_mesh(&mesh, world)], &case, &cfg);
    let diff = a.values.data().iter().zip(b.values.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn indentation_is_monotone_in_press_depth() {
    let cfg = SensorConfig::default();
    let mesh = icosphere(0.005, 3).unwrap();
    let mut prev: Option<IndentationMap> = None;
    for d in [0.0002, 0.0005, 0.001, 0.0015] {
        let pose = pressed_sphere(&mesh, 0.005, d, &cfg, (0.0005, -0.0003));
        let ind = indentation_from(&render_heightmap(&[SurfaceRef::from_mesh(&mesh, pose)], &Pose::identity(), &cfg), &cfg);
        if let Some(p) = &prev {
            assert!(ind.values.data().iter().zip(p.values.data()).all(|(a, b)| a >= b));
        }
        prev = Some(ind);
    }
}

fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> IndentationMap {
    let data = (0..h * w).map(|k| f(k / w, k % w)).collect();
    IndentationMap { values: Grid::from_vec(h, w, data).unwrap(), pixel_pitch: (3e-5, 3e-5) }
}

#[test]
fn smoothing_zero_spike_and_constant() {
    let zero = map(40, 50, |_, _| 0.0);
    let out = smooth_pyramid(&zero, &DEFAULT_KERNEL_SIZES).unwrap();
    assert!(out.values.data().iter().all(|&v| v == 0.0));

    let spike = map(40, 50, |r, c| if (r, c) == (20, 25) { 1e-3 } else { 0.0 });
    let out = smooth_pyramid(&spike, &[3]).unwrap();
    assert!((out.values.sum() - 1e-3).abs() < 1e-6 * 1e-3);
    // Separable bump: product of the normalized 1D kernel.
    let k = gaussian_kernel(3);
    for dr in 0..3 {
        for dc in 0..3 {
            let v = out.values.get(19 + dr, 24 + dc);
            assert!((v - 1e-3 * k[dr] * k[dc]).abs() < 1e-18);
        }
    }

    let constant = map(60, 70, |_, _| 7e-4);
    let out = smooth_pyramid(&constant, &DEFAULT_KERNEL_SIZES).unwrap();
    assert!(out.values.data().iter().all(|&v| (v - 7e-4).abs() < 1e-9));
}

#[test]
fn smoothing_is_linear_and_positive() {
    let a = map(50, 60, |r, c| ((r * 7 + c * 13) % 11) as f64 * 1e-4);
    let b = map(50, 60, |r, c| if r > 20 && c < 30 { 5e-4 } else { 0.0 });
    let sum = map(50, 60, |r, c| a.values.get(r, c) + b.values.get(r, c));
    let k = [5, 11];
    let sa = smooth_pyramid(&a, &k).unwrap();
    let sb = smooth_pyramid(&b, &k).unwrap();
    let ss = smooth_pyramid(&sum, &k).unwrap();
    for i in 0..ss.values.data().len() {
        let lhs = ss.values.data()[i];
        let rhs = sa.values.data()[i] + sb.values.data()[i];
        assert!((lhs - rhs).abs() < 1e-9);
        assert!(lhs >= 0.0);
    }
}

#[test]
fn smoothing_rejects_bad_kernels() {
    let m = map(10, 10, |_, _| 0.0);
    assert!(smooth_pyramid(&m, &[4]).is_err());
    assert!(smooth_pyramid(&m, &[11, 5]).is_err());
    assert!(smooth_pyramid(&m, &[]).is_err());
}

#[test]
fn smoothed_sphere_press_keeps_its_peak() {
    let cfg = SensorConfig::default();
    let mesh = icosphere(0.005, 4).unwrap();
    let pose = pressed_sphere(&mesh, 0.005, 0.001, &cfg, (0.0, 0.0));
    let ind = indentation_from(&render_heightmap(&[SurfaceRef::from_mesh(&mesh, pose)], &Pose::identity(), &cfg), &cfg);
    let sm = smooth_pyramid(&ind, &cfg.kernel_sizes).unwrap();
    let ratio = sm.values.max() / ind.values.max();
    assert!(ratio > 0.85 && ratio <= 1.0, "{ratio}");
}

#[test]
fn map_file_round_trip() {
    let m = map(3, 4, |r, c| (r * 4 + c) as f64 * 0.25);
    let bytes = encode_map(&m.values);
    assert_eq!(bytes.len(), 16 + 4 * 12);
    assert_eq!(decode_map(&bytes, "mem").unwrap(), m.values);
    assert!(decode_map(&bytes[..20], "mem").is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_map(&bad, "mem").is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hmap");
    tacsim::tactile_render::save_map(&m.values, &path).unwrap();
    assert_eq!(tacsim::tactile_render::load_map(&path).unwrap(), m.values);
    tacsim::tactile_render::save_map_png16(&m.values, 3.0, dir.path().join("m.png")).unwrap();
}
