use tacsim::envs::{
    bench, make_env, script_length, scripted_action, table1_csv, table2_csv, table3_csv, Action, ActionLimits,
    Environment, PhysicsMode, SceneConfig, TaskName, VecEnv,
};
use tacsim::error::Error;
use tacsim::geometry::Vec3;

fn rigid(task: TaskName) -> SceneConfig {
    let mut cfg = SceneConfig::preset(task, PhysicsMode::Rigid);
    cfg.render.rgb = false;
    cfg
}

fn is_config(e: &Error) -> bool {
    matches!(e, Error::Config(_))
}

#[test]
fn config_errors_for_invalid_task_setups() {
    let mut one = SceneConfig::preset(TaskName::ObjectLifting, PhysicsMode::Soft);
    one.sensors.truncate(1);
    assert!(is_config(&make_env("object_lifting", one).err().unwrap()));

    let beam = SceneConfig::preset(TaskName::BeamTwisting, PhysicsMode::Rigid);
    assert!(is_config(&make_env("beam_twisting", beam).err().unwrap()));

    let e = make_env("pole_balancing", rigid(TaskName::BallRolling)).err().unwrap();
    assert!(is_config(&e));

    let mut empty = rigid(TaskName::BallRolling);
    empty.objects.clear();
    assert!(is_config(&make_env("ball_rolling", empty).err().unwrap()));
}

#[test]
fn task_names_round_trip() {
    for t in TaskName::ALL {
        assert_eq!(t.as_str().parse::<TaskName>().unwrap(), t);
    }
    assert_eq!("soft-ipc".parse::<PhysicsMode>().unwrap(), PhysicsMode::Soft);
    assert_eq!("rigid-compliant".parse::<PhysicsMode>().unwrap(), PhysicsMode::Rigid);
    assert!("fluid".parse::<PhysicsMode>().is_err());
}

#[test]
fn config_json_round_trip_and_overrides() {
    let cfg = SceneConfig::preset(TaskName::ObjectLifting, PhysicsMode::Soft);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(SceneConfig::from_json(&text).unwrap(), cfg);

    let o = cfg.with_overrides(&["contact.mu_s=0.3", "seed=9", "physics_mode=\"rigid\""]).unwrap();
    assert_eq!(o.contact.mu_s, 0.3);
    assert_eq!(o.seed, 9);
    assert_eq!(o.physics_mode, PhysicsMode::Rigid);
    assert!(cfg.with_overrides(&["contact.nonsense=1"]).is_err());
    assert!(cfg.with_overrides(&["seed"]).is_err());
}

#[test]
fn action_clamping_keeps_direction() {
    let lim = ActionLimits { linear: 0.1, angular: 1.0, grip: 0.02 };
    let a = Action { linear: Vec3::new(3.0, 4.0, 0.0), angular: Vec3::new(0.0, 0.0, -0.5), grip: -1.0 };
    let c = a.clamped(&lim);
    assert!((c.linear - Vec3::new(0.06, 0.08, 0.0)).norm() < 1e-15);
    assert_eq!(c.angular, a.angular);
    assert_eq!(c.grip, -0.02);
}

#[test]
fn observation_has_ten_by_ten_markers() {
    let env = make_env("ball_rolling", rigid(TaskName::BallRolling)).unwrap();
    let obs = env.observation();
    assert_eq!(obs.sensors.len(), 1);
    let m = &obs.sensors[0].markers;
    assert_eq!((m.rows(), m.cols()), (10, 10));
    assert_eq!(obs.marker_array().len(), 10 * 10 * 2);
    let hm = obs.sensors[0].heightmap.as_ref().unwrap();
    assert_eq!((hm.values.height(), hm.values.width()), (480, 640));

    let lift = make_env("object_lifting", rigid(TaskName::ObjectLifting)).unwrap();
    assert_eq!(lift.observation().marker_array().len(), 2 * 200);
}

#[test]
fn static_scene_stays_put() {
    let mut env = make_env("object_pushing", rigid(TaskName::ObjectPushing)).unwrap();
    let start = env.observation().objects[0].pose;
    for _ in 0..100 {
        env.step(&Action::zero()).unwrap();
    }
    let end = env.observation().objects[0].pose;
    assert!((end.translation - start.translation).norm() < 1e-6, "{:?} -> {:?}", start, end);
    assert!(end.rotation.angle_to(&start.rotation) < 1e-6);
}

#[test]
fn rolling_moves_ball_with_the_case() {
    let cfg = rigid(TaskName::BallRolling);
    let mut env = make_env("ball_rolling", cfg.clone()).unwrap();
    let c0 = env.object_centroid(0);
    let mut touched = false;
    for k in 0..script_length(TaskName::BallRolling) {
        let (obs, _) = env.step(&scripted_action(TaskName::BallRolling, &cfg, k)).unwrap();
        touched |= obs.sensors[0].load.in_contact;
    }
    let d = env.object_centroid(0) - c0;
    assert!(touched);
    assert!(d.x > 2e-3, "displacement {d:?}");
    assert!(d.x > 5.0 * d.y.abs());
}

#[test]
fn reset_restores_initial_observation() {
    let cfg = rigid(TaskName::BallRolling);
    let mut env = make_env("ball_rolling", cfg.clone()).unwrap();
    let initial = env.observation();
    for k in 0..60 {
        env.step(&scripted_action(TaskName::BallRolling, &cfg, k)).unwrap();
    }
    assert_ne!(env.observation(), initial);
    let seed = env.seed();
    assert_eq!(env.reset(seed).unwrap(), initial);
    assert_eq!(env.step_index(), 0);
}

#[test]
fn same_seed_gives_identical_trajectories() {
    let cfg = rigid(TaskName::ObjectLifting);
    let mut a = make_env("object_lifting", cfg.clone()).unwrap();
    let mut b = make_env("object_lifting", cfg.clone()).unwrap();
    for k in 0..60 {
        let act = scripted_action(TaskName::ObjectLifting, &cfg, k);
        assert_eq!(a.step(&act).unwrap().0, b.step(&act).unwrap().0);
    }
}

#[test]
fn vec_env_matches_serial_stepping() {
    let cfg = rigid(TaskName::BallRolling);
    let mut venv = VecEnv::new(TaskName::BallRolling, &cfg, 3).unwrap();
    let mut serial: Vec<Environment> = (0..3)
        .map(|i| Environment::new(TaskName::BallRolling, SceneConfig { seed: cfg.seed + i, ..cfg.clone() }).unwrap())
        .collect();
    for k in 0..50 {
        let act = scripted_action(TaskName::BallRolling, &cfg, k);
        let (obs, t) = venv.step(&vec![act; 3]).unwrap();
        assert!(t.as_array().iter().all(|&x| x >= 0.0));
        for (o, e) in obs.iter().zip(serial.iter_mut()) {
            assert_eq!(*o, e.step(&act).unwrap().0);
        }
    }
    assert!(venv.step(&[Action::zero()]).is_err());
}

#[test]
fn new_seed_resamples_within_range() {
    let cfg = rigid(TaskName::ObjectPushing);
    let nominal = cfg.objects[0].pose;
    let r = cfg.randomization;
    let mut env = make_env("object_pushing", cfg).unwrap();
    let mut seen = Vec::new();
    for seed in 1..8 {
        let obs = env.reset(seed).unwrap();
        let p = obs.objects[0].pose;
        let d = p.translation - nominal.translation;
        assert!(d.x.abs() <= r.position + 1e-6 && d.y.abs() <= r.position + 1e-6, "{d:?}");
        assert!(p.yaw().abs() <= r.yaw + 1e-6);
        seen.push(p.translation.x);
    }
    seen.dedup();
    assert_eq!(seen.len(), 7);
}

#[test]
fn lift_success_needs_a_grasp() {
    let mut env = make_env("object_lifting", rigid(TaskName::ObjectLifting)).unwrap();
    for _ in 0..20 {
        env.step(&Action::zero()).unwrap();
    }
    assert!(!env.lift_success().unwrap());

    let ball = make_env("ball_rolling", rigid(TaskName::BallRolling)).unwrap();
    assert!(is_config(&ball.lift_success().err().unwrap()));
}

#[test]
fn rigid_scripted_lift_succeeds() {
    let cfg = rigid(TaskName::ObjectLifting);
    let mut env = make_env("object_lifting", cfg.clone()).unwrap();
    for k in 0..script_length(TaskName::ObjectLifting) {
        env.step(&scripted_action(TaskName::ObjectLifting, &cfg, k)).unwrap();
    }
    assert!(env.lift_success().unwrap());
    assert!(env.done());
}

#[test]
fn bench_reports_every_stage() {
    let cfg = rigid(TaskName::BallRolling);
    let reports: Vec<_> = [1, 2].iter().map(|&n| bench(TaskName::BallRolling, &cfg, 10, n).unwrap()).collect();
    for r in &reports {
        assert!(r.total.mean > 0.0);
        assert!(r.stages.iter().all(|s| s.mean >= 0.0 && s.p95 >= s.median));
        assert!(r.stages[0].mean > 0.0 && r.stages[1].mean > 0.0);
    }
    let t1 = table1_csv(&reports);
    assert!(t1.starts_with("num_envs,height_map_gen_ms,optical_sim_ms,marker_sim_ms\n"));
    assert_eq!(t1.lines().count(), 3);
    let t2 = table2_csv(&reports);
    assert!(t2.starts_with("num_envs,1,2\nrigid,"));
    assert_eq!(table3_csv(&reports).lines().next().unwrap(), "num_vert,num_tetra,ipc_ms");
    assert!(bench(TaskName::BallRolling, &cfg, 5, 1).is_err());
}
