use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use nalgebra::{Matrix3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compliant::{step_rigid, RigidBody};
use crate::error::{Error, Result};
use crate::geometry::{
    box_trimesh, icosphere, tet_signed_volume, tetrahedralize_box_cells, tetrahedralize_sphere, Pose, TetMesh, Vec3,
};
use crate::marker::{contact_center, marker_displacements, marker_grid, track_load, LoadState, MarkerField, Vec2};
use crate::optical::{calibrate, tactile_image, Calibration, PolyTable, RgbImage};
use crate::softbody::{body_centroid, find_attachments, AttachmentSet, Collider, IpcSolver, SoftBody};
use crate::tactile_render::{
    indentation_from, render_heightmap, HeightMap, IndentationMap, SensorConfig, SurfaceRef,
};

use super::config::{Fixture, PhysicsMode, SceneConfig, Shape, TaskName};
use super::tasks;

/// Rig twist in the world frame plus the grip aperture rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// m/s
    pub linear: Vec3,
    /// rad/s
    pub angular: Vec3,
    /// Rate of change of the gap between the two gel surfaces (m/s); ignored with one sensor.
    pub grip: f64,
}

impl Action {
    pub fn zero() -> Self {
        Action::default()
    }

    /// Scales each part down to its limit, keeping direction.
    pub fn clamped(&self, limits: &super::config::ActionLimits) -> Action {
        let cap = |v: Vec3, m: f64| {
            let n = v.norm();
            if n > m {
                v * (m / n)
            } else {
                v
            }
        };
        Action {
            linear: cap(self.linear, limits.linear),
            angular: cap(self.angular, limits.angular),
            grip: self.grip.clamp(-limits.grip, limits.grip),
        }
    }

    fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite()) && self.grip.is_finite()
    }
}

/// Wall-clock milliseconds spent in each pipeline stage of one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub physics_ms: f64,
    pub heightmap_ms: f64,
    pub optical_ms: f64,
    pub marker_ms: f64,
}

impl StageTimings {
    pub const CSV_HEADER: &'static str = "physics_ms,heightmap_ms,optical_ms,marker_ms";

    pub fn total_ms(&self) -> f64 {
        self.physics_ms + self.heightmap_ms + self.optical_ms + self.marker_ms
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.physics_ms, self.heightmap_ms, self.optical_ms, self.marker_ms]
    }

    pub fn csv_row(&self) -> String {
        format!("{:.4},{:.4},{:.4},{:.4}", self.physics_ms, self.heightmap_ms, self.optical_ms, self.marker_ms)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorObservation {
    pub case_pose: Pose,
    pub markers: MarkerField,
    pub load: LoadState,
    pub heightmap: Option<HeightMap>,
    pub rgb: Option<RgbImage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObjectObservation {
    pub pose: Pose,
    pub centroid: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub sensors: Vec<SensorObservation>,
    pub objects: Vec<ObjectObservation>,
}

impl Observation {
    /// `[sensor][rows][cols][2]` marker displacements, flattened.
    pub fn marker_array(&self) -> Vec<f64> {
        self.sensors.iter().flat_map(|s| s.markers.to_array()).collect()
    }
}

/// Running validity counters over an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvariantStats {
    pub steps: usize,
    /// Tets with non-positive signed volume, summed over steps.
    pub inverted_tets: usize,
    /// Steps whose closest contact pair had distance <= 0.
    pub intersections: usize,
    pub unconverged_steps: usize,
    pub min_tet_volume: f64,
    pub min_pair_distance: Option<f64>,
}

impl Default for InvariantStats {
    fn default() -> Self {
        InvariantStats {
            steps: 0,
            inverted_tets: 0,
            intersections: 0,
            unconverged_steps: 0,
            min_tet_volume: f64::INFINITY,
            min_pair_distance: None,
        }
    }
}

impl InvariantStats {
    pub fn violations(&self) -> usize {
        self.inverted_tets + self.intersections
    }
}

#[derive(Clone, Debug)]
enum World {
    /// Bodies: gels, then objects, then the ground.
    Rigid(Vec<RigidBody>),
    /// Bodies: gels, then objects. The ground is a collider.
    Soft { solver: IpcSolver, bodies: Vec<SoftBody>, colliders: Vec<Collider> },
}

#[derive(Clone, Debug)]
struct SensorState {
    case_pose: Pose,
    prev_case_pose: Pose,
    load: LoadState,
    heightmap: HeightMap,
    indentation: IndentationMap,
    rgb: Option<RgbImage>,
    markers: MarkerField,
}

#[derive(Clone, Debug)]
struct EnvState {
    world: World,
    rig: Pose,
    aperture: f64,
    step: usize,
    sensors: Vec<SensorState>,
    object_poses: Vec<Pose>,
    prev_object_poses: Vec<Pose>,
    stats: InvariantStats,
}

/// Per-build constants.
#[derive(Clone, Debug)]
struct Layout {
    /// Jittered initial object poses.
    object_poses: Vec<Pose>,
    /// Soft mode: rest vertex positions of each object (for pose fitting).
    object_rest: Vec<Vec<Vec3>>,
    /// Soft mode: gel top-face triangles per sensor.
    gel_top: Vec<Vec<[usize; 3]>>,
    markers_rest: Vec<Vec<Vec2>>,
    initial_centroids: Vec<Vec3>,
    goal: Vec3,
}

/// Attachment frame: a slab behind the gel, centered this far below the camera plane.
const CASE_SLAB: f64 = 1e-3;
const GROUND_HALF: Vec3 = Vec3::new(0.2, 0.2, 0.01);

/// A steppable task environment.
#[derive(Clone, Debug)]
pub struct Environment {
    task: TaskName,
    cfg: SceneConfig,
    seed: u64,
    layout: Layout,
    tables: Vec<Option<Arc<PolyTable>>>,
    state: EnvState,
    initial: EnvState,
    needs_reset: bool,
}

/// Builds a task environment in its initial state.
pub fn make_env(name: &str, cfg: SceneConfig) -> Result<Environment> {
    Environment::new(name.parse()?, cfg)
}

impl Environment {
    pub fn new(task: TaskName, cfg: SceneConfig) -> Result<Environment> {
        cfg.validate_for(task)?;
        let tables = if cfg.render.rgb {
            cfg.sensors.iter().map(|s| calibration_for(&cfg, s).map(|c| Some(Arc::new(c.table.clone())))).collect::<Result<_>>()?
        } else {
            vec![None; cfg.sensors.len()]
        };
        let seed = cfg.seed;
        let (layout, state) = build(task, &cfg, seed, &tables)?;
        Ok(Environment { task, cfg, seed, layout, tables, initial: state.clone(), state, needs_reset: false })
    }

    pub fn task(&self) -> TaskName {
        self.task
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_index(&self) -> usize {
        self.state.step
    }

    pub fn needs_reset(&self) -> bool {
        self.needs_reset
    }

    pub fn stats(&self) -> &InvariantStats {
        &self.state.stats
    }

    pub fn rig_pose(&self) -> Pose {
        self.state.rig
    }

    /// Gap between the two gel surfaces (two-sensor tasks).
    pub fn aperture(&self) -> f64 {
        self.state.aperture
    }

    pub fn case_poses(&self) -> Vec<Pose> {
        self.state.sensors.iter().map(|s| s.case_pose).collect()
    }

    pub fn table(&self, sensor: usize) -> Option<&Arc<PolyTable>> {
        self.tables.get(sensor).and_then(|t| t.as_ref())
    }

    /// Replaces a sensor's lookup table (e.g. one loaded from disk).
    pub fn set_table(&mut self, sensor: usize, table: Arc<PolyTable>) -> Result<()> {
        let slot = self.tables.get_mut(sensor).ok_or_else(|| Error::invalid(format!("no sensor {sensor}")))?;
        *slot = Some(table);
        Ok(())
    }

    /// Soft mode bodies: gels first, then objects.
    pub fn soft_bodies(&self) -> Option<&[SoftBody]> {
        match &self.state.world {
            World::Soft { bodies, .. } => Some(bodies),
            World::Rigid(_) => None,
        }
    }

    /// Rigid mode bodies: gels, objects, then the ground if enabled.
    pub fn rigid_bodies(&self) -> Option<&[RigidBody]> {
        match &self.state.world {
            World::Rigid(b) => Some(b),
            World::Soft { .. } => None,
        }
    }

    /// (vertices, tets) summed over soft objects; zero in rigid mode.
    pub fn object_mesh_counts(&self) -> (usize, usize) {
        match &self.state.world {
            World::Soft { bodies, .. } => bodies[self.cfg.sensors.len()..]
                .iter()
                .fold((0, 0), |(v, t), b| (v + b.state.positions().len(), t + b.state.tets().len())),
            World::Rigid(_) => (0, 0),
        }
    }

    pub fn object_centroid(&self, i: usize) -> Vec3 {
        object_centroid(&self.state, self.cfg.sensors.len(), i)
    }

    pub fn initial_centroid(&self, i: usize) -> Vec3 {
        self.layout.initial_centroids[i]
    }

    /// Pushing target for `object_pushing`.
    pub fn goal(&self) -> Vec3 {
        self.layout.goal
    }

    pub fn observation(&self) -> Observation {
        observe(&self.state, &self.cfg)
    }

    /// Restores the initial state. A different seed rebuilds the scene with a
    /// newly sampled object pose.
    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        if seed != self.seed {
            let (layout, state) = build(self.task, &self.cfg, seed, &self.tables)?;
            self.layout = layout;
            self.initial = state;
            self.seed = seed;
        }
        self.state = self.initial.clone();
        self.needs_reset = false;
        Ok(self.observation())
    }

    /// Runs the full pipeline for one frame.
    pub fn step(&mut self, action: &Action) -> Result<(Observation, StageTimings)> {
        let t = Instant::now();
        self.advance(action)?;
        let physics_ms = ms(t);
        let t = Instant::now();
        self.render_stage();
        let heightmap_ms = ms(t);
        let t = Instant::now();
        self.optical_stage()?;
        let optical_ms = ms(t);
        let t = Instant::now();
        self.marker_stage()?;
        let marker_ms = ms(t);
        Ok((self.observation(), StageTimings { physics_ms, heightmap_ms, optical_ms, marker_ms }))
    }

    /// Stages 1 and 2: integrate the case poses from the action, then step physics.
    pub fn advance(&mut self, action: &Action) -> Result<()> {
        if self.needs_reset {
            return Err(Error::NeedsReset);
        }
        if !action.is_finite() {
            return Err(Error::invalid("action is not finite"));
        }
        let result = advance(&mut self.state, &self.cfg, &self.layout, action);
        if result.is_err() {
            self.needs_reset = true;
        }
        result
    }

    /// Stage 3.
    pub fn render_stage(&mut self) {
        render_stage(&mut self.state, &self.cfg, &self.layout);
    }

    /// Stage 4.
    pub fn optical_stage(&mut self) -> Result<()> {
        optical_stage(&mut self.state, &self.cfg, &self.tables)
    }

    /// Stage 5.
    pub fn marker_stage(&mut self) -> Result<()> {
        marker_stage(&mut self.state, &self.cfg, &self.layout)
    }

    /// Object centroid raised at least 2 cm with both sensors in contact.
    pub fn lift_success(&self) -> Result<bool> {
        if self.task != TaskName::ObjectLifting {
            return Err(Error::config(format!("lift_success is defined for object_lifting, not {}", self.task)));
        }
        let gain = self.object_centroid(0).z - self.layout.initial_centroids[0].z;
        Ok(gain >= LIFT_HEIGHT && self.state.sensors.iter().all(|s| s.load.in_contact))
    }

    /// Shaped default reward: height gain for lifting, minus planar distance to the goal for pushing.
    pub fn reward(&self) -> f64 {
        match self.task {
            TaskName::ObjectLifting => self.object_centroid(0).z - self.layout.initial_centroids[0].z,
            TaskName::ObjectPushing => -self.goal_distance(),
            _ => 0.0,
        }
    }

    fn goal_distance(&self) -> f64 {
        let d = self.object_centroid(0) - self.layout.goal;
        d.xy().norm()
    }

    /// Step cap reached or task solved.
    pub fn done(&self) -> bool {
        if self.state.step >= self.cfg.max_steps {
            return true;
        }
        match self.task {
            TaskName::ObjectLifting => self.lift_success().unwrap_or(false),
            TaskName::ObjectPushing => self.goal_distance() < PUSH_TOLERANCE,
            _ => false,
        }
    }

    /// Scripted demo action for the current step.
    pub fn scripted_action(&self) -> Action {
        tasks::scripted_action(self.task, &self.cfg, self.state.step)
    }
}

pub const LIFT_HEIGHT: f64 = 0.02;
const PUSH_TOLERANCE: f64 = 5e-3;

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn calibration_for(cfg: &SceneConfig, sensor: &SensorConfig) -> Result<Calibration> {
    static CACHE: OnceLock<Mutex<HashMap<String, Calibration>>> = OnceLock::new();
    let key = serde_json::to_string(&(&cfg.lighting, sensor))?;
    let mut map = CACHE.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    if let Some(c) = map.get(&key) {
        return Ok(c.clone());
    }
    let c = calibrate(&cfg.lighting, sensor)?;
    map.insert(key, c.clone());
    Ok(c)
}

/// Calibration for a sensor under the scene lighting, cached per process.
pub fn scene_calibration(cfg: &SceneConfig, sensor: usize) -> Result<Calibration> {
    let s = cfg.sensors.get(sensor).ok_or_else(|| Error::invalid(format!("no sensor {sensor}")))?;
    calibration_for(cfg, s)
}

fn rotation_from_columns(x: Vec3, y: Vec3, z: Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_matrix(&Matrix3::from_columns(&[x, y, z]))
}

/// Case poses for the rig. Two-sensor rigs hold the cases facing each other
/// along rig x with the short sensing side vertical.
pub(crate) fn case_poses(rig: &Pose, aperture: f64, cfg: &SceneConfig) -> Vec<Pose> {
    if cfg.sensors.len() == 1 {
        return vec![*rig];
    }
    let left = rotation_from_columns(Vec3::y(), Vec3::z(), Vec3::x());
    let right = rotation_from_columns(Vec3::y(), -Vec3::z(), -Vec3::x());
    let (t0, t1) = (cfg.sensors[0].gelpad_thickness, cfg.sensors[1].gelpad_thickness);
    vec![
        rig.compose(&Pose::new(Vec3::new(-(0.5 * aperture + t0), 0.0, 0.0), left)),
        rig.compose(&Pose::new(Vec3::new(0.5 * aperture + t1, 0.0, 0.0), right)),
    ]
}

/// Facing +x with the long sensing side horizontal.
pub(crate) fn facing_x() -> UnitQuaternion<f64> {
    rotation_from_columns(Vec3::y(), Vec3::z(), Vec3::x())
}

fn gel_offset(s: &SensorConfig) -> Pose {
    Pose::from_translation(Vec3::new(0.0, 0.0, 0.5 * s.gelpad_thickness))
}

fn attach_offset() -> Pose {
    Pose::from_translation(Vec3::new(0.0, 0.0, -CASE_SLAB))
}

fn sample_object_poses(cfg: &SceneConfig, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.randomization;
    let mut uniform = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    cfg.objects
        .iter()
        .map(|o| {
            let (dx, dy, dyaw) = (uniform(r.position), uniform(r.position), uniform(r.yaw));
            let jitter = Pose::new(Vec3::new(dx, dy, 0.0), UnitQuaternion::from_axis_angle(&Vec3::z_axis(), dyaw));
            Pose::new(o.pose.translation + jitter.translation, jitter.rotation * o.pose.rotation)
        })
        .collect()
}

fn object_tet_mesh(shape: &Shape, pose: &Pose) -> Result<TetMesh> {
    Ok(match *shape {
        Shape::Sphere { radius, subdivisions } => tetrahedralize_sphere(radius, subdivisions)?.transformed(pose),
        Shape::Box { half_extents, cells } => tetrahedralize_box_cells(half_extents * 2.0, cells)?
            .transformed(&pose.compose(&Pose::from_translation(-half_extents))),
    })
}

fn build(task: TaskName, cfg: &SceneConfig, seed: u64, tables: &[Option<Arc<PolyTable>>]) -> Result<(Layout, EnvState)> {
    let object_poses = sample_object_poses(cfg, seed);
    let (rig, aperture) = tasks::initial_rig(task, cfg, &object_poses[0]);
    let cases = case_poses(&rig, aperture, cfg);
    let ns = cfg.sensors.len();
    let mut gel_top = Vec::new();
    let mut object_rest = Vec::new();

    let world = match cfg.physics_mode {
        PhysicsMode::Rigid => {
            let mut bodies = Vec::new();
            for (s, case) in cfg.sensors.iter().zip(&cases) {
                let (w, h) = s.sensing_area;
                let mesh = box_trimesh(Vec3::new(0.5 * w, 0.5 * h, 0.5 * s.gelpad_thickness), cfg.gel.rigid_cells)?;
                bodies.push(RigidBody::new_kinematic(mesh, case.compose(&gel_offset(s))));
            }
            for (o, pose) in cfg.objects.iter().zip(&object_poses) {
                let rho = o.material.density;
                let body = match (o.shape, o.fixture) {
                    (Shape::Sphere { radius, subdivisions }, Fixture::Free) => {
                        RigidBody::solid_sphere(icosphere(radius, subdivisions)?, *pose, radius, rho)?
                    }
                    (Shape::Box { half_extents, cells }, Fixture::Free) => {
                        RigidBody::solid_box(box_trimesh(half_extents, cells)?, *pose, half_extents, rho)?
                    }
                    (Shape::Sphere { radius, subdivisions }, _) => {
                        RigidBody::new_kinematic(icosphere(radius, subdivisions)?, *pose)
                    }
                    (Shape::Box { half_extents, cells }, _) => {
                        RigidBody::new_kinematic(box_trimesh(half_extents, cells)?, *pose)
                    }
                };
                bodies.push(body);
            }
            if cfg.ground {
                let pose = Pose::from_translation(Vec3::new(0.0, 0.0, -GROUND_HALF.z));
                bodies.push(RigidBody::new_kinematic(box_trimesh(GROUND_HALF, [1, 1, 1])?, pose));
            }
            World::Rigid(bodies)
        }
        PhysicsMode::Soft => {
            let mut bodies = Vec::new();
            for (s, case) in cfg.sensors.iter().zip(&cases) {
                let (w, h) = s.sensing_area;
                let t = s.gelpad_thickness;
                let local = tetrahedralize_box_cells(Vec3::new(w, h, t), cfg.gel.cells)?
                    .transformed(&Pose::from_translation(Vec3::new(-0.5 * w, -0.5 * h, 0.0)));
                let top: Vec<[usize; 3]> = local
                    .surface_triangles_global()
                    .into_iter()
                    .filter(|tri| tri.iter().all(|&i| local.vertices()[i].z > t - 1e-9))
                    .collect();
                gel_top.push(top);
                let mut body = SoftBody::new(&local.transformed(case), cfg.gel.material)?;
                let frame = case.compose(&attach_offset());
                let set = find_attachments(body.state.positions(), &frame, Vec3::new(w, h, CASE_SLAB), 1e-7)?
                    .with_stiffness(cfg.gel.attachment_stiffness)?;
                if set.is_empty() {
                    return Err(Error::config("gelpad has no attached vertices"));
                }
                body.attach(set, &frame);
                bodies.push(body);
            }
            for (o, pose) in cfg.objects.iter().zip(&object_poses) {
                let mesh = object_tet_mesh(&o.shape, pose)?;
                let mut body = SoftBody::new(&mesh, o.material)?;
                let local: Vec<Vec3> = body.state.positions().iter().map(|p| pose.inverse_transform_point(p)).collect();
                let ids: Vec<usize> = match o.fixture {
                    Fixture::Free => Vec::new(),
                    Fixture::Fixed => (0..local.len()).collect(),
                    Fixture::Base => {
                        let zmin = local.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
                        (0..local.len()).filter(|&i| local[i].z <= zmin + 1e-9).collect()
                    }
                };
                if !ids.is_empty() {
                    let offsets = ids.iter().map(|&i| local[i]).collect();
                    body.attach(AttachmentSet::new(ids, offsets, cfg.gel.attachment_stiffness)?, pose);
                }
                object_rest.push(body.state.positions().to_vec());
                bodies.push(body);
            }
            let mut colliders = Vec::new();
            if cfg.ground {
                let pose = Pose::from_translation(Vec3::new(0.0, 0.0, -GROUND_HALF.z));
                colliders.push(Collider { mesh: box_trimesh(GROUND_HALF, [1, 1, 1])?, pose });
            }
            let solver = IpcSolver::new(cfg.contact, cfg.solver)?.with_gravity(cfg.gravity);
            World::Soft { solver, bodies, colliders }
        }
    };

    let empty_hm = |s: &SensorConfig| HeightMap {
        values: crate::tactile_render::Grid::filled(s.image_size.0, s.image_size.1, s.gelpad_thickness),
        pixel_pitch: s.pixel_pitch(),
    };
    let markers_rest: Vec<Vec<Vec2>> = cfg.sensors.iter().map(marker_grid).collect();
    let sensors = cfg
        .sensors
        .iter()
        .zip(&cases)
        .zip(&markers_rest)
        .map(|((s, case), rest)| {
            let hm = empty_hm(s);
            Ok(SensorState {
                case_pose: *case,
                prev_case_pose: *case,
                load: LoadState::default(),
                indentation: indentation_from(&hm, s),
                heightmap: hm,
                rgb: None,
                markers: marker_displacements(&LoadState::default(), rest, s.marker_grid.0, s.marker_grid.1, &cfg.marker)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut layout = Layout {
        object_poses: object_poses.clone(),
        object_rest,
        gel_top,
        markers_rest,
        initial_centroids: Vec::new(),
        goal: cfg.objects[0].pose.translation + Vec3::new(tasks::PUSH_DISTANCE, 0.0, 0.0),
    };
    let mut state = EnvState {
        world,
        rig,
        aperture,
        step: 0,
        sensors,
        prev_object_poses: object_poses.clone(),
        object_poses,
        stats: InvariantStats::default(),
    };

    for _ in 0..cfg.settle_steps {
        advance(&mut state, cfg, &layout, &Action::zero())?;
    }
    match &mut state.world {
        World::Rigid(bodies) => {
            for b in bodies.iter_mut() {
                b.linear_velocity = Vec3::zeros();
                b.angular_velocity = Vec3::zeros();
            }
        }
        World::Soft { solver, bodies, .. } => {
            solver.clear_history();
            for b in bodies.iter_mut() {
                b.state.velocities_mut().iter_mut().for_each(|v| *v = Vec3::zeros());
            }
        }
    }
    state.step = 0;
    state.stats = InvariantStats::default();
    state.prev_object_poses = state.object_poses.clone();
    for s in &mut state.sensors {
        s.prev_case_pose = s.case_pose;
        s.load = LoadState::default();
    }
    layout.initial_centroids = (0..cfg.objects.len()).map(|i| object_centroid(&state, ns, i)).collect();
    render_stage(&mut state, cfg, &layout);
    optical_stage(&mut state, cfg, tables)?;
    marker_stage(&mut state, cfg, &layout)?;
    Ok((layout, state))
}

fn object_centroid(state: &EnvState, ns: usize, i: usize) -> Vec3 {
    match &state.world {
        World::Rigid(bodies) => bodies[ns + i].pose.translation,
        World::Soft { bodies, .. } => body_centroid(&bodies[ns + i].state),
    }
}

/// Best-fit rigid transform taking `rest` onto `current` (Kabsch).
pub fn fit_rigid_transform(rest: &[Vec3], current: &[Vec3]) -> Pose {
    let n = rest.len().max(1) as f64;
    let cr: Vec3 = rest.iter().sum::<Vec3>() / n;
    let cc: Vec3 = current.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (r, c) in rest.iter().zip(current) {
        h += (r - cr) * (c - cc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Pose::from_translation(cc - cr),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let q = UnitQuaternion::from_matrix(&r);
    Pose::new(cc - q * cr, q)
}

fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
    let rotation = a.rotation.try_slerp(&b.rotation, s, 1e-12).unwrap_or(b.rotation);
    Pose::new(a.translation.lerp(&b.translation, s), rotation)
}

fn count_inverted(body: &SoftBody) -> usize {
    let x = body.state.positions();
    body.state
        .tets()
        .iter()
        .filter(|t| {
            let [a, b, c, d] = t.map(|i| x[i]);
            tet_signed_volume(&a, &b, &c, &d) <= 0.0
        })
        .count()
}

fn advance(state: &mut EnvState, cfg: &SceneConfig, layout: &Layout, action: &Action) -> Result<()> {
    let a = action.clamped(&cfg.limits);
    let dt = cfg.solver.dt;
    let ns = cfg.sensors.len();

    let old_cases: Vec<Pose> = state.sensors.iter().map(|s| s.case_pose).collect();
    let mut rig = state.rig;
    rig.translation += a.linear * dt;
    rig.rotation = UnitQuaternion::from_scaled_axis(a.angular * dt) * rig.rotation;
    let aperture = if ns == 2 { (state.aperture + a.grip * dt).max(0.0) } else { state.aperture };
    let new_cases = case_poses(&rig, aperture, cfg);

    match &mut state.world {
        World::Rigid(bodies) => {
            let n = (dt / cfg.rigid_substep).ceil().max(1.0) as usize;
            let h = dt / n as f64;
            for k in 1..=n {
                let s = k as f64 / n as f64;
                for i in 0..ns {
                    let target = interpolate(&old_cases[i], &new_cases[i], s).compose(&gel_offset(&cfg.sensors[i]));
                    bodies[i].set_kinematic_target(target);
                }
                step_rigid(bodies, &cfg.compliant, cfg.gravity, h)?;
            }
        }
        World::Soft { solver, bodies, colliders } => {
            for i in 0..ns {
                bodies[i].move_attachment(&new_cases[i].compose(&attach_offset()));
            }
            let report = solver.step(bodies, colliders)?;
            let st = &mut state.stats;
            st.inverted_tets += bodies.iter().map(count_inverted).sum::<usize>();
            st.min_tet_volume = st.min_tet_volume.min(report.min_tet_volume);
            if let Some(d) = report.min_pair_distance {
                if d <= 0.0 {
                    st.intersections += 1;
                }
                st.min_pair_distance = Some(st.min_pair_distance.map_or(d, |m| m.min(d)));
            }
            if !report.converged {
                st.unconverged_steps += 1;
            }
        }
    }

    state.rig = rig;
    state.aperture = aperture;
    for (s, c) in state.sensors.iter_mut().zip(new_cases) {
        s.prev_case_pose = s.case_pose;
        s.case_pose = c;
    }
    state.prev_object_poses = state.object_poses.clone();
    state.object_poses = match &state.world {
        World::Rigid(bodies) => (0..cfg.objects.len()).map(|i| bodies[ns + i].pose).collect(),
        World::Soft { bodies, .. } => (0..cfg.objects.len())
            .map(|i| fit_rigid_transform(&layout.object_rest[i], bodies[ns + i].state.positions()).compose(&layout.object_poses[i]))
            .collect(),
    };
    state.step += 1;
    state.stats.steps += 1;
    Ok(())
}

fn render_stage(state: &mut EnvState, cfg: &SceneConfig, layout: &Layout) {
    let ns = cfg.sensors.len();
    let maps: Vec<HeightMap> = (0..ns)
        .map(|i| {
            let s = &cfg.sensors[i];
            let case = state.sensors[i].case_pose;
            match &state.world {
                World::Rigid(bodies) => {
                    let surfaces: Vec<SurfaceRef> =
                        bodies[ns..].iter().map(|b| SurfaceRef::from_mesh(b.collider(), b.pose)).collect();
                    render_heightmap(&surfaces, &case, s)
                }
                World::Soft { bodies, .. } => {
                    let surface = SurfaceRef {
                        vertices: bodies[i].state.positions(),
                        triangles: &layout.gel_top[i],
                        pose: Pose::identity(),
                    };
                    render_heightmap(&[surface], &case, s)
                }
            }
        })
        .collect();
    for ((st, hm), s) in state.sensors.iter_mut().zip(maps).zip(&cfg.sensors) {
        st.indentation = indentation_from(&hm, s);
        st.heightmap = hm;
    }
}

fn optical_stage(state: &mut EnvState, cfg: &SceneConfig, tables: &[Option<Arc<PolyTable>>]) -> Result<()> {
    if !cfg.render.rgb {
        return Ok(());
    }
    for (i, st) in state.sensors.iter_mut().enumerate() {
        let s = &cfg.sensors[i];
        let table = tables[i].as_ref().ok_or_else(|| Error::Calibration(format!("sensor {i} has no lookup table")))?;
        let shadows = cfg.render.shadows.then_some(&cfg.shadow);
        st.rgb = Some(tactile_image(&st.indentation, s, table, &cfg.lighting, shadows)?);
    }
    Ok(())
}

/// Motion of the case relative to the object over the last step at the
/// contact point, in the previous camera frame.
fn relative_motion(s: &SensorConfig, st: &SensorState, old_obj: &Pose, new_obj: &Pose, center: &Vec2) -> Pose {
    let cam = s.camera_pose(&st.prev_case_pose);
    let p = cam.transform_point(&Vec3::new(center.x, center.y, s.gelpad_thickness));
    let case_move = s.camera_pose(&st.case_pose).compose(&cam.inverse());
    let obj_move = new_obj.compose(&old_obj.inverse());
    let d = case_move.transform_point(&p) - obj_move.transform_point(&p);
    let local = cam.rotation.inverse() * d;
    let rel = obj_move.rotation.inverse() * case_move.rotation;
    let angle = rel.scaled_axis().dot(&(cam.rotation * Vec3::z()));
    Pose::from_axis_angle(local, Vec3::z(), angle)
}

fn marker_stage(state: &mut EnvState, cfg: &SceneConfig, layout: &Layout) -> Result<()> {
    for (i, st) in state.sensors.iter_mut().enumerate() {
        let s = &cfg.sensors[i];
        let contact = contact_center(&st.indentation, cfg.marker.contact_threshold);
        let delta = if contact.in_contact && st.load.in_contact {
            let p = s.camera_pose(&st.case_pose).transform_point(&Vec3::new(contact.center.x, contact.center.y, s.gelpad_thickness));
            let k = (0..state.object_poses.len())
                .min_by(|&a, &b| {
                    let da = (state.object_poses[a].translation - p).norm();
                    let db = (state.object_poses[b].translation - p).norm();
                    da.total_cmp(&db)
                })
                .unwrap_or(0);
            relative_motion(s, st, &state.prev_object_poses[k], &state.object_poses[k], &contact.center)
        } else {
            Pose::identity()
        };
        st.load = track_load(&st.load, &delta, &contact);
        st.markers = marker_displacements(&st.load, &layout.markers_rest[i], s.marker_grid.0, s.marker_grid.1, &cfg.marker)?;
    }
    Ok(())
}

fn observe(state: &EnvState, cfg: &SceneConfig) -> Observation {
    let ns = cfg.sensors.len();
    Observation {
        step: state.step,
        sensors: state
            .sensors
            .iter()
            .map(|st| SensorObservation {
                case_pose: st.case_pose,
                markers: st.markers.clone(),
                load: st.load,
                heightmap: cfg.render.heightmap.then(|| st.heightmap.clone()),
                rgb: st.rgb.clone(),
            })
            .collect(),
        objects: state
            .object_poses
            .iter()
            .enumerate()
            .map(|(i, p)| ObjectObservation { pose: *p, centroid: object_centroid(state, ns, i) })
            .collect(),
    }
}
