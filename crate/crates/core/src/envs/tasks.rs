//! Initial rig placement and scripted demo trajectories.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::UnitQuaternion;

use crate::geometry::{Pose, Vec3};

use super::config::{SceneConfig, Shape, TaskName};
use super::env::{facing_x, Action};

/// Push target offset along +x from the nominal object position (m).
pub const PUSH_DISTANCE: f64 = 0.03;
/// Scripted press depth for ball rolling (m).
pub const BALL_PRESS: f64 = 1e-3;
/// Scripted squeeze per side for grasps (m).
pub const GRASP_SQUEEZE: f64 = 5e-4;
/// Scripted lift height (m).
pub const LIFT_DISTANCE: f64 = 0.03;
pub const TWIST_ANGLE: f64 = FRAC_PI_2;
/// Stretch as a fraction of beam length.
pub const STRETCH_RATIO: f64 = 0.2;
/// Extra opening on release so a twisted square beam can turn back past its diagonal (m).
pub const RELEASE_CLEARANCE: f64 = 4e-3;

fn half_extents(shape: &Shape) -> Vec3 {
    match *shape {
        Shape::Sphere { radius, .. } => Vec3::repeat(radius),
        Shape::Box { half_extents, .. } => half_extents,
    }
}

/// Rig pose and grip aperture at the start of an episode, placed relative to
/// the (randomized) pose of the first object.
pub(crate) fn initial_rig(task: TaskName, cfg: &SceneConfig, object: &Pose) -> (Pose, f64) {
    let half = half_extents(&cfg.objects[0].shape);
    let gap = cfg.approach_gap;
    let t = cfg.sensors[0].gelpad_thickness;
    let grasp_aperture = 2.0 * (half.x + gap);
    match task {
        TaskName::BallRolling => {
            let p = object.translation + Vec3::new(0.0, 0.0, half.z + gap + t);
            (Pose::from_axis_angle(p, Vec3::x(), PI), 0.0)
        }
        TaskName::ObjectPushing => {
            let yaw = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), object.yaw());
            let p = object.translation + yaw * Vec3::new(-(half.x + gap + t), 0.0, 0.0);
            (Pose::new(p, yaw * facing_x()), 0.0)
        }
        TaskName::ObjectLifting => {
            let yaw = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), object.yaw());
            (Pose::new(object.translation, yaw), grasp_aperture)
        }
        TaskName::BeamTwisting => {
            // Gel top edge just below the beam's free end.
            let reach = 0.5 * cfg.sensors[0].sensing_area.1 + 5e-4;
            let yaw = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), object.yaw());
            (Pose::new(object.translation + Vec3::new(0.0, 0.0, half.z - reach), yaw), grasp_aperture)
        }
    }
}

/// Frames per scripted phase.
pub fn script_phases(task: TaskName) -> &'static [usize] {
    match task {
        // descend + press, roll, hold
        TaskName::BallRolling => &[40, 100, 10],
        // close, settle, lift, hold
        TaskName::ObjectLifting => &[40, 10, 150, 20],
        // close, settle, twist, stretch, release, hold
        TaskName::BeamTwisting => &[30, 10, 80, 60, 20, 20],
        // approach, push
        TaskName::ObjectPushing => &[30, 120],
    }
}

pub fn script_length(task: TaskName) -> usize {
    script_phases(task).iter().sum()
}

fn phase(task: TaskName, step: usize) -> Option<(usize, usize)> {
    let mut start = 0;
    for (i, &n) in script_phases(task).iter().enumerate() {
        if step < start + n {
            return Some((i, n));
        }
        start += n;
    }
    None
}

/// Open-loop demo action at `step`; zero after the script ends.
pub fn scripted_action(task: TaskName, cfg: &SceneConfig, step: usize) -> Action {
    let Some((i, n)) = phase(task, step) else {
        return Action::zero();
    };
    let span = n as f64 * cfg.solver.dt;
    let gap = cfg.approach_gap;
    let mut a = Action::zero();
    match (task, i) {
        (TaskName::BallRolling, 0) => a.linear.z = -(gap + BALL_PRESS) / span,
        (TaskName::BallRolling, 1) => a.linear.x = 0.01,
        (TaskName::ObjectLifting, 0) | (TaskName::BeamTwisting, 0) => a.grip = -2.0 * (gap + GRASP_SQUEEZE) / span,
        (TaskName::ObjectLifting, 2) => a.linear.z = LIFT_DISTANCE / span,
        (TaskName::BeamTwisting, 2) => a.angular.z = TWIST_ANGLE / span,
        (TaskName::BeamTwisting, 3) => {
            let length = 2.0 * half_extents(&cfg.objects[0].shape).z;
            a.linear.z = STRETCH_RATIO * length / span;
        }
        (TaskName::BeamTwisting, 4) => a.grip = (2.0 * (gap + GRASP_SQUEEZE) + RELEASE_CLEARANCE) / span,
        (TaskName::ObjectPushing, 0) => a.linear.x = gap / span,
        (TaskName::ObjectPushing, 1) => a.linear.x = PUSH_DISTANCE / span,
        _ => {}
    }
    a
}
