//! Task environments: sensor cases driven by twist commands, physics,
//! height-map rendering, optical and marker simulation in a fixed order.
//!
//! Every step runs (1) case pose integration, (2) physics, (3) height maps,
//! (4) tactile RGB, (5) marker field. Observations depend only on the seed
//! and the action sequence.

mod bench;
mod config;
mod env;
mod tasks;
mod vec_env;

pub use bench::{
    ball_presets, bench, stages_csv, table1_csv, table2_csv, table3_csv, write_tables, BenchReport, StageStats,
};
pub use config::{
    ActionLimits, Fixture, GelConfig, ObjectSpec, PhysicsMode, Randomization, RenderOptions, SceneConfig, Shape,
    TaskName,
};
pub use env::{
    fit_rigid_transform, make_env, scene_calibration, Action, Environment, InvariantStats, ObjectObservation,
    Observation, SensorObservation, StageTimings, LIFT_HEIGHT,
};
pub use tasks::{
    script_length, script_phases, scripted_action, BALL_PRESS, GRASP_SQUEEZE, LIFT_DISTANCE, PUSH_DISTANCE,
    STRETCH_RATIO, TWIST_ANGLE,
};
pub use vec_env::{thread_count, VecEnv};
