//! Visuotactile sensor simulation.
//!
//! The pipeline runs physics (an IPC-style soft-body solver or a fast
//! compliant rigid-body mode), renders a per-sensor height map, converts it
//! to a tactile RGB image with a polynomial normal-to-color table and
//! synthesizes the marker motion field. [`envs`] composes these into
//! steppable, resettable task environments.

pub mod error;
pub mod envs;
pub mod compliant;
pub mod geometry;
pub mod marker;
pub mod optical;
pub mod softbody;
pub mod tactile_render;

pub use error::{Error, Result};
