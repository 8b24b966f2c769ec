//! FEM soft bodies with barrier contact, lagged friction and kinematic attachments.
//!
//! Each [`IpcSolver::step`] minimizes the implicit-Euler incremental potential
//! over all soft vertices with a projected Newton method. Contact is a
//! smooth log barrier on point-triangle and edge-edge distances, so accepted
//! iterates never interpenetrate; tets never invert because the elastic
//! energy is infinite at zero volume and the line search is filtered by a
//! per-tet inversion bound.

mod autodiff;
mod barrier;
mod contact;
mod elastic;
mod friction;
mod solver;
mod sparse;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tet_signed_volume, Aabb, Pose, TetMesh, TriMesh, Vec3};

pub use barrier::barrier_energy;
pub use contact::{
    collect_contact_pairs, pair_barrier_energy, pair_barrier_gradient, pair_distance, ContactPair, PairKind, VertexRef,
};
pub use elastic::{elastic_energy, elastic_gradient, elastic_hessian};
pub use friction::{friction_energy, FrictionPair};
pub use solver::{BodyContact, IpcSolver, StepReport};
pub use sparse::SparseMatrix;

/// Default attachment penalty stiffness (N/m).
pub const DEFAULT_ATTACHMENT_STIFFNESS: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Young's modulus (Pa).
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Density (kg/m^3).
    pub density: f64,
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Result<Self> {
        let m = Material {
            youngs_modulus,
            poisson_ratio,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(Error::invalid(format!("Young's modulus must be > 0, got {}", self.youngs_modulus)));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::invalid(format!("Poisson ratio must be in [0, 0.5), got {}", self.poisson_ratio)));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::invalid(format!("density must be > 0, got {}", self.density)));
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// Barrier activation distance (m).
    pub dhat: f64,
    /// Barrier stiffness (Pa m).
    pub kappa: f64,
    pub mu_s: f64,
    pub mu_k: f64,
    /// Static/kinetic transition speed (m/s).
    pub eps_v: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            dhat: 1e-3,
            kappa: 1e4,
            mu_s: 0.8,
            mu_k: 0.6,
            eps_v: 1e-3,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dhat > 0.0
            && self.kappa > 0.0
            && self.mu_k >= 0.0
            && self.mu_s >= self.mu_k
            && self.eps_v > 0.0
            && [self.dhat, self.kappa, self.mu_s, self.mu_k, self.eps_v].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "contact params need dhat > 0, kappa > 0, mu_s >= mu_k >= 0, eps_v > 0: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Time step (s).
    pub dt: f64,
    pub max_newton_iters: usize,
    /// Convergence threshold on the largest gradient component (N).
    pub newton_tol: f64,
    pub max_line_search: usize,
    /// Newton also stops once the largest step component falls below this (m).
    pub step_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            dt: 0.01,
            max_newton_iters: 16,
            newton_tol: 1e-6,
            max_line_search: 40,
            step_tol: 1e-9,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.max_newton_iters < 1 {
            return Err(Error::invalid("max_newton_iters must be at least 1"));
        }
        if !(self.newton_tol > 0.0 && self.step_tol >= 0.0) {
            return Err(Error::invalid("newton_tol must be > 0 and step_tol >= 0"));
        }
        Ok(())
    }
}

/// Simulation state of one tet mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftBodyState {
    pub(crate) rest_positions: Vec<Vec3>,
    pub(crate) positions: Vec<Vec3>,
    pub(crate) velocities: Vec<Vec3>,
    pub(crate) masses: Vec<f64>,
    pub(crate) tets: Vec<[usize; 4]>,
    pub(crate) rest_inverse: Vec<Matrix3<f64>>,
    pub(crate) rest_volumes: Vec<f64>,
    pub(crate) surface: Vec<[usize; 3]>,
}

/// Builds a state at rest: `x = X`, `v = 0`, lumped masses `rho V / 4` per tet corner.
pub fn init_softbody(mesh: &TetMesh, material: &Material) -> Result<SoftBodyState> {
    material.validate()?;
    let x = mesh.vertices().to_vec();
    let mut masses = vec![0.0; x.len()];
    let mut rest_inverse = Vec::with_capacity(mesh.tets().len());
    let mut rest_volumes = Vec::with_capacity(mesh.tets().len());
    for (t, tet) in mesh.tets().iter().enumerate() {
        let [a, b, c, d] = tet.map(|i| x[i]);
        let vol = tet_signed_volume(&a, &b, &c, &d);
        let dm = Matrix3::from_columns(&[b - a, c - a, d - a]);
        let inv = dm
            .try_inverse()
            .filter(|_| vol > 0.0)
            .ok_or_else(|| Error::InvalidMesh(format!("tet {t} is inverted or degenerate at rest")))?;
        rest_inverse.push(inv);
        rest_volumes.push(vol);
        for &i in tet {
            masses[i] += material.density * vol / 4.0;
        }
    }
    if let Some(i) = masses.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::InvalidMesh(format!("vertex {i} belongs to no tet")));
    }
    Ok(SoftBodyState {
        velocities: vec![Vec3::zeros(); x.len()],
        positions: x.clone(),
        rest_positions: x,
        masses,
        tets: mesh.tets().to_vec(),
        rest_inverse,
        rest_volumes,
        surface: mesh.surface_triangles_global(),
    })
}

impl SoftBodyState {
    pub fn rest_positions(&self) -> &[Vec3] {
        &self.rest_positions
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [Vec3] {
        &mut self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn velocities_mut(&mut self) -> &mut [Vec3] {
        &mut self.velocities
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn rest_volumes(&self) -> &[f64] {
        &self.rest_volumes
    }

    /// Boundary triangles in volume vertex indices, outward facing.
    pub fn surface_triangles(&self) -> &[[usize; 3]] {
        &self.surface
    }

    /// Current boundary as a triangle mesh (one vertex per volume vertex).
    pub fn surface_mesh(&self) -> Result<TriMesh> {
        TriMesh::new(self.positions.clone(), self.surface.clone())
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.masses
            .iter()
            .zip(&self.velocities)
            .map(|(m, v)| 0.5 * m * v.norm_squared())
            .sum()
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.masses.iter().zip(&self.velocities).map(|(m, v)| v * *m).sum()
    }

    /// Smallest current signed tet volume (m^3).
    pub fn min_tet_volume(&self) -> f64 {
        min_volume(&self.tets, &self.positions)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.positions.iter())
    }

    /// Rigidly moves positions and rotates velocities.
    pub fn apply_pose(&mut self, pose: &Pose) {
        for x in &mut self.positions {
            *x = pose.transform_point(x);
        }
        for v in &mut self.velocities {
            *v = pose.transform_vector(v);
        }
    }
}

pub(crate) fn min_volume(tets: &[[usize; 4]], x: &[Vec3]) -> f64 {
    tets.iter()
        .map(|t| {
            let [a, b, c, d] = t.map(|i| x[i]);
            tet_signed_volume(&a, &b, &c, &d)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Arithmetic mean of the current vertex positions.
pub fn body_centroid(state: &SoftBodyState) -> Vec3 {
    let n = state.positions.len().max(1) as f64;
    state.positions.iter().sum::<Vec3>() / n
}

/// Restores the rest configuration and zero velocity.
pub fn reset(state: &mut SoftBodyState) {
    state.positions.clone_from(&state.rest_positions);
    for v in &mut state.velocities {
        *v = Vec3::zeros();
    }
}

/// Vertices held at constant offsets in a sensor-case frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AttachmentSet {
    vertex_ids: Vec<usize>,
    offsets: Vec<Vec3>,
    stiffness: f64,
}

impl AttachmentSet {
    pub fn new(vertex_ids: Vec<usize>, offsets: Vec<Vec3>, stiffness: f64) -> Result<Self> {
        if vertex_ids.len() != offsets.len() {
            return Err(Error::invalid("attachment ids and offsets differ in length"));
        }
        let mut sorted = vertex_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("attachment vertex ids must be unique"));
        }
        if !offsets.iter().all(|o| o.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("attachment offsets must be finite"));
        }
        if !(stiffness > 0.0 && stiffness.is_finite()) {
            return Err(Error::invalid(format!("attachment stiffness must be > 0, got {stiffness}")));
        }
        Ok(AttachmentSet {
            vertex_ids,
            offsets,
            stiffness,
        })
    }

    pub fn vertex_ids(&self) -> &[usize] {
        &self.vertex_ids
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn stiffness(&self) -> f64 {
        self.stiffness
    }

    pub fn with_stiffness(mut self, stiffness: f64) -> Result<Self> {
        if !(stiffness > 0.0 && stiffness.is_finite()) {
            return Err(Error::invalid(format!("attachment stiffness must be > 0, got {stiffness}")));
        }
        self.stiffness = stiffness;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.vertex_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex_ids.is_empty()
    }
}

/// Attaches every vertex within `probe_radius` of the case box.
///
/// The box is centered on `case_pose` with the given half extents. Offsets
/// are the case-frame coordinates of the attached vertices. An empty result
/// is logged as a warning since the body would float free.
pub fn find_attachments(
    vertices: &[Vec3],
    case_pose: &Pose,
    case_half_extents: Vec3,
    probe_radius: f64,
) -> Result<AttachmentSet> {
    if !(probe_radius >= 0.0) {
        return Err(Error::invalid(format!("probe radius must be >= 0, got {probe_radius}")));
    }
    if !case_pose.is_finite() {
        return Err(Error::invalid("case pose is not finite"));
    }
    let mut ids = Vec::new();
    let mut offsets = Vec::new();
    for (i, v) in vertices.iter().enumerate() {
        let q = case_pose.inverse_transform_point(v);
        let outside = q.abs() - case_half_extents;
        let d = outside.map(|c| c.max(0.0)).norm();
        if d <= probe_radius {
            ids.push(i);
            offsets.push(q);
        }
    }
    if ids.is_empty() {
        log::warn!("no vertex within {probe_radius} m of the sensor case; the gelpad is unattached");
    }
    AttachmentSet::new(ids, offsets, DEFAULT_ATTACHMENT_STIFFNESS)
}

/// World-space targets `R offset + t` for the current case pose.
pub fn update_attachment_targets(att: &AttachmentSet, case_pose: &Pose) -> Vec<Vec3> {
    att.offsets.iter().map(|o| case_pose.transform_point(o)).collect()
}

/// Penalty energy `k/2 sum |x_i - target_i|^2` (J).
pub fn attachment_energy(att: &AttachmentSet, positions: &[Vec3], targets: &[Vec3]) -> f64 {
    att.vertex_ids
        .iter()
        .zip(targets)
        .map(|(&i, t)| 0.5 * att.stiffness * (positions[i] - t).norm_squared())
        .sum()
}

/// Gradient of [`attachment_energy`] per vertex (N).
pub fn attachment_gradient(att: &AttachmentSet, positions: &[Vec3], targets: &[Vec3]) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); positions.len()];
    for (&i, t) in att.vertex_ids.iter().zip(targets) {
        g[i] += (positions[i] - t) * att.stiffness;
    }
    g
}

/// A soft body with its material and optional attachment to a moving frame.
#[derive(Clone, Debug)]
pub struct SoftBody {
    pub state: SoftBodyState,
    pub material: Material,
    attachment: Option<(AttachmentSet, Vec<Vec3>)>,
}

impl SoftBody {
    pub fn new(mesh: &TetMesh, material: Material) -> Result<Self> {
        Ok(SoftBody {
            state: init_softbody(mesh, &material)?,
            material,
            attachment: None,
        })
    }

    /// Attaches the body; targets start at the capture-time positions.
    pub fn attach(&mut self, set: AttachmentSet, case_pose: &Pose) {
        let targets = update_attachment_targets(&set, case_pose);
        self.attachment = Some((set, targets));
    }

    pub fn attachment(&self) -> Option<&AttachmentSet> {
        self.attachment.as_ref().map(|(s, _)| s)
    }

    pub fn attachment_targets(&self) -> Option<&[Vec3]> {
        self.attachment.as_ref().map(|(_, t)| t.as_slice())
    }

    /// Recomputes attachment targets for a new case pose.
    pub fn move_attachment(&mut self, case_pose: &Pose) {
        if let Some((set, targets)) = &mut self.attachment {
            *targets = update_attachment_targets(set, case_pose);
        }
    }
}

/// Kinematic triangle mesh placed at `pose`.
#[derive(Clone, Debug)]
pub struct Collider {
    pub mesh: TriMesh,
    pub pose: Pose,
}

impl Collider {
    pub fn world_vertices(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.mesh.vertices().iter().map(|v| self.pose.transform_point(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tetrahedralize_box;

    #[test]
    fn lame_parameters() {
        let m = Material::new(1e5, 0.25, 1000.0).unwrap();
        let (mu, lambda) = m.lame();
        assert!((mu - 4e4).abs() < 1e-9);
        assert!((lambda - 4e4).abs() < 1e-9);
        assert!(Material::new(1e5, 0.5, 1000.0).is_err());
        assert!(Material::new(-1.0, 0.3, 1000.0).is_err());
    }

    #[test]
    fn unit_cube_mass_and_rest_state() {
        let mesh = tetrahedralize_box(Vec3::new(1.0, 1.0, 1.0), 1).unwrap();
        let s = init_softbody(&mesh, &Material::new(1e5, 0.3, 1000.0).unwrap()).unwrap();
        assert!((s.total_mass() - 1000.0).abs() < 1e-9);
        assert_eq!(s.kinetic_energy(), 0.0);
        assert_eq!(s.positions(), s.rest_positions());
        assert!((body_centroid(&s) - Vec3::new(0.5, 0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn reset_restores_exactly_and_is_idempotent() {
        let mesh = tetrahedralize_box(Vec3::new(0.01, 0.02, 0.01), 2).unwrap();
        let mut s = init_softbody(&mesh, &Material::new(1e5, 0.3, 1000.0).unwrap()).unwrap();
        let snapshot = s.rest_positions().to_vec();
        for (i, x) in s.positions_mut().iter_mut().enumerate() {
            *x += Vec3::new(1e-3 * i as f64, 0.1, -0.2);
        }
        s.velocities_mut()[3] = Vec3::new(1.0, 2.0, 3.0);
        reset(&mut s);
        assert_eq!(s.positions(), snapshot.as_slice());
        assert!(s.velocities().iter().all(|v| *v == Vec3::zeros()));
        let once = s.clone();
        reset(&mut s);
        assert_eq!(s, once);
    }

    #[test]
    fn attachment_targets_follow_pose() {
        let att = AttachmentSet::new(vec![0], vec![Vec3::x()], 1e6).unwrap();
        let t = Vec3::new(0.1, 0.2, 0.3);
        let pose = Pose::from_axis_angle(t, Vec3::z(), std::f64::consts::FRAC_PI_2);
        let targets = update_attachment_targets(&att, &pose);
        assert!((targets[0] - (Vec3::y() + t)).norm() < 1e-15);
        let shifted = update_attachment_targets(&att, &Pose::from_translation(t));
        assert_eq!(shifted[0], Vec3::x() + t);
    }

    #[test]
    fn attachment_discovery_edge_cases() {
        let v = vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)];
        let all = find_attachments(&v, &Pose::identity(), Vec3::new(1.0, 1.0, 1.0), 0.0).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(update_attachment_targets(&all, &Pose::identity()), v);
        let far = Pose::from_translation(Vec3::new(10.0, 0.0, 0.0));
        assert!(find_attachments(&v, &far, Vec3::new(1.0, 1.0, 1.0), 0.01).unwrap().is_empty());
        assert!(find_attachments(&v, &far, Vec3::new(1.0, 1.0, 1.0), -1.0).is_err());
    }
}
