//! Rigid gelpad mode: rigid bodies with penalty (compliant) point contact.
//!
//! Contact is sampled at collider vertices: every vertex of one body that lies
//! inside the other body's closed collider produces a spring-damper force along
//! the direction to the nearest surface point. Tangential forces are viscous
//! up to the Coulomb limit.

use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closest_point_triangle, Aabb, Pose, TriMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompliantParams {
    /// Contact stiffness (N/m) per penetrating sample.
    pub k_c: f64,
    /// Damping (N s/m), also used as the tangential viscous slope.
    pub c_d: f64,
    pub mu: f64,
}

impl Default for CompliantParams {
    fn default() -> Self {
        CompliantParams { k_c: 1e4, c_d: 10.0, mu: 0.5 }
    }
}

impl CompliantParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_c > 0.0 && self.k_c.is_finite()) {
            return Err(Error::invalid(format!("k_c = {} must be > 0", self.k_c)));
        }
        if !(self.c_d >= 0.0 && self.c_d.is_finite()) {
            return Err(Error::invalid(format!("c_d = {} must be >= 0", self.c_d)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!("mu = {} must be >= 0", self.mu)));
        }
        Ok(())
    }
}

/// Force and torque about the body's center of mass (its pose origin).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl std::ops::AddAssign for Wrench {
    fn add_assign(&mut self, o: Wrench) {
        self.force += o.force;
        self.torque += o.torque;
    }
}

#[derive(Clone, Debug)]
pub struct RigidBody {
    /// Pose of the center of mass; the collider is expressed in this frame.
    pub pose: Pose,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    mass: f64,
    /// Body-frame inertia tensor.
    inertia: Matrix3<f64>,
    collider: TriMesh,
    kinematic: bool,
    target: Option<Pose>,
    /// Body-frame face planes `(n, d)` with `n . x <= d` inside, if the collider is convex.
    planes: Option<Vec<(Vec3, f64)>>,
}

fn convex_planes(mesh: &TriMesh) -> Option<Vec<(Vec3, f64)>> {
    let v = mesh.vertices();
    let bb = Aabb::from_points(v);
    let scale = (bb.max - bb.min).norm();
    let tol = 1e-6 * scale;
    let mut planes = Vec::with_capacity(mesh.triangles().len());
    for t in mesh.triangles() {
        let (a, b, c) = (v[t[0]], v[t[1]], v[t[2]]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len <= 0.0 {
            return None;
        }
        let n = n / len;
        let d = n.dot(&a);
        if v.iter().any(|x| n.dot(x) - d > tol) {
            return None;
        }
        planes.push((n, d));
    }
    Some(planes)
}

impl RigidBody {
    /// Dynamic body. `inertia` is the body-frame tensor about the pose origin.
    pub fn new_dynamic(collider: TriMesh, pose: Pose, mass: f64, inertia: Matrix3<f64>) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::invalid(format!("mass {mass} must be > 0")));
        }
        if (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm() || inertia.cholesky().is_none() {
            return Err(Error::invalid("inertia must be symmetric positive definite"));
        }
        Ok(RigidBody {
            pose,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            mass,
            inertia,
            kinematic: false,
            target: None,
            planes: convex_planes(&collider),
            collider,
        })
    }

    pub fn new_kinematic(collider: TriMesh, pose: Pose) -> Self {
        RigidBody {
            pose,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            mass: f64::INFINITY,
            inertia: Matrix3::identity(),
            kinematic: true,
            target: None,
            planes: convex_planes(&collider),
            collider,
        }
    }

    /// Solid sphere of uniform density.
    pub fn solid_sphere(collider: TriMesh, pose: Pose, radius: f64, density: f64) -> Result<Self> {
        let mass = density * 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
        RigidBody::new_dynamic(collider, pose, mass, Matrix3::identity() * (0.4 * mass * radius * radius))
    }

    /// Solid box of uniform density.
    pub fn solid_box(collider: TriMesh, pose: Pose, half_extents: Vec3, density: f64) -> Result<Self> {
        let mass = density * 8.0 * half_extents.x * half_extents.y * half_extents.z;
        let [a, b, c] = [2.0 * half_extents.x, 2.0 * half_extents.y, 2.0 * half_extents.z];
        let inertia = Matrix3::from_diagonal(&Vec3::new(b * b + c * c, a * a + c * c, a * a + b * b)) * (mass / 12.0);
        RigidBody::new_dynamic(collider, pose, mass, inertia)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    pub fn collider(&self) -> &TriMesh {
        &self.collider
    }

    pub fn is_kinematic(&self) -> bool {
        self.kinematic
    }

    /// Pose a kinematic body must reach at the end of the next step.
    pub fn set_kinematic_target(&mut self, target: Pose) {
        self.target = Some(target);
    }

    pub fn world_vertices(&self) -> Vec<Vec3> {
        self.collider.vertices().iter().map(|v| self.pose.transform_point(v)).collect()
    }

    pub fn point_velocity(&self, p: &Vec3) -> Vec3 {
        self.linear_velocity + self.angular_velocity.cross(&(p - self.pose.translation))
    }

    pub fn linear_momentum(&self) -> Vec3 {
        if self.kinematic {
            Vec3::zeros()
        } else {
            self.linear_velocity * self.mass
        }
    }

    fn world_inertia(&self) -> Matrix3<f64> {
        let r = self.pose.rotation.to_rotation_matrix();
        r.matrix() * self.inertia * r.matrix().transpose()
    }
}

struct WorldCollider<'a> {
    vertices: Vec<Vec3>,
    triangles: &'a [[usize; 3]],
    aabb: Aabb,
    pose: Pose,
    planes: Option<&'a [(Vec3, f64)]>,
}

impl<'a> WorldCollider<'a> {
    fn of(body: &'a RigidBody) -> Self {
        let vertices = body.world_vertices();
        let aabb = Aabb::from_points(&vertices);
        WorldCollider {
            vertices,
            triangles: body.collider.triangles(),
            aabb,
            pose: body.pose,
            planes: body.planes.as_deref(),
        }
    }

    /// Generalized winding number of the closed surface around `p`.
    fn winding(&self, p: &Vec3) -> f64 {
        let mut total = 0.0;
        for t in self.triangles {
            let a = self.vertices[t[0]] - p;
            let b = self.vertices[t[1]] - p;
            let c = self.vertices[t[2]] - p;
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * num.atan2(den);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Penetration depth and outward direction for a point inside the collider.
    fn penetration(&self, p: &Vec3) -> Option<(f64, Vec3)> {
        if !self.aabb.contains(p) {
            return None;
        }
        if let Some(planes) = self.planes {
            let local = self.pose.inverse_transform_point(p);
            let mut best = (f64::NEG_INFINITY, Vec3::z());
            for (n, d) in planes {
                let s = n.dot(&local) - d;
                if s > 0.0 {
                    return None;
                }
                if s > best.0 {
                    best = (s, *n);
                }
            }
            return Some((-best.0, self.pose.rotation * best.1));
        }
        if self.winding(p) < 0.5 {
            return None;
        }
        let mut best = (f64::INFINITY, Vec3::zeros(), 0);
        for (i, t) in self.triangles.iter().enumerate() {
            let (q, _) = closest_point_triangle(p, &self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]);
            let d = (q - p).norm();
            if d < best.0 {
                best = (d, q, i);
            }
        }
        let (depth, q, i) = best;
        let normal = if depth > 1e-12 {
            (q - p) / depth
        } else {
            let t = self.triangles[i];
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            (b - a).cross(&(c - a)).normalize()
        };
        Some((depth, normal))
    }
}

/// Force on the body that owns a penetrating sample.
fn sample_force(depth: f64, n: &Vec3, v_rel: &Vec3, params: &CompliantParams) -> Vec3 {
    let vn = v_rel.dot(n);
    let fn_mag = params.k_c * depth + params.c_d * (-vn).max(0.0);
    let vt = v_rel - n * vn;
    let speed = vt.norm();
    let ft = if speed > 0.0 {
        -vt * ((params.mu * fn_mag).min(params.c_d * speed) / speed)
    } else {
        Vec3::zeros()
    };
    n * fn_mag + ft
}

fn wrench_at(body: &RigidBody, p: &Vec3, f: Vec3) -> Wrench {
    Wrench { force: f, torque: (p - body.pose.translation).cross(&f) }
}

/// Velocity and position derivatives of the summed contact wrench on one body,
/// split into decoupled linear and angular blocks.
#[derive(Clone, Copy, Debug)]
struct ContactJacobian {
    c_lin: Matrix3<f64>,
    k_lin: Matrix3<f64>,
    c_ang: Matrix3<f64>,
    k_ang: Matrix3<f64>,
}

impl Default for ContactJacobian {
    fn default() -> Self {
        let z = Matrix3::zeros();
        ContactJacobian { c_lin: z, k_lin: z, c_ang: z, k_ang: z }
    }
}

impl ContactJacobian {
    fn add_sample(&mut self, body: &RigidBody, p: &Vec3, n: &Vec3, params: &CompliantParams) {
        if body.kinematic {
            return;
        }
        let r = p - body.pose.translation;
        let rn = r.cross(n);
        self.c_lin += Matrix3::identity() * params.c_d;
        self.k_lin += n * n.transpose() * params.k_c;
        self.c_ang += (Matrix3::identity() * r.norm_squared() - r * r.transpose()) * params.c_d;
        self.k_ang += rn * rn.transpose() * params.k_c;
    }

    fn add(&mut self, o: &ContactJacobian) {
        self.c_lin += o.c_lin;
        self.k_lin += o.k_lin;
        self.c_ang += o.c_ang;
        self.k_ang += o.k_ang;
    }
}

type PairContacts = (Wrench, Wrench, ContactJacobian, ContactJacobian);

fn pair_contacts(a: &RigidBody, wa: &WorldCollider, b: &RigidBody, wb: &WorldCollider, params: &CompliantParams) -> PairContacts {
    let mut out = (Wrench::default(), Wrench::default(), ContactJacobian::default(), ContactJacobian::default());
    if !wa.aabb.intersects(&wb.aabb) {
        return out;
    }
    // Samples of `a` inside `b`, then samples of `b` inside `a`.
    for p in &wa.vertices {
        if let Some((depth, n)) = wb.penetration(p) {
            let f = sample_force(depth, &n, &(a.point_velocity(p) - b.point_velocity(p)), params);
            out.0 += wrench_at(a, p, f);
            out.1 += wrench_at(b, p, -f);
            out.2.add_sample(a, p, &n, params);
            out.3.add_sample(b, p, &n, params);
        }
    }
    for p in &wb.vertices {
        if let Some((depth, n)) = wa.penetration(p) {
            let f = sample_force(depth, &n, &(b.point_velocity(p) - a.point_velocity(p)), params);
            out.1 += wrench_at(b, p, f);
            out.0 += wrench_at(a, p, -f);
            out.3.add_sample(b, p, &n, params);
            out.2.add_sample(a, p, &n, params);
        }
    }
    out
}

/// Contact wrenches on `a` and on `b`. The forces are exact negatives of each other.
pub fn contact_forces(a: &RigidBody, b: &RigidBody, params: &CompliantParams) -> (Wrench, Wrench) {
    let (wa, wb, _, _) = pair_contacts(a, &WorldCollider::of(a), b, &WorldCollider::of(b), params);
    (wa, wb)
}

fn accumulate(bodies: &[RigidBody], params: &CompliantParams) -> (Vec<Wrench>, Vec<ContactJacobian>) {
    let world: Vec<WorldCollider> = bodies.iter().map(WorldCollider::of).collect();
    let mut wrenches = vec![Wrench::default(); bodies.len()];
    let mut jac = vec![ContactJacobian::default(); bodies.len()];
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            if bodies[i].kinematic && bodies[j].kinematic {
                continue;
            }
            let (wi, wj, ji, jj) = pair_contacts(&bodies[i], &world[i], &bodies[j], &world[j], params);
            wrenches[i] += wi;
            wrenches[j] += wj;
            jac[i].add(&ji);
            jac[j].add(&jj);
        }
    }
    (wrenches, jac)
}

/// Total contact wrench on every body, summed over all pairs with at least one dynamic body.
pub fn all_contact_wrenches(bodies: &[RigidBody], params: &CompliantParams) -> Vec<Wrench> {
    accumulate(bodies, params).0
}

/// One semi-implicit Euler step. Kinematic bodies with a target land on it exactly
/// and carry the implied velocity; without a target they integrate their own twist.
///
/// Contact forces are linearized in the new velocity,
/// `(M + h C + h^2 K) v' = (M + h C) v + h f`, so stiff contact between many
/// samples and a light body stays stable at the given step. Without contact
/// this is plain symplectic Euler.
pub fn step_rigid(bodies: &mut [RigidBody], params: &CompliantParams, gravity: Vec3, dt: f64) -> Result<Vec<Wrench>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt = {dt} must be > 0")));
    }
    for b in bodies.iter_mut().filter(|b| b.kinematic) {
        if let Some(t) = &b.target {
            b.linear_velocity = (t.translation - b.pose.translation) / dt;
            b.angular_velocity = (t.rotation * b.pose.rotation.inverse()).scaled_axis() / dt;
        }
    }
    let (wrenches, jac) = accumulate(bodies, params);
    for ((b, w), j) in bodies.iter_mut().zip(&wrenches).zip(&jac) {
        if b.kinematic {
            match b.target.take() {
                Some(t) => b.pose = t,
                None => integrate_pose(&mut b.pose, &b.linear_velocity, &b.angular_velocity, dt),
            }
            continue;
        }
        let singular = || Error::Integration("singular contact system".into());
        let m = Matrix3::identity() * b.mass;
        let lhs = m + j.c_lin * dt + j.k_lin * (dt * dt);
        let rhs = (m + j.c_lin * dt) * b.linear_velocity + (w.force + gravity * b.mass) * dt;
        b.linear_velocity = lhs.try_inverse().ok_or_else(singular)? * rhs;

        let iw = b.world_inertia();
        let gyro = b.angular_velocity.cross(&(iw * b.angular_velocity));
        let lhs = iw + j.c_ang * dt + j.k_ang * (dt * dt);
        let rhs = (iw + j.c_ang * dt) * b.angular_velocity + (w.torque - gyro) * dt;
        b.angular_velocity = lhs.try_inverse().ok_or_else(singular)? * rhs;

        let (v, omega) = (b.linear_velocity, b.angular_velocity);
        integrate_pose(&mut b.pose, &v, &omega, dt);
        if !(b.pose.is_finite() && v.iter().all(|x| x.is_finite()) && omega.iter().all(|x| x.is_finite())) {
            return Err(Error::Integration("non-finite rigid body state".into()));
        }
    }
    Ok(wrenches)
}

fn integrate_pose(pose: &mut Pose, v: &Vec3, omega: &Vec3, dt: f64) {
    pose.translation += v * dt;
    pose.rotation = UnitQuaternion::from_scaled_axis(omega * dt) * pose.rotation;
}
