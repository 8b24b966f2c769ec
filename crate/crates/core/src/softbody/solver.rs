use std::time::Instant;

use nalgebra::{Matrix2x3, Matrix3, Matrix3x2};

use super::barrier::{barrier, barrier_derivatives};
use super::contact::{
    additive_ccd, barrier_derivs, pair_distance, ContactPair, ContactScene, PairKind, Positions, SurfaceSpec,
    VertexRef,
};
use super::elastic::{deformation_gradient, psi, tet_derivatives};
use super::friction::FrictionPair;
use super::sparse::BlockAssembler;
use super::{min_volume, Collider, ContactParams, SoftBody, SolverParams};
use crate::error::{Error, Result, StallDiagnostics};
use crate::geometry::Vec3;

/// Contact summary for one body after a step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BodyContact {
    /// Active barrier pairs touching this body.
    pub pairs: usize,
    /// Sum of barrier normal force magnitudes over those pairs (N).
    pub normal_force: f64,
    /// Net barrier force on the body (N).
    pub force: Vec3,
}

/// Per-step solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub newton_iterations: usize,
    /// Largest gradient component of the incremental potential at exit (N).
    pub residual: f64,
    /// False when the iteration cap was hit first.
    pub converged: bool,
    pub min_pair_distance: Option<f64>,
    pub min_tet_volume: f64,
    pub active_pairs: usize,
    pub wall_time_s: f64,
    pub body_contacts: Vec<BodyContact>,
}

impl StepReport {
    pub const CSV_HEADER: &'static str =
        "newton_iterations,residual,converged,min_pair_distance,min_tet_volume,active_pairs,wall_time_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{},{:e},{},{:.6}",
            self.newton_iterations,
            self.residual,
            self.converged,
            self.min_pair_distance.map(|d| format!("{d:e}")).unwrap_or_default(),
            self.min_tet_volume,
            self.active_pairs,
            self.wall_time_s
        )
    }
}

/// Implicit-Euler soft-body integrator.
///
/// One instance owns no body state; it only remembers collider vertex
/// positions from the previous step so friction sees collider motion.
#[derive(Clone, Debug)]
pub struct IpcSolver {
    pub contact: ContactParams,
    pub params: SolverParams,
    /// Gravity (m/s^2).
    pub gravity: Vec3,
    last_fixed: Option<Vec<Vec3>>,
}

impl IpcSolver {
    pub fn new(contact: ContactParams, params: SolverParams) -> Result<Self> {
        contact.validate()?;
        params.validate()?;
        Ok(IpcSolver {
            contact,
            params,
            gravity: Vec3::new(0.0, 0.0, -9.81),
            last_fixed: None,
        })
    }

    pub fn with_gravity(mut self, gravity: Vec3) -> Self {
        self.gravity = gravity;
        self
    }

    /// Forgets collider history, as after an environment reset.
    pub fn clear_history(&mut self) {
        self.last_fixed = None;
    }

    /// Advances every body by one time step.
    ///
    /// On error no body is modified.
    pub fn step(&mut self, bodies: &mut [SoftBody], colliders: &[Collider]) -> Result<StepReport> {
        let start = Instant::now();
        self.contact.validate()?;
        self.params.validate()?;
        let h = self.params.dt;
        let cp = self.contact;

        let mut offsets = Vec::with_capacity(bodies.len());
        let mut n = 0;
        for b in bodies.iter() {
            offsets.push(n);
            n += b.state.positions.len();
        }
        let mut x_n = Vec::with_capacity(n);
        let mut masses = Vec::with_capacity(n);
        let mut x_tilde = Vec::with_capacity(n);
        let mut attach = Vec::new();
        for (b, body) in bodies.iter().enumerate() {
            let s = &body.state;
            for i in 0..s.positions.len() {
                x_n.push(s.positions[i]);
                masses.push(s.masses[i]);
                x_tilde.push(s.positions[i] + s.velocities[i] * h + self.gravity * (h * h));
            }
            if let (Some(set), Some(targets)) = (body.attachment(), body.attachment_targets()) {
                for (&i, t) in set.vertex_ids().iter().zip(targets) {
                    if !t.iter().all(|c| c.is_finite()) {
                        return Err(Error::invalid("attachment target is not finite"));
                    }
                    attach.push((offsets[b] + i, *t, set.stiffness()));
                }
            }
        }

        let fixed: Vec<Vec3> = colliders.iter().flat_map(|c| c.world_vertices()).collect();
        let fixed_prev = match &self.last_fixed {
            Some(p) if p.len() == fixed.len() => p.clone(),
            _ => fixed.clone(),
        };

        let mut specs = Vec::with_capacity(bodies.len() + colliders.len());
        for (b, body) in bodies.iter().enumerate() {
            let off = offsets[b];
            specs.push(SurfaceSpec {
                triangles: body.state.surface.iter().map(|t| t.map(|i| VertexRef::Dof(off + i))).collect(),
                fixed: false,
            });
        }
        let mut off = 0;
        for c in colliders {
            specs.push(SurfaceSpec {
                triangles: c.mesh.triangles().iter().map(|t| t.map(|i| VertexRef::Fixed(off + i))).collect(),
                fixed: true,
            });
            off += c.mesh.vertices().len();
        }
        let scene = ContactScene::new(&specs);

        let start_pos = Positions {
            dof: &x_n,
            fixed: &fixed,
        };
        let lagged = scene.active_pairs(&start_pos, cp.dhat);
        if let Some(p) = lagged.iter().find(|p| !(p.distance > 0.0)) {
            return Err(Error::Integration(format!(
                "start configuration intersects ({:?} pair {:?})",
                p.kind, p.vertices
            )));
        }
        let mut friction = Vec::new();
        if cp.mu_s > 0.0 {
            for p in &lagged {
                let lambda = cp.kappa * barrier_derivatives(p.distance, cp.dhat).0.abs();
                if lambda > 0.0 {
                    friction.push(FrictionPair::new(p.kind, p.vertices, &start_pos.four(&p.vertices), lambda, h, &cp)?);
                }
            }
        }

        let problem = Problem {
            bodies,
            offsets: &offsets,
            masses: &masses,
            x_tilde: &x_tilde,
            inv_h2: 1.0 / (h * h),
            fixed: &fixed,
            x_n: &x_n,
            fixed_prev: &fixed_prev,
            friction: &friction,
            attach: &attach,
            contact: &cp,
        };

        let mut x = x_n.clone();
        let mut iterations = 0;
        let mut converged = false;
        let mut residual;
        loop {
            let active = scene.active_pairs(&problem.pos(&x), cp.dhat);
            let (g, hess) = problem.assemble(&x, &active, true)?;
            residual = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if residual < self.params.newton_tol {
                converged = true;
                break;
            }
            if iterations >= self.params.max_newton_iters {
                break;
            }
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let p_flat = hess.expect("requested").solve(&rhs)?;
            let p: Vec<Vec3> = (0..n).map(|i| Vec3::new(p_flat[3 * i], p_flat[3 * i + 1], p_flat[3 * i + 2])).collect();
            let p_max = p_flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if p_max < self.params.step_tol {
                converged = true;
                break;
            }
            iterations += 1;

            let x_full: Vec<Vec3> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            let cands = scene.candidates(&problem.pos(&x), Some(&problem.pos(&x_full)), 0.5 * cp.dhat);
            let mut alpha_max = problem.inversion_free_step(&x, &p).min(1.0);
            let here = problem.pos(&x);
            for (kind, v) in &cands {
                let xs = here.four(v);
                let dx = v.map(|r| match r {
                    VertexRef::Dof(i) => p[i],
                    VertexRef::Fixed(_) => Vec3::zeros(),
                });
                alpha_max = alpha_max.min(additive_ccd(*kind, &xs, &dx));
            }
            let stall = |x: &[Vec3], residual: f64| {
                let active = scene.active_pairs(&problem.pos(x), cp.dhat);
                Error::SolverStall(Box::new(StallDiagnostics {
                    iterations,
                    residual,
                    worst_pair_distance: active.iter().map(|p| p.distance).reduce(f64::min),
                    min_tet_volume: problem.min_tet_volume(x),
                }))
            };
            if !(alpha_max > 1e-14) {
                return Err(stall(&x, residual));
            }

            let e0 = problem.energy(&x, &cands);
            let slope: f64 = g.iter().zip(&p_flat).map(|(a, b)| a * b).sum();
            let mut alpha = alpha_max;
            let mut accepted = None;
            for _ in 0..self.params.max_line_search.max(1) {
                let trial: Vec<Vec3> = x.iter().zip(&p).map(|(a, b)| a + b * alpha).collect();
                let e = problem.energy(&trial, &cands);
                if e <= e0 + 1e-4 * alpha * slope {
                    accepted = Some(trial);
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some(trial) => x = trial,
                None => {
                    // The predicted decrease is below what the energy can resolve.
                    if -slope <= 1e-12 * problem.energy_scale() {
                        converged = true;
                        break;
                    }
                    return Err(stall(&x, residual));
                }
            }
        }

        let final_pairs = scene.active_pairs(&problem.pos(&x), cp.dhat);
        let body_contacts = problem.body_contacts(&x, &final_pairs)?;
        let min_tet_volume = problem.min_tet_volume(&x);
        let min_pair_distance = final_pairs.iter().map(|p| p.distance).reduce(f64::min);
        if !(min_tet_volume > 0.0) || min_pair_distance.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Integration("accepted state violates inversion or intersection freedom".into()));
        }

        for (b, body) in bodies.iter_mut().enumerate() {
            let off = offsets[b];
            let s = &mut body.state;
            for i in 0..s.positions.len() {
                s.velocities[i] = (x[off + i] - x_n[off + i]) / h;
                s.positions[i] = x[off + i];
            }
        }
        self.last_fixed = Some(fixed);

        Ok(StepReport {
            newton_iterations: iterations,
            residual,
            converged,
            min_pair_distance,
            min_tet_volume,
            active_pairs: final_pairs.len(),
            wall_time_s: start.elapsed().as_secs_f64(),
            body_contacts,
        })
    }
}

struct Problem<'a> {
    bodies: &'a [SoftBody],
    offsets: &'a [usize],
    masses: &'a [f64],
    x_tilde: &'a [Vec3],
    inv_h2: f64,
    fixed: &'a [Vec3],
    x_n: &'a [Vec3],
    fixed_prev: &'a [Vec3],
    friction: &'a [FrictionPair],
    attach: &'a [(usize, Vec3, f64)],
    contact: &'a ContactParams,
}

impl<'a> Problem<'a> {
    fn pos<'b>(&'b self, x: &'b [Vec3]) -> Positions<'b> {
        Positions {
            dof: x,
            fixed: self.fixed,
        }
    }

    fn prev(&self) -> Positions<'a> {
        Positions {
            dof: self.x_n,
            fixed: self.fixed_prev,
        }
    }

    fn body_of(&self, dof: usize) -> usize {
        self.offsets.partition_point(|&o| o <= dof) - 1
    }

    fn min_tet_volume(&self, x: &[Vec3]) -> f64 {
        self.bodies
            .iter()
            .zip(self.offsets)
            .map(|(b, &off)| min_volume(&b.state.tets, &x[off..off + b.state.positions.len()]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Magnitude of the elastic energy terms, setting the rounding floor of [`Self::energy`].
    fn energy_scale(&self) -> f64 {
        self.bodies
            .iter()
            .map(|b| {
                let (mu, lambda) = b.material.lame();
                b.state.rest_volumes.iter().sum::<f64>() * (mu + lambda)
            })
            .sum()
    }

    /// Incremental potential; infinite for inverted tets or touching pairs.
    fn energy(&self, x: &[Vec3], pairs: &[(PairKind, [VertexRef; 4])]) -> f64 {
        let mut e = 0.0;
        for i in 0..x.len() {
            e += 0.5 * self.masses[i] * (x[i] - self.x_tilde[i]).norm_squared() * self.inv_h2;
        }
        for (body, &off) in self.bodies.iter().zip(self.offsets) {
            let s = &body.state;
            let (mu, lambda) = body.material.lame();
            let xb = &x[off..off + s.positions.len()];
            for t in 0..s.tets.len() {
                let f = deformation_gradient(&s.tet_positions(t, xb), &s.rest_inverse[t]);
                match psi(&f, mu, lambda) {
                    Some(v) => e += s.rest_volumes[t] * v,
                    None => return f64::INFINITY,
                }
            }
        }
        let pos = self.pos(x);
        for (kind, v) in pairs {
            let d = pair_distance(*kind, &pos.four(v));
            if !(d > 0.0) {
                return f64::INFINITY;
            }
            e += self.contact.kappa * barrier(d, self.contact.dhat);
        }
        let prev = self.prev();
        for f in self.friction {
            e += f.energy(&pos.four(&f.vertices), &prev.four(&f.vertices), self.contact);
        }
        for &(i, t, k) in self.attach {
            e += 0.5 * k * (x[i] - t).norm_squared();
        }
        e
    }

    /// Gradient and, optionally, the PSD-projected Hessian (lower triangle).
    fn assemble(
        &self,
        x: &[Vec3],
        active: &[ContactPair],
        with_hessian: bool,
    ) -> Result<(Vec<f64>, Option<BlockAssembler>)> {
        let n = x.len();
        let mut g = vec![0.0; 3 * n];
        let mut hess = with_hessian.then(|| BlockAssembler::new(n, true));
        let mut add_g = |i: usize, v: &Vec3| {
            for c in 0..3 {
                g[3 * i + c] += v[c];
            }
        };
        for i in 0..n {
            let w = self.masses[i] * self.inv_h2;
            add_g(i, &((x[i] - self.x_tilde[i]) * w));
            if let Some(hs) = hess.as_mut() {
                for c in 0..3 {
                    hs.add_diagonal(3 * i + c, w);
                }
            }
        }
        for (body, &off) in self.bodies.iter().zip(self.offsets) {
            let s = &body.state;
            let (mu, lambda) = body.material.lame();
            let xb = &x[off..off + s.positions.len()];
            if let Some(hs) = hess.as_mut() {
                hs.reserve(16 * s.tets.len());
            }
            for t in 0..s.tets.len() {
                let d = tet_derivatives(
                    &s.tet_positions(t, xb),
                    &s.rest_inverse[t],
                    s.rest_volumes[t],
                    mu,
                    lambda,
                    with_hessian.then_some(true),
                )
                .ok_or(Error::Numerical { tet: t })?;
                let tet = s.tets[t].map(|i| off + i);
                for a in 0..4 {
                    add_g(tet[a], &d.gradient[a]);
                }
                if let (Some(hs), Some(blocks)) = (hess.as_mut(), d.hessian.as_ref()) {
                    for a in 0..4 {
                        for b in 0..4 {
                            hs.add_block(tet[a], tet[b], &blocks[a][b]);
                        }
                    }
                }
            }
        }
        let pos = self.pos(x);
        for p in active {
            let (pg, ph) = barrier_derivs(p.kind, &pos.four(&p.vertices), self.contact, with_hessian)?;
            for a in 0..4 {
                if let VertexRef::Dof(i) = p.vertices[a] {
                    add_g(i, &pg[a]);
                }
            }
            if let (Some(hs), Some(ph)) = (hess.as_mut(), ph) {
                for a in 0..4 {
                    let VertexRef::Dof(i) = p.vertices[a] else { continue };
                    for b in 0..4 {
                        let VertexRef::Dof(j) = p.vertices[b] else { continue };
                        let blk: Matrix3<f64> = ph.fixed_view::<3, 3>(3 * a, 3 * b).into_owned();
                        hs.add_block(i, j, &blk);
                    }
                }
            }
        }
        let prev = self.prev();
        for f in self.friction {
            let u = f.slip(&pos.four(&f.vertices), &prev.four(&f.vertices));
            let gu = f.slip_gradient(&u, self.contact);
            let maps: [Matrix3x2<f64>; 4] = std::array::from_fn(|k| {
                let [a, b] = f.vertex_map(k);
                Matrix3x2::from_columns(&[a, b])
            });
            for k in 0..4 {
                if let VertexRef::Dof(i) = f.vertices[k] {
                    add_g(i, &(maps[k] * gu));
                }
            }
            if let Some(hs) = hess.as_mut() {
                let hu = f.slip_hessian(&u, self.contact);
                for k in 0..4 {
                    let VertexRef::Dof(i) = f.vertices[k] else { continue };
                    let left = maps[k] * hu;
                    for l in 0..4 {
                        let VertexRef::Dof(j) = f.vertices[l] else { continue };
                        let right: Matrix2x3<f64> = maps[l].transpose();
                        hs.add_block(i, j, &(left * right));
                    }
                }
            }
        }
        for &(i, t, k) in self.attach {
            add_g(i, &((x[i] - t) * k));
            if let Some(hs) = hess.as_mut() {
                for c in 0..3 {
                    hs.add_diagonal(3 * i + c, k);
                }
            }
        }
        Ok((g, hess))
    }

    /// Largest step fraction in `(0, 1]` keeping every tet volume positive,
    /// backed off to 80% of the first root of `det(Ds + alpha dDs)`.
    fn inversion_free_step(&self, x: &[Vec3], p: &[Vec3]) -> f64 {
        let mut alpha: f64 = 1.0;
        for (body, &off) in self.bodies.iter().zip(self.offsets) {
            for tet in &body.state.tets {
                let [a0, a1, a2, a3] = tet.map(|i| x[off + i]);
                let [b0, b1, b2, b3] = tet.map(|i| p[off + i]);
                let (a, b) = ([a1 - a0, a2 - a0, a3 - a0], [b1 - b0, b2 - b0, b3 - b0]);
                if let Some(root) = first_root_in_unit(&a, &b) {
                    alpha = alpha.min(0.8 * root);
                }
            }
        }
        alpha
    }

    fn body_contacts(&self, x: &[Vec3], pairs: &[ContactPair]) -> Result<Vec<BodyContact>> {
        let mut out = vec![BodyContact::default(); self.bodies.len()];
        let pos = self.pos(x);
        for p in pairs {
            let (g, _) = barrier_derivs(p.kind, &pos.four(&p.vertices), self.contact, false)?;
            let lambda = self.contact.kappa * barrier_derivatives(p.distance, self.contact.dhat).0.abs();
            let mut seen = [usize::MAX; 2];
            for a in 0..4 {
                if let VertexRef::Dof(i) = p.vertices[a] {
                    let b = self.body_of(i);
                    out[b].force -= g[a];
                    if !seen.contains(&b) {
                        seen[if seen[0] == usize::MAX { 0 } else { 1 }] = b;
                        out[b].pairs += 1;
                        out[b].normal_force += lambda;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Smallest root in `(0, 1]` of `det([a0 + t b0, a1 + t b1, a2 + t b2])`,
/// given a positive determinant at `t = 0`.
fn first_root_in_unit(a: &[Vec3; 3], b: &[Vec3; 3]) -> Option<f64> {
    let det = |u: &Vec3, v: &Vec3, w: &Vec3| u.dot(&v.cross(w));
    let c0 = det(&a[0], &a[1], &a[2]);
    let c1 = det(&b[0], &a[1], &a[2]) + det(&a[0], &b[1], &a[2]) + det(&a[0], &a[1], &b[2]);
    let c2 = det(&a[0], &b[1], &b[2]) + det(&b[0], &a[1], &b[2]) + det(&b[0], &b[1], &a[2]);
    let c3 = det(&b[0], &b[1], &b[2]);
    let f = |t: f64| ((c3 * t + c2) * t + c1) * t + c0;
    if !(c0 > 0.0) {
        return Some(0.0);
    }
    // Split [0, 1] at the stationary points so each piece is monotone.
    let mut cuts = vec![0.0];
    let (qa, qb, qc) = (3.0 * c3, 2.0 * c2, c1);
    if qa.abs() > 0.0 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for r in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
                if r > 0.0 && r < 1.0 {
                    cuts.push(r);
                }
            }
        }
    } else if qb.abs() > 0.0 {
        let r = -qc / qb;
        if r > 0.0 && r < 1.0 {
            cuts.push(r);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.push(1.0);
    for w in cuts.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        if f(hi) > 0.0 {
            continue;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some(lo);
    }
    None
}
