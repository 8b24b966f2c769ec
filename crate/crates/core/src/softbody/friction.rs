//! Lagged, smoothed Coulomb friction between contact pairs.

use nalgebra::{Matrix2, Vector2};

use super::contact::{PairKind, VertexRef};
use super::ContactParams;
use crate::error::{Error, Result};
use crate::geometry::{classify_edge_edge, closest_point_triangle, Vec3};

/// Friction data frozen at the start of a step: the normal force magnitude,
/// the contact tangent plane and the interpolation weights of both closest points.
#[derive(Clone, Debug, PartialEq)]
pub struct FrictionPair {
    pub(crate) vertices: [VertexRef; 4],
    weights: [f64; 4],
    tangent: [Vec3; 2],
    normal_force: f64,
    eps: f64,
}

impl FrictionPair {
    /// Builds the lagged pair from positions at the start of the step.
    ///
    /// `dt` converts the transition speed `eps_v` into a per-step slip length.
    pub fn new(
        kind: PairKind,
        vertices: [VertexRef; 4],
        lagged: &[Vec3; 4],
        normal_force: f64,
        dt: f64,
        params: &ContactParams,
    ) -> Result<Self> {
        if !(normal_force >= 0.0 && normal_force.is_finite()) {
            return Err(Error::invalid(format!("lagged normal force {normal_force} must be finite and >= 0")));
        }
        let (weights, normal) = match kind {
            PairKind::PointTriangle => {
                let (q, b) = closest_point_triangle(&lagged[0], &lagged[1], &lagged[2], &lagged[3]);
                ([1.0, -b[0], -b[1], -b[2]], lagged[0] - q)
            }
            PairKind::EdgeEdge => {
                let (_, s, t) = classify_edge_edge(&lagged[0], &lagged[1], &lagged[2], &lagged[3]);
                let pa = lagged[0] + (lagged[1] - lagged[0]) * s;
                let pb = lagged[2] + (lagged[3] - lagged[2]) * t;
                ([1.0 - s, s, -(1.0 - t), -t], pa - pb)
            }
        };
        let d = normal.norm();
        if !(d > 0.0) {
            return Err(Error::invalid("friction pair has zero separation"));
        }
        let n = normal / d;
        let axis = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
            Vec3::x()
        } else if n.y.abs() <= n.z.abs() {
            Vec3::y()
        } else {
            Vec3::z()
        };
        let t1 = n.cross(&axis).normalize();
        let t2 = n.cross(&t1);
        Ok(FrictionPair {
            vertices,
            weights,
            tangent: [t1, t2],
            normal_force,
            eps: params.eps_v * dt,
        })
    }

    pub fn normal_force(&self) -> f64 {
        self.normal_force
    }

    /// Relative tangential displacement of the closest points since the lag.
    pub fn slip(&self, x: &[Vec3; 4], x_prev: &[Vec3; 4]) -> Vector2<f64> {
        let mut du = Vec3::zeros();
        for k in 0..4 {
            du += (x[k] - x_prev[k]) * self.weights[k];
        }
        Vector2::new(self.tangent[0].dot(&du), self.tangent[1].dot(&du))
    }

    pub fn energy(&self, x: &[Vec3; 4], x_prev: &[Vec3; 4], params: &ContactParams) -> f64 {
        let y = self.slip(x, x_prev).norm();
        self.normal_force * potential(y, self.eps, params.mu_s, params.mu_k)
    }

    /// Gradient per pair vertex (N).
    pub fn gradient(&self, x: &[Vec3; 4], x_prev: &[Vec3; 4], params: &ContactParams) -> [Vec3; 4] {
        let g = self.slip_gradient(&self.slip(x, x_prev), params);
        let gx = self.tangent[0] * g.x + self.tangent[1] * g.y;
        std::array::from_fn(|k| gx * self.weights[k])
    }

    pub(crate) fn slip_gradient(&self, u: &Vector2<f64>, params: &ContactParams) -> Vector2<f64> {
        u * (self.normal_force * force_over_slip(u.norm(), self.eps, params.mu_s, params.mu_k))
    }

    /// PSD-projected Hessian in slip coordinates.
    pub(crate) fn slip_hessian(&self, u: &Vector2<f64>, params: &ContactParams) -> Matrix2<f64> {
        let y = u.norm();
        let (mu_s, mu_k) = (params.mu_s, params.mu_k);
        let radial = force_over_slip(y, self.eps, mu_s, mu_k);
        if y < 1e-3 * self.eps {
            return Matrix2::identity() * (self.normal_force * radial);
        }
        let d = u / y;
        let dd = d * d.transpose();
        let along = slope(y, self.eps, mu_s, mu_k).max(0.0);
        (dd * along + (Matrix2::identity() - dd) * radial) * self.normal_force
    }

    /// `weights[k] * tangent basis`, mapping slip-space quantities onto vertex `k`.
    pub(crate) fn vertex_map(&self, k: usize) -> [Vec3; 2] {
        [self.tangent[0] * self.weights[k], self.tangent[1] * self.weights[k]]
    }
}

/// Friction dissipation potential of one lagged pair (J).
pub fn friction_energy(pair: &FrictionPair, x: &[Vec3; 4], x_prev: &[Vec3; 4], params: &ContactParams) -> f64 {
    pair.energy(x, x_prev, params)
}

/// Friction force per unit normal force at slip `y`: quadratic ramp to
/// `mu_s` at `eps`, smooth blend to `mu_k` by `2 eps`, constant beyond.
pub(crate) fn force_ratio(y: f64, eps: f64, mu_s: f64, mu_k: f64) -> f64 {
    if y < eps {
        mu_s * (2.0 * y / eps - y * y / (eps * eps))
    } else if y < 2.0 * eps {
        let t = (y - eps) / eps;
        mu_s + (mu_k - mu_s) * t * t * (3.0 - 2.0 * t)
    } else {
        mu_k
    }
}

fn force_over_slip(y: f64, eps: f64, mu_s: f64, mu_k: f64) -> f64 {
    if y < eps {
        mu_s * (2.0 / eps - y / (eps * eps))
    } else {
        force_ratio(y, eps, mu_s, mu_k) / y
    }
}

fn slope(y: f64, eps: f64, mu_s: f64, mu_k: f64) -> f64 {
    if y < eps {
        mu_s * (2.0 / eps - 2.0 * y / (eps * eps))
    } else if y < 2.0 * eps {
        let t = (y - eps) / eps;
        (mu_k - mu_s) * 6.0 * t * (1.0 - t) / eps
    } else {
        0.0
    }
}

/// Integral of [`force_ratio`] from 0 to `y`.
pub(crate) fn potential(y: f64, eps: f64, mu_s: f64, mu_k: f64) -> f64 {
    let delta = mu_k - mu_s;
    if y < eps {
        mu_s * (y * y / eps - y * y * y / (3.0 * eps * eps))
    } else if y < 2.0 * eps {
        let t = (y - eps) / eps;
        mu_s * 2.0 * eps / 3.0 + eps * (mu_s * t + delta * (t * t * t - 0.5 * t * t * t * t))
    } else {
        mu_s * 2.0 * eps / 3.0 + eps * (mu_s + 0.5 * delta) + mu_k * (y - 2.0 * eps)
    }
}
