//! Compressible Neo-Hookean elasticity on linear tets.

use nalgebra::{Cholesky, Matrix3, SMatrix, SymmetricEigen};

use super::sparse::{BlockAssembler, SparseMatrix};
use super::{Material, SoftBodyState};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub(crate) type Mat9 = SMatrix<f64, 9, 9>;

/// Energy density; `None` when the element is inverted or degenerate.
pub(crate) fn psi(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Option<f64> {
    let j = f.determinant();
    if !(j > 0.0) || !j.is_finite() {
        return None;
    }
    let lj = j.ln();
    Some(0.5 * mu * (f.norm_squared() - 3.0) - mu * lj + 0.5 * lambda * lj * lj)
}

/// First Piola-Kirchhoff stress and the inverse transpose of `f`.
pub(crate) fn pk1(f: &Matrix3<f64>, mu: f64, lambda: f64) -> Option<(Matrix3<f64>, Matrix3<f64>, f64)> {
    let j = f.determinant();
    if !(j > 0.0) || !j.is_finite() {
        return None;
    }
    let fit = f.try_inverse()?.transpose();
    let lj = j.ln();
    Some((mu * (f - fit) + lambda * lj * fit, fit, lj))
}

/// `dP/dF` with `F` flattened column-major (`F_ij` at `i + 3j`).
pub(crate) fn dpdf(fit: &Matrix3<f64>, lj: f64, mu: f64, lambda: f64) -> Mat9 {
    let mut a = Mat9::zeros();
    let c = mu - lambda * lj;
    for j in 0..3 {
        for i in 0..3 {
            let r = i + 3 * j;
            for l in 0..3 {
                for k in 0..3 {
                    let col = k + 3 * l;
                    let mut v = c * fit[(i, l)] * fit[(k, j)] + lambda * fit[(i, j)] * fit[(k, l)];
                    if i == k && j == l {
                        v += mu;
                    }
                    a[(r, col)] = v;
                }
            }
        }
    }
    a
}

macro_rules! psd_projection {
    ($name:ident, $d:literal) => {
        /// Clamps negative eigenvalues to zero; matrices that already factor are returned as is.
        pub(crate) fn $name(m: SMatrix<f64, $d, $d>) -> SMatrix<f64, $d, $d> {
            if Cholesky::new(m).is_some() {
                return m;
            }
            let mut eig = SymmetricEigen::new(m);
            for v in eig.eigenvalues.iter_mut() {
                *v = v.max(0.0);
            }
            eig.recompose()
        }
    };
}

psd_projection!(project_psd9, 9);
psd_projection!(project_psd12, 12);

/// Shape-function gradients: `F_ij = sum_a x_a[i] * beta[a][j]`.
#[inline]
pub(crate) fn shape_gradients(bm: &Matrix3<f64>) -> [[f64; 3]; 4] {
    let mut beta = [[0.0; 3]; 4];
    for j in 0..3 {
        for a in 0..3 {
            beta[a + 1][j] = bm[(a, j)];
        }
        beta[0][j] = -(bm[(0, j)] + bm[(1, j)] + bm[(2, j)]);
    }
    beta
}

#[inline]
pub(crate) fn deformation_gradient(x: &[Vec3; 4], bm: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]]) * bm
}

/// Per-tet gradient and (optionally projected) Hessian blocks.
pub(crate) struct TetDerivatives {
    pub gradient: [Vec3; 4],
    pub hessian: Option<[[Matrix3<f64>; 4]; 4]>,
}

pub(crate) fn tet_derivatives(
    x: &[Vec3; 4],
    bm: &Matrix3<f64>,
    volume: f64,
    mu: f64,
    lambda: f64,
    hessian: Option<bool>,
) -> Option<TetDerivatives> {
    let f = deformation_gradient(x, bm);
    let (p, fit, lj) = pk1(&f, mu, lambda)?;
    let beta = shape_gradients(bm);
    let mut gradient = [Vec3::zeros(); 4];
    for a in 0..4 {
        for i in 0..3 {
            gradient[a][i] = volume * (0..3).map(|j| p[(i, j)] * beta[a][j]).sum::<f64>();
        }
    }
    let hessian = hessian.map(|project| {
        let mut dp = dpdf(&fit, lj, mu, lambda);
        if project {
            dp = project_psd9(dp);
        }
        let mut blocks = [[Matrix3::zeros(); 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let blk = &mut blocks[a][b];
                for j in 0..3 {
                    for l in 0..3 {
                        let w = volume * beta[a][j] * beta[b][l];
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..3 {
                            for k in 0..3 {
                                blk[(i, k)] += w * dp[(i + 3 * j, k + 3 * l)];
                            }
                        }
                    }
                }
            }
        }
        blocks
    });
    Some(TetDerivatives {
        gradient,
        hessian,
    })
}

impl SoftBodyState {
    #[inline]
    pub(crate) fn tet_positions(&self, t: usize, x: &[Vec3]) -> [Vec3; 4] {
        self.tets[t].map(|i| x[i])
    }
}

/// Total elastic energy (J) over all tets at the current positions.
pub fn elastic_energy(state: &SoftBodyState, material: &Material) -> Result<f64> {
    let (mu, lambda) = material.lame();
    let mut e = 0.0;
    for t in 0..state.tets.len() {
        let f = deformation_gradient(&state.tet_positions(t, &state.positions), &state.rest_inverse[t]);
        e += state.rest_volumes[t] * psi(&f, mu, lambda).ok_or(Error::Numerical { tet: t })?;
    }
    Ok(e)
}

/// Elastic forces per vertex (N), the negated energy gradient.
pub fn elastic_gradient(state: &SoftBodyState, material: &Material) -> Result<Vec<Vec3>> {
    let (mu, lambda) = material.lame();
    let mut forces = vec![Vec3::zeros(); state.positions.len()];
    for t in 0..state.tets.len() {
        let d = tet_derivatives(
            &state.tet_positions(t, &state.positions),
            &state.rest_inverse[t],
            state.rest_volumes[t],
            mu,
            lambda,
            None,
        )
        .ok_or(Error::Numerical { tet: t })?;
        for (a, &v) in state.tets[t].iter().enumerate() {
            forces[v] -= d.gradient[a];
        }
    }
    Ok(forces)
}

/// Exact (unprojected) elastic Hessian, `3n x 3n`.
pub fn elastic_hessian(state: &SoftBodyState, material: &Material) -> Result<SparseMatrix> {
    let (mu, lambda) = material.lame();
    let mut asm = BlockAssembler::new(state.positions.len(), false);
    for t in 0..state.tets.len() {
        let d = tet_derivatives(
            &state.tet_positions(t, &state.positions),
            &state.rest_inverse[t],
            state.rest_volumes[t],
            mu,
            lambda,
            Some(false),
        )
        .ok_or(Error::Numerical { tet: t })?;
        let h = d.hessian.expect("requested");
        for (a, &va) in state.tets[t].iter().enumerate() {
            for (b, &vb) in state.tets[t].iter().enumerate() {
                asm.add_block(va, vb, &h[a][b]);
            }
        }
    }
    Ok(asm.into_matrix())
}
