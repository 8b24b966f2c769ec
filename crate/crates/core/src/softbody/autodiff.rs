//! Second-order forward-mode dual numbers over twelve variables (four points).

use std::ops::{Add, Div, Mul, Neg, Sub};

pub(crate) const N: usize = 12;

/// Value with its gradient and Hessian with respect to `N` inputs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Hd {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl Hd {
    pub fn constant(v: f64) -> Self {
        Hd {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    pub fn var(v: f64, index: usize) -> Self {
        let mut x = Hd::constant(v);
        x.g[index] = 1.0;
        x
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    fn chain(&self, f: f64, df: f64, d2f: f64) -> Self {
        let mut out = Hd::constant(f);
        for i in 0..N {
            out.g[i] = df * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = df * self.h[i][j] + d2f * self.g[i] * self.g[j];
            }
        }
        out
    }

    pub fn sqrt(&self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn recip(&self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Add for Hd {
    type Output = Hd;
    fn add(mut self, o: Hd) -> Hd {
        self.v += o.v;
        for i in 0..N {
            self.g[i] += o.g[i];
            for j in 0..N {
                self.h[i][j] += o.h[i][j];
            }
        }
        self
    }
}

impl Sub for Hd {
    type Output = Hd;
    fn sub(mut self, o: Hd) -> Hd {
        self.v -= o.v;
        for i in 0..N {
            self.g[i] -= o.g[i];
            for j in 0..N {
                self.h[i][j] -= o.h[i][j];
            }
        }
        self
    }
}

impl Neg for Hd {
    type Output = Hd;
    fn neg(mut self) -> Hd {
        self.v = -self.v;
        for i in 0..N {
            self.g[i] = -self.g[i];
            for j in 0..N {
                self.h[i][j] = -self.h[i][j];
            }
        }
        self
    }
}

impl Mul for Hd {
    type Output = Hd;
    fn mul(self, o: Hd) -> Hd {
        let mut out = Hd::constant(self.v * o.v);
        for i in 0..N {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = self.v * o.h[i][j]
                    + o.v * self.h[i][j]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
            }
        }
        out
    }
}

impl Div for Hd {
    type Output = Hd;
    fn div(self, o: Hd) -> Hd {
        self * o.recip()
    }
}

pub(crate) type HdVec = [Hd; 3];

pub(crate) fn sub3(a: &HdVec, b: &HdVec) -> HdVec {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot3(a: &HdVec, b: &HdVec) -> Hd {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3(a: &HdVec, b: &HdVec) -> HdVec {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Lifts four points into dual vectors, point `k` owning variables `3k..3k+3`.
pub(crate) fn lift(points: &[nalgebra::Vector3<f64>; 4]) -> [HdVec; 4] {
    std::array::from_fn(|k| std::array::from_fn(|c| Hd::var(points[k][c], 3 * k + c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_quotient_sqrt_derivatives() {
        // f(x, y) = sqrt(x * y) / y at (2, 3)
        let x = Hd::var(2.0, 0);
        let y = Hd::var(3.0, 1);
        let f = (x * y).sqrt() / y;
        // f = sqrt(x / y)
        let val = (2.0f64 / 3.0).sqrt();
        assert!((f.v - val).abs() < 1e-15);
        assert!((f.g[0] - 0.5 / (2.0f64 * 3.0).sqrt()).abs() < 1e-14);
        assert!((f.g[1] + 0.5 * 2f64.sqrt() * 3f64.powf(-1.5)).abs() < 1e-14);
        // d2f/dx2 = -1/4 x^{-3/2} y^{-1/2}
        assert!((f.h[0][0] + 0.25 * 2f64.powf(-1.5) / 3f64.sqrt()).abs() < 1e-14);
        assert!((f.h[0][1] - f.h[1][0]).abs() < 1e-15);
    }
}
