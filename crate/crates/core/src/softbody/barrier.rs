use super::ContactParams;
use crate::error::{Error, Result};

/// Log barrier `b(d) = -(d - dhat)^2 ln(d / dhat)` for `d < dhat`, zero beyond.
///
/// The value is per unit stiffness; the solver scales it by `kappa`.
pub fn barrier_energy(d: f64, params: &ContactParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!(
            "barrier evaluated at non-positive distance {d:e}"
        )));
    }
    Ok(barrier(d, params.dhat))
}

#[inline]
pub(crate) fn barrier(d: f64, dhat: f64) -> f64 {
    if d >= dhat {
        return 0.0;
    }
    let r = d - dhat;
    -r * r * (d / dhat).ln()
}

/// First and second derivative of [`barrier`] with respect to `d`.
#[inline]
pub(crate) fn barrier_derivatives(d: f64, dhat: f64) -> (f64, f64) {
    if d >= dhat {
        return (0.0, 0.0);
    }
    let r = d - dhat;
    let l = (d / dhat).ln();
    let d1 = -2.0 * r * l - r * r / d;
    let d2 = -2.0 * l - 4.0 * r / d + r * r / (d * d);
    (d1, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_differences() {
        let dhat = 1e-3;
        for &d in &[1e-5, 1e-4, 3e-4, 7e-4, 9.9e-4] {
            let h = d * 1e-5;
            let (d1, d2) = barrier_derivatives(d, dhat);
            let fd1 = (barrier(d + h, dhat) - barrier(d - h, dhat)) / (2.0 * h);
            let fd2 = (barrier_derivatives(d + h, dhat).0 - barrier_derivatives(d - h, dhat).0) / (2.0 * h);
            assert!((fd1 - d1).abs() <= 1e-6 * d1.abs(), "{d}: {fd1} vs {d1}");
            assert!((fd2 - d2).abs() <= 1e-6 * d2.abs(), "{d}: {fd2} vs {d2}");
        }
    }

    #[test]
    fn c2_at_activation_distance() {
        let (d1, d2) = barrier_derivatives(1e-3 * (1.0 - 1e-9), 1e-3);
        assert!(d1.abs() < 1e-12 && d2.abs() < 1e-6);
    }
}
