//! Real matrix logarithm and exponential for small (D <= 3) matrices.
//!
//! The exponential uses scaling-and-squaring with a truncated Taylor
//! series. The logarithm screens the spectrum first (a principal real log
//! only exists when no eigenvalue lies on the closed negative real axis),
//! then takes an eigendecomposition shortcut for symmetric input and
//! inverse scaling-and-squaring everywhere else: repeated square roots by
//! the Denman-Beavers iteration until the argument is near the identity,
//! a Gregory series there, and a power-of-two scale back.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Matrix exponential by scaling and squaring.
///
/// Total on finite inputs; `matrix_exp(&zeros) == identity`.
pub fn matrix_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(m.nrows(), m.ncols(), "matrix_exp requires a square matrix");
    let n = m.nrows();
    let norm = m.norm();
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    // Scale so the series argument has norm <= 0.5.
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);

    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=24 {
        term = (&term * &scaled) / k as f64;
        result += &term;
        if term.norm() < 1e-18 * result.norm() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Principal real matrix logarithm.
///
/// Requires positive determinant and a spectrum clear of the closed
/// negative real axis; header flips must be factored out by the caller.
pub fn real_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert_eq!(m.nrows(), m.ncols(), "real_log requires a square matrix");
    let det = m.clone().determinant();
    if det.abs() <= super::SINGULARITY_THRESHOLD {
        return Err(Error::SingularMatrix { det });
    }
    if det < 0.0 {
        return Err(Error::NegativeDeterminant { det });
    }
    // Spectrum screen: eigenvalues on the closed negative real axis have
    // no principal logarithm.
    for ev in m.complex_eigenvalues().iter() {
        if ev.re <= 0.0 && ev.im.abs() <= 1e-12 * ev.norm().max(1e-300) {
            return Err(Error::NoRealLogarithm { value: ev.re });
        }
    }

    if is_symmetric(m) {
        return symmetric_log(m);
    }
    iss_log(m)
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.norm().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-13 * scale {
                return false;
            }
        }
    }
    true
}

/// Log of a symmetric matrix through its (real) eigendecomposition.
fn symmetric_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let mut log_vals = eig.eigenvalues.clone();
    for v in log_vals.iter_mut() {
        if *v <= 0.0 {
            return Err(Error::NoRealLogarithm { value: *v });
        }
        *v = v.ln();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&log_vals) * q.transpose())
}

/// Inverse scaling-and-squaring: sqrt until near identity, series, scale back.
fn iss_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut a = m.clone();
    let mut scale = 0u32;
    while (&a - &eye).norm() > 0.25 {
        if scale >= 64 {
            return Err(Error::NonConvergence {
                what: "matrix square-root scaling",
                iterations: scale as usize,
                residual: (&a - &eye).norm(),
            });
        }
        a = denman_beavers_sqrt(&a)?;
        scale += 1;
    }
    // Gregory series: log(A) = 2 * sum_{k odd} Z^k / k,  Z = (A - I)(A + I)^-1.
    let z = (&a - &eye)
        * (&a + &eye)
            .try_inverse()
            .ok_or(Error::SingularMatrix { det: 0.0 })?;
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut acc = z.clone();
    for k in (3..=41).step_by(2) {
        term = &term * &z2;
        let contrib = &term / k as f64;
        acc += &contrib;
        if contrib.norm() < 1e-18 * acc.norm().max(1e-300) {
            break;
        }
    }
    Ok(acc * 2f64.powi(scale as i32 + 1))
}

/// One Denman-Beavers square root (coupled Newton iteration).
fn denman_beavers_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut x = m.clone();
    let mut y = DMatrix::<f64>::identity(n, n);
    let mut prev_step = f64::INFINITY;
    for _ in 0..100 {
        let x_inv = x
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { det: 0.0 })?;
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { det: 0.0 })?;
        let x_next = (&x + &y_inv) * 0.5;
        let y_next = (&y + &x_inv) * 0.5;
        let step = (&x_next - &x).norm();
        x = x_next;
        y = y_next;
        let scale = x.norm().max(1e-300);
        // Quadratic convergence ends in rounding-level dither; accept
        // either a sub-ulp step or stagnation once already converged.
        if step <= 1e-15 * scale || (step >= prev_step && step <= 1e-10 * scale) {
            return Ok(x);
        }
        prev_step = step;
    }
    let residual = (&x * &x - m).norm();
    Err(Error::NonConvergence {
        what: "Denman-Beavers square root",
        iterations: 100,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use std::f64::consts::PI;

    /// Plain 30-term Taylor series, the independent oracle for exp.
    fn exp_series_oracle(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut result = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=30 {
            term = (&term * m) / k as f64;
            result += &term;
        }
        result
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(matrix_exp(&z), DMatrix::identity(3, 3));
    }

    #[test]
    fn exp_of_log_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::dvector![2f64.ln(), 3f64.ln()]);
        let e = matrix_exp(&m);
        assert_abs_diff_eq!(e[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[(1, 1)], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn exp_quarter_turn_matches_series_oracle() {
        let g = dmatrix![0.0, -PI / 2.0; PI / 2.0, 0.0];
        let e = matrix_exp(&g);
        let oracle = exp_series_oracle(&g);
        assert_abs_diff_eq!(&e, &oracle, epsilon = 1e-13);
        // ... and is the quarter-turn rotation.
        let rot = dmatrix![0.0, -1.0; 1.0, 0.0];
        assert_abs_diff_eq!(&e, &rot, epsilon = 1e-14);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_eq!(real_log(&i).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn log_of_scalar_e() {
        let m = DMatrix::from_diagonal_element(2, 2, std::f64::consts::E);
        let l = real_log(&m).unwrap();
        assert_abs_diff_eq!(&l, &DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn log_of_rotation_is_skew_generator() {
        let th = PI / 6.0;
        let r = dmatrix![th.cos(), -th.sin(); th.sin(), th.cos()];
        let l = real_log(&r).unwrap();
        assert_abs_diff_eq!(l[(0, 1)], -th, epsilon = 1e-12);
        assert_abs_diff_eq!(l[(1, 0)], th, epsilon = 1e-12);
        assert_abs_diff_eq!(l[(0, 0)], 0.0, epsilon = 1e-12);
        // Round-trip through the series oracle reproduces the rotation.
        assert_abs_diff_eq!(&exp_series_oracle(&l), &r, epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_negative_determinant() {
        let m = dmatrix![-1.0, 0.0; 0.0, 1.0];
        assert!(matches!(
            real_log(&m),
            Err(Error::NegativeDeterminant { .. })
        ));
    }

    #[test]
    fn log_rejects_negative_real_eigenvalues() {
        // det > 0 but spectrum {-1, -1}: no principal real logarithm.
        let m = dmatrix![-1.0, 0.0; 0.0, -1.0];
        assert!(matches!(real_log(&m), Err(Error::NoRealLogarithm { .. })));
    }

    #[test]
    fn log_of_shear_roundtrips() {
        let m = dmatrix![1.0, 0.3; 0.0, 1.0];
        let l = real_log(&m).unwrap();
        assert_abs_diff_eq!(&matrix_exp(&l), &m, epsilon = 1e-12);
        // Upper-triangular with unit diagonal: log is nilpotent, exactly the shear offset.
        assert_abs_diff_eq!(l[(0, 1)], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn exp_log_roundtrip_general_3d() {
        let m = dmatrix![
            1.1, 0.2, -0.1;
            0.05, 0.9, 0.15;
            -0.02, 0.1, 1.2
        ];
        let l = real_log(&m).unwrap();
        let back = matrix_exp(&l);
        assert!((&back - &m).norm() / m.norm() < 1e-9);
    }
}
