//! Barycentric (Karcher) mean of linear header parts.
//!
//! The mean of a set of matrices is computed iteratively: project every
//! matrix into the tangent space at the current barycentre with the real
//! matrix logarithm, average there, and map the average back through the
//! matrix exponential. Convergence is declared when the mean tangent
//! vanishes, i.e. the barycentre stops moving.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

use super::matlog::{matrix_exp, real_log};

const TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 64;

/// Iterative barycentre of positive-determinant matrices.
///
/// Returns `B` such that the mean of `real_log(B^-1 * M_i)` has Frobenius
/// norm at most 1e-10, in at most 64 update steps. Reflections must be
/// factored out of the inputs beforehand (see [`super::extract_flips`]);
/// a negative-determinant input is an error, as is non-convergence.
///
/// The result is bitwise reproducible and bitwise invariant under
/// permutation of the input list: inputs are brought into a canonical
/// order internally, and the tangent average always sums left to right
/// over that order.
pub fn karcher_mean(linears: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    karcher_mean_detailed(linears).map(|(mean, _)| mean)
}

/// [`karcher_mean`] plus the number of update steps taken.
pub fn karcher_mean_detailed(linears: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, usize)> {
    let first = linears.first().ok_or(Error::EmptyInput("karcher_mean"))?;
    let d = first.nrows();
    for m in linears {
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "karcher_mean inputs must all be {d}x{d} matrices"
            )));
        }
        let det = m.clone().determinant();
        if det.abs() <= super::SINGULARITY_THRESHOLD {
            return Err(Error::SingularMatrix { det });
        }
        if det < 0.0 {
            return Err(Error::NegativeDeterminant { det });
        }
    }

    // Canonical input order (entry-lexicographic), so permuting the list
    // cannot change the initial barycentre or any summation order.
    let mut order: Vec<usize> = (0..linears.len()).collect();
    order.sort_by(|&a, &b| {
        linears[a]
            .iter()
            .zip(linears[b].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|c| c.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut barycentre = linears[order[0]].clone();
    let inv_n = 1.0 / linears.len() as f64;
    for iteration in 0..=MAX_ITERATIONS {
        let inv_b = barycentre
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix { det: 0.0 })?;
        let mut mean_tangent = DMatrix::<f64>::zeros(d, d);
        for &idx in &order {
            mean_tangent += real_log(&(&inv_b * &linears[idx]))?;
        }
        mean_tangent *= inv_n;
        if mean_tangent.norm() <= TOLERANCE {
            return Ok((barycentre, iteration));
        }
        if iteration == MAX_ITERATIONS {
            return Err(Error::NonConvergence {
                what: "Karcher mean",
                iterations: MAX_ITERATIONS,
                residual: mean_tangent.norm(),
            });
        }
        barycentre = &barycentre * matrix_exp(&mean_tangent);
    }
    unreachable!("loop always returns or errors at the iteration cap");
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn rot2(theta: f64) -> DMatrix<f64> {
        dmatrix![theta.cos(), -theta.sin(); theta.sin(), theta.cos()]
    }

    #[test]
    fn singleton_returns_the_matrix_bitwise() {
        let m = dmatrix![1.3, 0.2; -0.1, 0.8];
        assert_eq!(karcher_mean(std::slice::from_ref(&m)).unwrap(), m);
    }

    #[test]
    fn repeated_matrix_is_a_fixed_point() {
        let m = dmatrix![1.3, 0.2; -0.1, 0.8];
        for n in [2, 5, 9] {
            let list = vec![m.clone(); n];
            let mean = karcher_mean(&list).unwrap();
            assert!((&mean - &m).norm() <= 1e-10);
        }
    }

    #[test]
    fn reciprocal_scalings_average_to_identity() {
        let mean = karcher_mean(&[
            DMatrix::from_diagonal_element(2, 2, 2.0),
            DMatrix::from_diagonal_element(2, 2, 0.5),
        ])
        .unwrap();
        assert_abs_diff_eq!(&mean, &DMatrix::identity(2, 2), epsilon = 1e-10);
    }

    #[test]
    fn opposite_rotations_average_to_identity() {
        let th = 30f64.to_radians();
        let pair = [rot2(th), rot2(-th)];

        // One manual step from the first matrix: the tangents are exact
        // negatives shifted by the base point, so a single update lands on I.
        let b0 = pair[0].clone();
        let inv_b0 = b0.clone().try_inverse().unwrap();
        let t = (crate::geometry::real_log(&(&inv_b0 * &pair[0])).unwrap()
            + crate::geometry::real_log(&(&inv_b0 * &pair[1])).unwrap())
            / 2.0;
        let one_step = &b0 * crate::geometry::matrix_exp(&t);
        assert_abs_diff_eq!(&one_step, &DMatrix::identity(2, 2), epsilon = 1e-12);

        let mean = karcher_mean(&pair).unwrap();
        assert_abs_diff_eq!(&mean, &DMatrix::identity(2, 2), epsilon = 1e-10);
    }

    #[test]
    fn permuting_inputs_is_bitwise_invariant() {
        let mats = vec![
            dmatrix![1.2, 0.1; 0.0, 0.9],
            dmatrix![0.8, -0.05; 0.02, 1.1],
            dmatrix![1.0, 0.3; -0.1, 1.05],
            dmatrix![0.95, 0.0; 0.0, 1.3],
        ];
        let base = karcher_mean(&mats).unwrap();
        let mut shuffled = mats.clone();
        shuffled.swap(0, 3);
        shuffled.swap(1, 2);
        assert_eq!(karcher_mean(&shuffled).unwrap(), base);
        shuffled.rotate_left(1);
        assert_eq!(karcher_mean(&shuffled).unwrap(), base);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            karcher_mean(&[]),
            Err(Error::EmptyInput("karcher_mean"))
        ));
    }

    #[test]
    fn negative_determinant_is_rejected() {
        let m = dmatrix![-1.0, 0.0; 0.0, 1.0];
        assert!(matches!(
            karcher_mean(&[m]),
            Err(Error::NegativeDeterminant { .. })
        ));
    }

    #[test]
    fn convergence_is_fast_on_header_like_cohorts() {
        let mats: Vec<DMatrix<f64>> = (0..8)
            .map(|i| {
                let th = (i as f64 - 3.5) * 0.05;
                let s = 1.0 + 0.1 * (i as f64 % 3.0);
                rot2(th)
                    * DMatrix::from_diagonal(&nalgebra::dvector![s, 2.0 - 0.2 * (i as f64 % 2.0)])
            })
            .collect();
        let (_, iterations) = karcher_mean_detailed(&mats).unwrap();
        assert!(iterations <= 64, "took {iterations} iterations");
    }
}
