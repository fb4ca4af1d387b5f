//! Small least-squares helpers shared by the fitting routines.

use nalgebra::{Cholesky, DMatrix, DVector};

pub(crate) struct Lstsq {
    pub solution: DVector<f64>,
    pub rank: usize,
}

/// Least-squares solve of `a x = y` through a singular value decomposition.
/// Reports the numerical rank; when the design is rank deficient the
/// returned solution is the minimum-norm minimizer.
pub(crate) fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> Lstsq {
    let ncols = a.ncols();
    let svd = a.clone().svd(true, true);
    let sv_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sv_max == 0.0 {
        return Lstsq {
            solution: DVector::zeros(ncols),
            rank: 0,
        };
    }
    let tol = sv_max * f64::EPSILON * a.nrows().max(ncols) as f64;
    let rank = svd.rank(tol);
    let solution = svd
        .solve(y, tol)
        .expect("SVD requested with both factor sets");
    Lstsq { solution, rank }
}

/// Solves the weighted normal equations A' W A x = A' W y by Cholesky.
/// Returns `None` when the weighted Gram matrix is not positive definite.
pub(crate) fn weighted_normal_solve(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
) -> Option<DVector<f64>> {
    let (nrows, ncols) = a.shape();
    debug_assert_eq!(weights.len(), nrows);
    let mut gram = DMatrix::<f64>::zeros(ncols, ncols);
    let mut rhs = DVector::<f64>::zeros(ncols);
    for r in 0..nrows {
        let w = weights[r];
        for i in 0..ncols {
            let wai = w * a[(r, i)];
            rhs[i] += wai * y[r];
            for j in i..ncols {
                gram[(i, j)] += wai * a[(r, j)];
            }
        }
    }
    for i in 0..ncols {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    Cholesky::new(gram).map(|ch| ch.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matches_normal_equations_on_full_rank_systems() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 3.0, 1.5, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let fit = lstsq(&a, &y);
        assert_eq!(fit.rank, 2);

        let gram = a.transpose() * &a;
        let rhs = a.transpose() * &y;
        let exact = gram.cholesky().unwrap().solve(&rhs);
        for i in 0..2 {
            assert_abs_diff_eq!(fit.solution[i], exact[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn detects_rank_deficiency() {
        // Second column is twice the first.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let fit = lstsq(&a, &y);
        assert_eq!(fit.rank, 1);
        // Minimum-norm solution still reproduces y exactly here.
        let r = &a * &fit.solution - &y;
        assert!(r.norm() < 1e-10);
    }

    #[test]
    fn zero_design_has_rank_zero() {
        let a = DMatrix::<f64>::zeros(3, 2);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let fit = lstsq(&a, &y);
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.solution, DVector::from_vec(vec![0.0, 0.0]));
    }

    #[test]
    fn weighted_solve_agrees_with_scaled_least_squares() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 3.0, 1.5, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let w = [0.5, 2.0, 1.0, 0.25];
        let x = weighted_normal_solve(&a, &y, &w).unwrap();

        let mut scaled_a = a.clone();
        let mut scaled_y = y.clone();
        for r in 0..4 {
            let s = w[r].sqrt();
            for c in 0..2 {
                scaled_a[(r, c)] *= s;
            }
            scaled_y[r] *= s;
        }
        let reference = lstsq(&scaled_a, &scaled_y).solution;
        for i in 0..2 {
            assert_abs_diff_eq!(x[i], reference[i], epsilon = 1e-10);
        }
    }
}
