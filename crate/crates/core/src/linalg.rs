//! Small dense symmetric eigen helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
///
/// Ties keep the solver's order, so the result is deterministic.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Whether a ridge `eps·trace/n·I` is needed before factorising `b`.
///
/// Returns the ridge to add (0 when `b` is comfortably positive definite).
pub fn ridge_if_needed(b: &DMatrix<f64>, eps: f64) -> f64 {
    let n = b.nrows() as f64;
    let ridge = eps * b.trace() / n;
    let (values, _) = sym_eigen_desc(b);
    let min = values.last().copied().unwrap_or(0.0);
    if min > ridge {
        0.0
    } else {
        ridge
    }
}

/// Solves `a·w = μ·b·w` for symmetric `a` and symmetric positive definite `b`.
///
/// Eigenvalues are returned in descending order with eigenvectors as columns,
/// each scaled so that `wᵀ·b·w = 1`.
pub fn generalized_sym_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = symmetrize(b)
        .cholesky()
        .ok_or_else(|| Error::numerical("composite covariance is not positive definite"))?;
    let l = chol.l();
    // M = L⁻¹ A L⁻ᵀ
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    let m = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    let (values, u) = sym_eigen_desc(&m);
    // w = L⁻ᵀ u
    let w = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    Ok((values, w))
}

/// Flips `v` so that its largest-magnitude coefficient is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        // Strictly larger keeps the first index on exact ties.
        if v[i].abs() > v[best].abs() + 1e-12 * v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn generalized_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]);
        let (vals, w) = generalized_sym_eigen(&a, &b).unwrap();
        assert_relative_eq!(vals[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(vals[1], 1.0 / 3.0, epsilon = 1e-14);
        let wbw = w.transpose() * &b * &w;
        assert_relative_eq!(wbw, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn not_positive_definite() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(generalized_sym_eigen(&a, &b).is_err());
    }

    #[test]
    fn sign_convention() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.3]);
        canonical_sign(&mut v);
        assert_eq!(v[1], 0.9);
    }
}
