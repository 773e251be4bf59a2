//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra` dynamic matrices. The factor dimension is
//! tiny (a handful of states), so `r x r` routines favour clarity over speed.

use nalgebra::{DMatrix, DVector};

use crate::error::{DfmError, Result};

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order; eigenvectors are the matching columns.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Symmetric square root of a positive semidefinite matrix. Negative
/// eigenvalues produced by rounding are clamped to zero.
pub fn sym_sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let roots = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0).sqrt()));
    &vecs * DMatrix::from_diagonal(&roots) * vecs.transpose()
}

/// Largest eigenvalue modulus of a square (not necessarily symmetric) matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Numerical rank from singular values relative to the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Solves `X = A X A' + Q` through the vectorised system
/// `(I - A (x) A) vec(X) = vec(Q)`. Intended for the small factor dimension.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = a.nrows();
    if a.ncols() != r || q.nrows() != r || q.ncols() != r {
        return Err(DfmError::Shape(format!(
            "lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let kron = a.kronecker(a);
    let system = DMatrix::<f64>::identity(r * r, r * r) - kron;
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| DfmError::Singular("I - A(x)A in Lyapunov equation".into()))?;
    let x = DMatrix::from_column_slice(r, r, sol.as_slice());
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DfmError::Singular("I - A(x)A in Lyapunov equation".into()));
    }
    Ok(symmetrize(&x))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    symmetrize(m).cholesky().map(|c| c.inverse())
}

/// Inverse of a symmetric matrix that must be well conditioned: the smallest
/// eigenvalue has to exceed `rel_tol` times the largest in absolute value.
pub fn checked_sym_inverse(m: &DMatrix<f64>, rel_tol: f64, what: &str) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_desc(m);
    let n = vals.len();
    if n == 0 {
        return Err(DfmError::Singular(format!("{what} is empty")));
    }
    let top = vals[0].abs().max(vals[n - 1].abs());
    if !(top.is_finite()) || top == 0.0 || vals[n - 1] <= rel_tol * top {
        return Err(DfmError::Singular(what.to_string()));
    }
    let inv = DVector::from_iterator(n, vals.iter().map(|v| 1.0 / v));
    Ok(&vecs * DMatrix::from_diagonal(&inv) * vecs.transpose())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Flips column signs so that the first entry with magnitude above `tol` is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>, tol: f64) {
    for j in 0..m.ncols() {
        let lead = m.column(j).iter().cloned().find(|v| v.abs() > tol);
        if let Some(v) = lead {
            if v < 0.0 {
                m.column_mut(j).neg_mut();
            }
        }
    }
}

/// `ln det` of a square matrix with positive determinant, via LU.
pub fn ln_det_positive(m: &DMatrix<f64>) -> Option<f64> {
    let det = m.clone().lu().determinant();
    (det.is_finite() && det > 0.0).then(|| det.ln())
}

/// Maximum absolute entrywise difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Orthogonal matrix from the QR factorisation of `m`, with columns flipped so
/// that the diagonal of `R` is non-negative (makes the factor unique).
pub fn orthogonal_from_qr(m: DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar_matches_closed_form() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = solve_discrete_lyapunov(&a, &q).unwrap();
        assert!((x[(0, 0)] - 1.0 / 0.75).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_solution_is_fixed_point() {
        let a = DMatrix::from_row_slice(2, 2, &[0.4, 0.2, -0.1, 0.3]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let x = solve_discrete_lyapunov(&a, &q).unwrap();
        let resid = &x - (&a * &x * a.transpose() + &q);
        assert!(resid.amax() < 1e-12);
    }

    #[test]
    fn eigen_desc_is_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let back = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!(max_abs_diff(&back, &m) < 1e-12);
    }

    #[test]
    fn sqrt_of_diag() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = sym_sqrt_psd(&m);
        assert!((s[(0, 0)] - 2.0).abs() < 1e-14 && (s[(1, 1)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qr_orthogonal_is_orthogonal() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.7, 0.1, -0.4]);
        let q = orthogonal_from_qr(m);
        let id = q.transpose() * &q;
        assert!(max_abs_diff(&id, &DMatrix::identity(3, 3)) < 1e-12);
    }
}
