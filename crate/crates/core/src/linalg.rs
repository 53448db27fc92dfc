//! Norms and small symmetric-matrix helpers.
//!
//! Vector norms are infinity norms and matrix norms are the induced
//! max-row-sum norm, which is the convention every envelope constant is
//! stated in.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `max_i |x_i|`; zero for an empty vector.
pub fn norm_inf(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Induced infinity norm `max_i sum_j |a_ij|` (also defined for non-square matrices).
pub fn mat_norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}

/// `(M + M^T) / 2`. The result is exactly symmetric entrywise.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = m[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eig_range(m).1
}

/// Eigenvalue clip: returns the closest (Frobenius) symmetric matrix with
/// spectrum bounded below by `floor`.
pub fn clip_spectrum_below(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose()))
}

/// Rows of `m` picked by `rows`, in the given order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms_follow_max_row_sum_convention() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, -4.0, 0.0, 0.0]);
        assert_eq!(mat_norm_inf(&a), 4.0);
        let x = DVector::from_vec(vec![0.5, -3.0, 2.0]);
        assert_eq!(norm_inf(&x), 3.0);
        assert_eq!(norm_inf(&DVector::zeros(0)), 0.0);
    }

    #[test]
    fn clip_raises_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let c = clip_spectrum_below(&m, 0.25);
        let (lo, hi) = sym_eig_range(&c);
        assert!((lo - 0.25).abs() < 1e-14);
        assert!((hi - 1.0).abs() < 1e-14);
        assert!(is_symmetric(&c));
    }
}
