//! Dense linear-algebra helpers for small symmetric problems.
//!
//! Everything here operates on `T x T` matrices with `T` fixed and small, so
//! plain dense eigendecompositions and SVDs are the right tool. Eigenvalues
//! are always reported in ascending order and eigenvector signs are fixed
//! deterministically (largest-magnitude entry positive).

use nalgebra::{DMatrix, DVector};

use crate::scalar::{real, Scalar};

/// Relative singular-value cutoff used for pseudo-inverses and rank decisions.
pub const PINV_RTOL: f64 = 1e-12;

/// Symmetric eigendecomposition with ascending eigenvalues and sign-fixed,
/// orthonormal eigenvector columns.
pub fn sym_eigen_ascending<T: Scalar>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let d = m.nrows();
    assert_eq!(d, m.ncols(), "symmetric eigendecomposition needs a square matrix");
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("NaN eigenvalue")
    });
    let mut values = DVector::zeros(d);
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    (values, vectors)
}

/// Flip column signs so the largest-magnitude entry of each column is positive.
pub fn fix_column_signs<T: Scalar>(m: &mut DMatrix<T>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = T::zero();
        for (i, v) in col.iter().enumerate() {
            let a = v.abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if col[best] < T::zero() {
            col.neg_mut();
        }
    }
}

/// Projection matrix onto the column space of `m`, via SVD with a relative
/// rank cutoff. Rank-deficient and zero inputs are fine.
pub fn projector<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let d = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(d, d);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("SVD requested u");
    let smax = svd.singular_values.iter().fold(T::zero(), |acc, &s| acc.max(s));
    let tol = smax * real::<T>(PINV_RTOL);
    let mut p = DMatrix::zeros(d, d);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let uj = u.column(j);
            for a in 0..d {
                for b in 0..d {
                    p[(a, b)] += uj[a] * uj[b];
                }
            }
        }
    }
    symmetrize(&mut p);
    p
}

/// Moore-Penrose pseudo-inverse with the crate-wide relative cutoff.
pub fn pinv<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("SVD requested u");
    let vt = svd.v_t.as_ref().expect("SVD requested v_t");
    let smax = svd.singular_values.iter().fold(T::zero(), |acc, &s| acc.max(s));
    let tol = smax * real::<T>(PINV_RTOL);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let inv = T::one() / s;
            let vj = vt.row(j);
            let uj = u.column(j);
            for a in 0..m.ncols() {
                for b in 0..m.nrows() {
                    out[(a, b)] += vj[a] * inv * uj[b];
                }
            }
        }
    }
    out
}

/// Numerical rank via singular values above `rtol * sigma_max`.
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>, rtol: T) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().fold(T::zero(), |acc, &s| acc.max(s));
    if smax == T::zero() {
        return 0;
    }
    let tol = smax * rtol;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Operator norm of a symmetric matrix: the largest eigenvalue magnitude.
pub fn sym_op_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    let (values, _) = sym_eigen_ascending(m);
    values.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
}

/// Average a matrix with its transpose in place.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = real::<T>(0.5);
    let d = m.nrows();
    for a in 0..d {
        for b in (a + 1)..d {
            let v = (m[(a, b)] + m[(b, a)]) * half;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Diagonal 0/1 mask matrix with ones at the given indices.
pub fn mask_matrix<T: Scalar>(t: usize, indices: &[usize]) -> DMatrix<T> {
    let mut e = DMatrix::zeros(t, t);
    for &i in indices {
        e[(i, i)] = T::one();
    }
    e
}

/// Frobenius norm of the difference of two matrices.
pub fn frobenius_distance<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    (a - b).norm()
}
