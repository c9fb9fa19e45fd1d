//! Aggregated projection matrix and common factor basis extraction.
//!
//! Cohort-specific factor spaces are only known up to cohort-specific bases.
//! Summing the residual matrices `E_c - proj(factor space of c)` across
//! cohorts yields a positive semidefinite matrix whose null space, when the
//! overlap graph is connected, is exactly the common factor column space.
//! The factor basis estimate is therefore the eigenvector block of the `r`
//! smallest eigenvalues.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, fix_column_signs, sym_eigen_ascending, symmetrize};
use crate::scalar::{real, Scalar};

/// Default weak-identification floor, relative to the largest eigenvalue.
pub const DEFAULT_GAP_FLOOR_REL: f64 = 1e-6;

/// Projection matrix onto the column space of `m` (pseudo-inverse based, so
/// rank-deficient and zero inputs are fine).
pub fn projector<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    linalg::projector(m)
}

/// One cohort's contribution to the aggregated projection matrix.
#[derive(Debug, Clone)]
pub struct CohortProjection<T: Scalar> {
    /// Cohort identifier (index into the cohort index).
    pub cohort: usize,
    /// Diagonal 0/1 observation mask `E_c`.
    pub mask: DMatrix<T>,
    /// Projection onto the cohort's estimated factor space.
    pub projection: DMatrix<T>,
}

/// The aggregated projection matrix with its spectral decomposition.
#[derive(Debug, Clone)]
pub struct Apm<T: Scalar> {
    /// The `T x T` symmetric aggregate.
    pub matrix: DMatrix<T>,
    /// Ascending eigenvalues.
    pub spectrum: Vec<T>,
    /// Cohorts that contributed a term.
    pub contributing_cohorts: Vec<usize>,
    eigenvectors: DMatrix<T>,
}

impl<T: Scalar> Apm<T> {
    /// Eigengap estimate for rank `r`: the `(r+1)`-th smallest eigenvalue.
    pub fn eigengap(&self, r: usize) -> T {
        self.spectrum[r]
    }

    /// Largest eigenvalue of the aggregate.
    pub fn lambda_max(&self) -> T {
        *self.spectrum.last().expect("non-empty spectrum")
    }

    /// Scale-free default floor for weak-identification warnings.
    pub fn default_gap_floor(&self) -> T {
        self.lambda_max() * real::<T>(DEFAULT_GAP_FLOOR_REL)
    }

    /// Number of eigenvalues below `tol` (the numerical null-space dimension).
    pub fn null_dimension(&self, tol: T) -> usize {
        self.spectrum.iter().filter(|&&v| v.abs() < tol).count()
    }
}

/// Identification warnings raised while extracting the factor basis.
#[derive(Debug, Clone, PartialEq)]
pub enum ApmWarning {
    /// The eigengap is below the floor: identification is weak, perhaps
    /// because the overlap graph is disconnected or close to it.
    WeakEigengap { eigengap: f64, floor: f64 },
    /// The `r`-th smallest eigenvalue exceeds the floor: the null space looks
    /// smaller than `r`, suggesting the rank is misspecified.
    RankTooLarge { lambda_r: f64, floor: f64 },
}

impl std::fmt::Display for ApmWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApmWarning::WeakEigengap { eigengap, floor } => {
                write!(f, "weak identification: eigengap {eigengap:.3e} below floor {floor:.3e}")
            }
            ApmWarning::RankTooLarge { lambda_r, floor } => {
                write!(
                    f,
                    "rank may be misspecified: lambda_r {lambda_r:.3e} above floor {floor:.3e}"
                )
            }
        }
    }
}

/// Orthonormal basis of the aggregate's near-null space.
#[derive(Debug, Clone)]
pub struct FactorBasis<T: Scalar> {
    /// `T x r` matrix with orthonormal columns.
    pub basis: DMatrix<T>,
    /// Eigengap backing the basis (the `(r+1)`-th smallest eigenvalue).
    pub eigengap: T,
    /// Identification warnings (estimation proceeds regardless).
    pub warnings: Vec<ApmWarning>,
}

impl<T: Scalar> FactorBasis<T> {
    /// Projection onto the estimated common factor space.
    pub fn projection(&self) -> DMatrix<T> {
        let mut p = &self.basis * self.basis.transpose();
        symmetrize(&mut p);
        p
    }

    /// Factor rank.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

/// Sum the per-cohort residual terms `E_c - proj_c` into the aggregate.
pub fn build_apm<T: Scalar>(estimates: &[CohortProjection<T>]) -> Result<Apm<T>> {
    let first = estimates.first().ok_or_else(|| {
        Error::DimensionMismatch("aggregated projection matrix needs at least one cohort".into())
    })?;
    let t = first.mask.nrows();
    let mut matrix = DMatrix::<T>::zeros(t, t);
    let mut contributing = Vec::with_capacity(estimates.len());
    for est in estimates {
        if est.mask.nrows() != t
            || est.mask.ncols() != t
            || est.projection.nrows() != t
            || est.projection.ncols() != t
        {
            return Err(Error::DimensionMismatch(format!(
                "cohort {} matrices are not {t} x {t}",
                est.cohort
            )));
        }
        matrix += &est.mask;
        matrix -= &est.projection;
        contributing.push(est.cohort);
    }
    symmetrize(&mut matrix);
    let (values, vectors) = sym_eigen_ascending(&matrix);
    Ok(Apm {
        matrix,
        spectrum: values.as_slice().to_vec(),
        contributing_cohorts: contributing,
        eigenvectors: vectors,
    })
}

/// Extract the factor basis as the eigenvectors of the `r` smallest
/// eigenvalues, warning on weak identification or an oversized null space.
pub fn null_basis<T: Scalar>(apm: &Apm<T>, r: usize, gap_floor: T) -> Result<FactorBasis<T>> {
    let t = apm.matrix.nrows();
    if r == 0 || r >= t {
        return Err(Error::BadRank { r, t });
    }
    let mut basis = apm.eigenvectors.columns(0, r).into_owned();
    fix_column_signs(&mut basis);
    let eigengap = apm.eigengap(r);
    Ok(FactorBasis {
        basis,
        eigengap,
        warnings: gap_warnings(apm.spectrum[r - 1], eigengap, gap_floor),
    })
}

/// [`null_basis`] with the eigen-problem restricted to a covered outcome set.
///
/// When a disconnected overlap graph restricts estimation to one component,
/// the outcomes unobserved in that component contribute structural zero
/// eigenvalues that must not be mistaken for the factor null space; the
/// decomposition runs on the covered block and the basis is embedded back
/// with zero rows elsewhere.
pub fn null_basis_restricted<T: Scalar>(
    apm: &Apm<T>,
    r: usize,
    gap_floor: T,
    covered: &[usize],
) -> Result<FactorBasis<T>> {
    let t = apm.matrix.nrows();
    let k = covered.len();
    if r == 0 || r >= k {
        return Err(Error::BadRank { r, t: k });
    }
    if k == t {
        return null_basis(apm, r, gap_floor);
    }
    let mut block = DMatrix::<T>::zeros(k, k);
    for (a, &ta) in covered.iter().enumerate() {
        for (b, &tb) in covered.iter().enumerate() {
            block[(a, b)] = apm.matrix[(ta, tb)];
        }
    }
    let (values, vectors) = sym_eigen_ascending(&block);
    let mut basis = DMatrix::<T>::zeros(t, r);
    for j in 0..r {
        for (a, &ta) in covered.iter().enumerate() {
            basis[(ta, j)] = vectors[(a, j)];
        }
    }
    fix_column_signs(&mut basis);
    Ok(FactorBasis {
        basis,
        eigengap: values[r],
        warnings: gap_warnings(values[r - 1], values[r], gap_floor),
    })
}

fn gap_warnings<T: Scalar>(lambda_r: T, eigengap: T, gap_floor: T) -> Vec<ApmWarning> {
    let mut warnings = Vec::new();
    if eigengap < gap_floor {
        warnings.push(ApmWarning::WeakEigengap {
            eigengap: eigengap.to_f64().unwrap_or(f64::NAN),
            floor: gap_floor.to_f64().unwrap_or(f64::NAN),
        });
    }
    if lambda_r > gap_floor {
        warnings.push(ApmWarning::RankTooLarge {
            lambda_r: lambda_r.to_f64().unwrap_or(f64::NAN),
            floor: gap_floor.to_f64().unwrap_or(f64::NAN),
        });
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mask_matrix;
    use nalgebra::DVector;

    #[test]
    fn projector_examples() {
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let p = projector(&e1);
        assert_eq!(p[(0, 0)], 1.0);
        assert!(p.iter().filter(|&&v| v != 0.0).count() == 1);

        assert_eq!(projector(&DMatrix::<f64>::zeros(3, 2)), DMatrix::zeros(3, 3));

        let v = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        let p = projector(&v);
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!((p - expected).norm() < 1e-12);
    }

    fn staircase_apm() -> Apm<f64> {
        // gamma = (1,1,1), cohorts observing {0,1} and {1,2} with exact projectors.
        let gamma = DVector::from_column_slice(&[1.0, 1.0, 1.0]);
        let mut estimates = Vec::new();
        for (c, t_set) in [[0usize, 1], [1, 2]].iter().enumerate() {
            let mask = mask_matrix::<f64>(3, t_set);
            let restricted = &mask * DMatrix::from_column_slice(3, 1, gamma.as_slice());
            estimates.push(CohortProjection {
                cohort: c,
                projection: projector(&restricted),
                mask,
            });
        }
        build_apm(&estimates).unwrap()
    }

    #[test]
    fn staircase_apm_matches_hand_computation() {
        let apm = staircase_apm();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, -0.5, 0.0, -0.5, 1.0, -0.5, 0.0, -0.5, 0.5],
        );
        assert!((apm.matrix.clone() - expected).norm() < 1e-12);
        let expected_spectrum = [0.0, 0.5, 1.5];
        for (a, b) in apm.spectrum.iter().zip(expected_spectrum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn null_basis_recovers_common_direction() {
        let apm = staircase_apm();
        let basis = null_basis(&apm, 1, apm.default_gap_floor()).unwrap();
        assert!(basis.warnings.is_empty());
        assert!((basis.eigengap - 0.5).abs() < 1e-12);
        let target = projector(&DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]));
        assert!((basis.projection() - target).norm() < 1e-12);
    }

    #[test]
    fn full_information_cohort_gives_identity_minus_projection() {
        let gamma = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let mask = DMatrix::<f64>::identity(3, 3);
        let apm = build_apm(&[CohortProjection {
            cohort: 0,
            projection: projector(&gamma),
            mask: mask.clone(),
        }])
        .unwrap();
        let expected = mask - projector(&gamma);
        assert!((apm.matrix.clone() - expected).norm() < 1e-12);
    }

    #[test]
    fn saturated_cohorts_give_zero_aggregate() {
        // |T_c| = r: each term E_c - proj equals zero.
        let mask = mask_matrix::<f64>(3, &[1]);
        let apm = build_apm(&[CohortProjection {
            cohort: 0,
            projection: mask.clone(),
            mask: mask.clone(),
        }])
        .unwrap();
        assert_eq!(apm.matrix, DMatrix::zeros(3, 3));
        let basis = null_basis(&apm, 1, 1e-6).unwrap();
        assert!(basis
            .warnings
            .iter()
            .any(|w| matches!(w, ApmWarning::WeakEigengap { .. })));
    }

    #[test]
    fn diagonal_null_basis() {
        let mut estimates = Vec::new();
        // A = diag(0, 0, 5) realized as E - proj with E = diag(1,1,5)? Not a
        // valid cohort term; build directly through the eigen path instead.
        let matrix = DMatrix::<f64>::from_diagonal(&DVector::from_column_slice(&[0.0, 0.0, 5.0]));
        estimates.push(CohortProjection {
            cohort: 0,
            projection: DMatrix::zeros(3, 3),
            mask: matrix.clone(),
        });
        let apm = build_apm(&estimates).unwrap();
        let basis = null_basis(&apm, 2, 1e-6).unwrap();
        assert!((basis.eigengap - 5.0).abs() < 1e-12);
        let span = basis.projection();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        );
        assert!((span - expected).norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = build_apm(&[CohortProjection {
            cohort: 0,
            projection: DMatrix::<f64>::zeros(2, 2),
            mask: DMatrix::zeros(3, 3),
        }])
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
        assert!(matches!(
            build_apm::<f64>(&[]).unwrap_err(),
            Error::DimensionMismatch(_)
        ));
    }

    #[test]
    fn psd_when_inputs_are_exact_projectors() {
        let apm = staircase_apm();
        assert!(apm.spectrum.iter().all(|&v| v > -1e-10));
    }
}
