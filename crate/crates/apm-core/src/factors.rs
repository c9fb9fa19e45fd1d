//! Cohort-specific factor-space estimation.
//!
//! Each cohort's observed-outcome second-moment matrix carries the cohort's
//! factor directions in its leading eigenspace. Two spectral routes are
//! implemented:
//!
//! - [`pc_factors`]: top-`r` eigenvectors of the second-moment matrix, valid
//!   when residual noise is homoskedastic across outcomes;
//! - [`hetero_split_factors`]: holdout-block singular vectors stitched
//!   together through a per-cohort aggregated projection matrix, valid under
//!   outcome-wise heteroskedastic noise whenever at least `2r + 1` outcomes
//!   are observed.
//!
//! Eigendecompositions run on the dense `|T_c| x |T_c|` sub-block and are
//! embedded back, so structural zeros never mix into the estimated spectrum.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{fix_column_signs, projector, sym_eigen_ascending, symmetrize};
use crate::panel::{CohortIndex, Panel};
use crate::scalar::{count, real, Scalar};

/// Weighted cohort second-moment matrix, supported on `T_c x T_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSecondMoment<T: Scalar> {
    /// `T x T` symmetric matrix, zero outside the cohort's observed block.
    pub matrix: DMatrix<T>,
    /// Cohort this matrix belongs to.
    pub cohort: usize,
    /// Sum of member weights times `N`; the cohort size when unweighted.
    pub effective_n: T,
}

/// Which spectral route produced a factor estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMethod {
    /// Top-`r` eigenvectors of the second-moment matrix.
    Pc,
    /// Holdout-block split-spectral estimator.
    HeteroskedasticSplit,
}

/// Estimated cohort factor basis plus the full spectrum for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortFactorEstimate<T: Scalar> {
    /// `T x r` matrix with orthonormal columns supported on `T_c` rows.
    pub basis: DMatrix<T>,
    /// Ascending eigenvalues of the second-moment matrix (length `T`,
    /// including the structural zeros outside `T_c`).
    pub spectrum: Vec<T>,
    /// Estimation route.
    pub method: FactorMethod,
    /// Cohort this estimate belongs to.
    pub cohort: usize,
}

impl<T: Scalar> CohortFactorEstimate<T> {
    /// Projection matrix onto the estimated factor space.
    pub fn projection(&self) -> DMatrix<T> {
        let mut p = &self.basis * self.basis.transpose();
        symmetrize(&mut p);
        p
    }

    /// Consecutive eigenvalue ratios, largest over second-largest first.
    ///
    /// Useful for judging the plausibility of a rank choice: a large first
    /// ratio and small subsequent ratios point at `r = 1`.
    pub fn consecutive_eigenvalue_ratios(&self) -> Vec<T> {
        let mut desc: Vec<T> = self.spectrum.clone();
        desc.reverse();
        desc.windows(2)
            .filter(|w| w[1] > T::zero())
            .map(|w| w[0] / w[1])
            .collect()
    }
}

/// Validate a bootstrap weight vector: length `N`, nonnegative, sums to one.
pub(crate) fn validate_weights<T: Scalar>(weights: &[T], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::BadWeights(format!(
            "expected {} weights, got {}",
            n,
            weights.len()
        )));
    }
    let mut sum = T::zero();
    for &w in weights {
        if !w.is_finite() || w < T::zero() {
            return Err(Error::BadWeights("weights must be finite and nonnegative".into()));
        }
        sum += w;
    }
    if (sum - T::one()).abs() > real::<T>(1e-12) {
        return Err(Error::BadWeights(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Weighted second-moment matrix of a cohort's observed outcomes.
///
/// Member weights are renormalized within the cohort, so weight mass on
/// other cohorts does not change the result; `None` weights take the uniform
/// `1/N` path through the identical arithmetic, making the unweighted and
/// uniform-weight results bit-for-bit equal.
pub fn second_moment<T: Scalar>(
    panel: &Panel<T>,
    index: &CohortIndex,
    cohort: usize,
    weights: Option<&[T]>,
) -> Result<CohortSecondMoment<T>> {
    let c = &index.cohorts()[cohort];
    if c.members.is_empty() {
        return Err(Error::EmptyCohort { cohort });
    }
    if let Some(w) = weights {
        validate_weights(w, panel.n_units())?;
    }
    let n = panel.n_units();
    let uniform = T::one() / count::<T>(n);
    let weight_of = |row: usize| -> T {
        match weights {
            Some(w) => w[row],
            None => uniform,
        }
    };
    let mut total = T::zero();
    for &row in &c.members {
        total += weight_of(row);
    }
    if total <= T::zero() {
        return Err(Error::ZeroCohortWeight { cohort });
    }

    let t = panel.n_outcomes();
    let t_set = &c.t_set;
    let k = t_set.len();
    let mut block = DMatrix::<T>::zeros(k, k);
    let mut y = vec![T::zero(); k];
    for &row in &c.members {
        let w = weight_of(row) / total;
        if w == T::zero() {
            continue;
        }
        for (a, &ta) in t_set.iter().enumerate() {
            y[a] = panel.value(row, ta).expect("cohort member observes T_c");
        }
        for a in 0..k {
            let wya = w * y[a];
            for b in a..k {
                block[(a, b)] += wya * y[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            block[(a, b)] = block[(b, a)];
        }
    }
    let mut matrix = DMatrix::zeros(t, t);
    for (a, &ta) in t_set.iter().enumerate() {
        for (b, &tb) in t_set.iter().enumerate() {
            matrix[(ta, tb)] = block[(a, b)];
        }
    }
    Ok(CohortSecondMoment { matrix, cohort, effective_n: total * count::<T>(n) })
}

/// Extract the `T_c x T_c` sub-block of a supported matrix.
fn restrict<T: Scalar>(m: &DMatrix<T>, t_set: &[usize]) -> DMatrix<T> {
    let k = t_set.len();
    let mut out = DMatrix::zeros(k, k);
    for (a, &ta) in t_set.iter().enumerate() {
        for (b, &tb) in t_set.iter().enumerate() {
            out[(a, b)] = m[(ta, tb)];
        }
    }
    out
}

/// Embed a `|T_c| x r` block matrix into `T x r` on the `T_c` rows.
fn embed_rows<T: Scalar>(block: &DMatrix<T>, t_set: &[usize], t: usize) -> DMatrix<T> {
    let mut out = DMatrix::zeros(t, block.ncols());
    for (a, &ta) in t_set.iter().enumerate() {
        out.set_row(ta, &block.row(a));
    }
    out
}

/// Full ascending spectrum of the supported matrix: structural zeros outside
/// `T_c` followed by the block eigenvalues, re-sorted ascending.
fn full_spectrum<T: Scalar>(block_eigs: &[T], t_set_len: usize, t: usize) -> Vec<T> {
    let mut spectrum = vec![T::zero(); t - t_set_len];
    spectrum.extend_from_slice(block_eigs);
    spectrum.sort_by(|a, b| a.partial_cmp(b).expect("NaN eigenvalue"));
    spectrum
}

/// Principal-components factor estimate: eigenvectors of the second-moment
/// matrix's `r` largest eigenvalues, computed on the observed sub-block.
pub fn pc_factors<T: Scalar>(
    m: &CohortSecondMoment<T>,
    t_set: &[usize],
    r: usize,
) -> Result<CohortFactorEstimate<T>> {
    let k = t_set.len();
    if r > k {
        return Err(Error::RankExceedsObserved { cohort: m.cohort, r, observed: k });
    }
    let t = m.matrix.nrows();
    let block = restrict(&m.matrix, t_set);
    let (values, vectors) = sym_eigen_ascending(&block);
    let top = vectors.columns(k - r, r).into_owned();
    let mut basis = embed_rows(&top, t_set, t);
    fix_column_signs(&mut basis);
    Ok(CohortFactorEstimate {
        basis,
        spectrum: full_spectrum(values.as_slice(), k, t),
        method: FactorMethod::Pc,
        cohort: m.cohort,
    })
}

/// Positions (0-based, within sorted `T_c`) of the `j`-th holdout window.
///
/// Windows are the `r + 1` consecutive length-`r` windows starting at
/// positions `0..=r`; each step swaps exactly one outcome, consecutive
/// complements overlap in at least `r` outcomes, and together the
/// complements cover all of `T_c`. One window alone leaves its intersection
/// with the others unconstrained, which is why the sweep is one window
/// longer than the rank.
fn holdout_window(j: usize, r: usize) -> std::ops::Range<usize> {
    j..j + r
}

/// Split-spectral factor estimate for outcome-wise heteroskedastic noise.
///
/// For each holdout window, the off-diagonal block between the window and
/// its complement is free of residual variance, so its top-`r` left singular
/// vectors span the factor directions on the complement. A per-cohort
/// aggregated projection matrix stitches the complements together; its
/// null space restricted to `T_c` is the cohort factor space.
pub fn hetero_split_factors<T: Scalar>(
    m: &CohortSecondMoment<T>,
    t_set: &[usize],
    r: usize,
) -> Result<CohortFactorEstimate<T>> {
    let k = t_set.len();
    if k < 2 * r + 1 {
        return Err(Error::TooFewOutcomes { cohort: m.cohort, observed: k, needed: 2 * r + 1 });
    }
    let t = m.matrix.nrows();
    let block = restrict(&m.matrix, t_set);

    let mut mini_apm = DMatrix::<T>::zeros(k, k);
    for j in 0..=r {
        let window = holdout_window(j, r);
        let complement: Vec<usize> = (0..k).filter(|p| !window.contains(p)).collect();
        let mut off = DMatrix::<T>::zeros(complement.len(), r);
        for (a, &pa) in complement.iter().enumerate() {
            for (b, pb) in window.clone().enumerate() {
                off[(a, b)] = block[(pa, pb)];
            }
        }
        let svd = off.svd(true, false);
        let u = svd.u.as_ref().expect("SVD requested u");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .expect("NaN singular value")
        });
        let mut left = DMatrix::<T>::zeros(k, r);
        for (dst, &src) in order.iter().take(r).enumerate() {
            for (a, &pa) in complement.iter().enumerate() {
                left[(pa, dst)] = u[(a, src)];
            }
        }
        for &pa in &complement {
            mini_apm[(pa, pa)] += T::one();
        }
        mini_apm -= projector(&left);
    }
    symmetrize(&mut mini_apm);

    let (_, vectors) = sym_eigen_ascending(&mini_apm);
    let bottom = vectors.columns(0, r).into_owned();
    let mut basis = embed_rows(&bottom, t_set, t);
    fix_column_signs(&mut basis);

    let (values, _) = sym_eigen_ascending(&block);
    Ok(CohortFactorEstimate {
        basis,
        spectrum: full_spectrum(values.as_slice(), k, t),
        method: FactorMethod::HeteroskedasticSplit,
        cohort: m.cohort,
    })
}
