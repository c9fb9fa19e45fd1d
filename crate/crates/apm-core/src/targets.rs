//! Target parameters aggregating cohort outcome means.
//!
//! A target is a smooth function `theta = h(mu, eta)` of the cohort mean
//! matrix and nuisance parameters (cohort probabilities, treated-cell
//! means). Built-ins: per-cell selectors, event-study dynamic effect paths,
//! match-outcome attribution shares, and arbitrary linear functionals. The
//! same evaluation runs verbatim inside every bootstrap replicate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::CohortMeans;
use crate::panel::CohortIndex;
use crate::scalar::{real, Scalar};

/// Treated-cell mean table `m_ct` with explicit presence flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatedMeans<T: Scalar> {
    values: DMatrix<T>,
    present: Vec<bool>,
}

impl<T: Scalar> TreatedMeans<T> {
    /// Build from a dense matrix where every cell is defined.
    pub fn full(values: DMatrix<T>) -> Self {
        let present = vec![true; values.nrows() * values.ncols()];
        TreatedMeans { values, present }
    }

    /// Build an empty `C x T` table to be filled cell by cell.
    pub fn empty(n_cohorts: usize, n_outcomes: usize) -> Self {
        TreatedMeans {
            values: DMatrix::zeros(n_cohorts, n_outcomes),
            present: vec![false; n_cohorts * n_outcomes],
        }
    }

    /// Define one cell.
    pub fn set(&mut self, cohort: usize, outcome: usize, value: T) {
        self.values[(cohort, outcome)] = value;
        self.present[cohort * self.values.ncols() + outcome] = true;
    }

    /// Value of a cell, if defined.
    pub fn get(&self, cohort: usize, outcome: usize) -> Option<T> {
        if self.present[cohort * self.values.ncols() + outcome] {
            Some(self.values[(cohort, outcome)])
        } else {
            None
        }
    }
}

/// Dynamic treatment-effect path.
///
/// Coordinate `j` (1-based, `j = 1..=len`) aggregates the treated-minus-
/// counterfactual gap over cells at relative time `j - pre - 1`, weighting
/// cohorts by their probabilities. `periods[c]` is cohort `c`'s first
/// treated period on the outcome index scale, so relative time of cell
/// `(c, t)` is `t - periods[c]`, with zero the first treated period.
///
/// The sum is over raw probability mass, exactly as defined; `normalize`
/// divides each coordinate by the probability mass at its relative time,
/// which is the more common reporting convention.
pub fn dynamic_effects<T: Scalar>(
    means: &CohortMeans<T>,
    treated: &TreatedMeans<T>,
    periods: &[usize],
    pre: usize,
    len: usize,
    normalize: bool,
) -> Result<DVector<T>> {
    assert!(len >= 1, "dynamic effect path must have positive length");
    assert!(pre + 1 <= len, "pre-period count must leave room in the path");
    let c_count = means.n_cohorts();
    let t_count = means.n_outcomes();
    assert_eq!(periods.len(), c_count, "one treatment period per cohort");
    let mut theta = DVector::zeros(len);
    let mut mass = DVector::<T>::zeros(len);
    for j in 1..=len {
        let rel = j as isize - pre as isize - 1;
        for c in 0..c_count {
            for t in 0..t_count {
                if t as isize - periods[c] as isize != rel {
                    continue;
                }
                let m_ct = treated
                    .get(c, t)
                    .ok_or(Error::MissingTreatedMean { cohort: c, outcome: t })?;
                let p = means.cohort_probs[c];
                theta[j - 1] += p * (m_ct - means.mu_hat[(c, t)]);
                mass[j - 1] += p;
            }
        }
    }
    if normalize {
        for j in 0..len {
            if mass[j] > T::zero() {
                theta[j] /= mass[j];
            }
        }
    }
    Ok(theta)
}

/// Attribution shares of the observed mean gap between outcomes `t1`, `t2`.
///
/// Splits the difference in average observed outcomes into a column-effect
/// share (differences in how the outcomes affect everyone) and a row-
/// selection share (differences in who selects into observing each
/// outcome). The two shares always sum to one.
pub fn attribution_shares<T: Scalar>(
    means: &CohortMeans<T>,
    index: &CohortIndex,
    t1: usize,
    t2: usize,
) -> Result<(T, T)> {
    assert_ne!(t1, t2, "attribution shares need two distinct outcomes");
    let unconditional = |t: usize| -> T {
        let mut sum = T::zero();
        for c in 0..means.n_cohorts() {
            sum += means.cohort_probs[c] * means.mu_hat[(c, t)];
        }
        sum
    };
    let conditional = |t: usize| -> Result<T> {
        let mut num = T::zero();
        let mut den = T::zero();
        for (c, cohort) in index.cohorts().iter().enumerate() {
            if cohort.t_set.contains(&t) {
                num += means.cohort_probs[c] * means.mu_hat[(c, t)];
                den += means.cohort_probs[c];
            }
        }
        if den <= T::zero() {
            return Err(Error::DegenerateDenominator { denominator: 0.0 });
        }
        Ok(num / den)
    };

    let e_star_1 = unconditional(t1);
    let e_star_2 = unconditional(t2);
    let e_obs_1 = conditional(t1)?;
    let e_obs_2 = conditional(t2)?;
    let denominator = e_obs_1 - e_obs_2;

    let scale = means.mu_hat.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let tol = real::<T>(1e-10) * scale;
    if denominator.abs() <= tol {
        return Err(Error::DegenerateDenominator {
            denominator: denominator.to_f64().unwrap_or(0.0),
        });
    }
    let col = (e_star_1 - e_star_2) / denominator;
    let row = ((e_obs_1 - e_star_1) - (e_obs_2 - e_star_2)) / denominator;
    Ok((col, row))
}

/// Evaluate a user-supplied plug-in target `h(mu, eta)`.
///
/// `h` must be pure and total; failures surface as target-evaluation errors.
pub fn plug_in<T: Scalar, F>(
    h: F,
    means: &CohortMeans<T>,
    eta: &DVector<T>,
) -> Result<DVector<T>>
where
    F: Fn(&CohortMeans<T>, &DVector<T>) -> std::result::Result<DVector<T>, String>,
{
    h(means, eta).map_err(Error::TargetEvaluation)
}

/// A target parameter evaluated from estimated cohort means.
#[derive(Debug, Clone)]
pub enum TargetSpec<T: Scalar> {
    /// Individual cells `mu_{c,t}`, one coordinate each.
    Cells(Vec<(usize, usize)>),
    /// Dynamic treatment-effect path (see [`dynamic_effects`]).
    DynamicEffects {
        /// Pre-treatment coordinates in the path.
        pre: usize,
        /// Total path length `p`.
        len: usize,
        /// First treated period per cohort, on the outcome index scale.
        periods: Vec<usize>,
        /// Treated-cell means `m_ct`.
        treated: TreatedMeans<T>,
        /// Normalize each coordinate by its relative-time probability mass.
        normalize: bool,
    },
    /// Match-outcome attribution shares `(col, row)` for two outcomes.
    AttributionShares {
        /// First outcome.
        t1: usize,
        /// Second outcome.
        t2: usize,
    },
    /// Arbitrary linear functionals: coordinate `k` is `<weights[k], mu>`.
    LinearFunctional(Vec<DMatrix<T>>),
}

impl<T: Scalar> TargetSpec<T> {
    /// Dimension of the target vector.
    pub fn len(&self) -> usize {
        match self {
            TargetSpec::Cells(cells) => cells.len(),
            TargetSpec::DynamicEffects { len, .. } => *len,
            TargetSpec::AttributionShares { .. } => 2,
            TargetSpec::LinearFunctional(ws) => ws.len(),
        }
    }

    /// True when the target has no coordinates.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Human-readable coordinate labels for output artifacts.
    pub fn labels(&self) -> Vec<String> {
        match self {
            TargetSpec::Cells(cells) => {
                cells.iter().map(|(c, t)| format!("cell_c{c}_t{t}")).collect()
            }
            TargetSpec::DynamicEffects { pre, len, .. } => (1..=*len)
                .map(|j| format!("dyn_rel{}", j as isize - *pre as isize - 1))
                .collect(),
            TargetSpec::AttributionShares { t1, t2 } => vec![
                format!("share_col_t{t1}_t{t2}"),
                format!("share_row_t{t1}_t{t2}"),
            ],
            TargetSpec::LinearFunctional(ws) => {
                (0..ws.len()).map(|k| format!("linear_{k}")).collect()
            }
        }
    }

    /// Evaluate the target on estimated cohort means.
    pub fn evaluate(&self, means: &CohortMeans<T>, index: &CohortIndex) -> Result<DVector<T>> {
        match self {
            TargetSpec::Cells(cells) => {
                let mut out = DVector::zeros(cells.len());
                for (k, &(c, t)) in cells.iter().enumerate() {
                    if c >= means.n_cohorts() || !means.is_estimated(c, t) {
                        return Err(Error::UnidentifiedTarget {
                            cohort: c,
                            reason: format!("no estimate for cell ({c}, {t})"),
                        });
                    }
                    out[k] = means.mu_hat[(c, t)];
                }
                Ok(out)
            }
            TargetSpec::DynamicEffects { pre, len, periods, treated, normalize } => {
                dynamic_effects(means, treated, periods, *pre, *len, *normalize)
            }
            TargetSpec::AttributionShares { t1, t2 } => {
                let (col, row) = attribution_shares(means, index, *t1, *t2)?;
                Ok(DVector::from_column_slice(&[col, row]))
            }
            TargetSpec::LinearFunctional(ws) => {
                let mut out = DVector::zeros(ws.len());
                for (k, w) in ws.iter().enumerate() {
                    if w.nrows() != means.n_cohorts() || w.ncols() != means.n_outcomes() {
                        return Err(Error::DimensionMismatch(format!(
                            "linear functional {k} is {}x{}, means are {}x{}",
                            w.nrows(),
                            w.ncols(),
                            means.n_cohorts(),
                            means.n_outcomes()
                        )));
                    }
                    out[k] = w.dot(&means.mu_hat);
                }
                Ok(out)
            }
        }
    }
}
