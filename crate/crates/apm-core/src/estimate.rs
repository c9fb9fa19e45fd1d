//! Cohort outcome-mean estimation by bridge-function extrapolation.
//!
//! Given an aligned factor basis, a cohort's observed outcome means pin down
//! the loading average, and the full mean vector follows by extrapolation:
//! `mu_c = basis (E_c basis)^+ m_c`. The pseudo-inverse is computed through
//! the `r x r` restricted Gram matrix, which is the cheapest route and makes
//! the estimate invariant to the basis choice.
//!
//! [`estimate_all`] runs the whole pipeline: cohortize, per-cohort factor
//! estimation, aggregation, null-space extraction, and extrapolation for
//! every cohort in the target's graph component.

use nalgebra::{DMatrix, DVector};

use crate::apm::{
    build_apm, null_basis_restricted, Apm, ApmWarning, CohortProjection, FactorBasis,
};
use crate::error::{Error, Result};
use crate::factors::{
    hetero_split_factors, pc_factors, second_moment, validate_weights, CohortFactorEstimate,
    FactorMethod,
};
use crate::graph::{build_overlap_graph, connected_components, DEFAULT_RANK_TOL};
use crate::linalg::numerical_rank;
use crate::panel::{cohortize, CohortIndex, Panel};
use crate::scalar::{count, real, Scalar};

/// Estimated cohort-by-outcome mean matrix with bookkeeping flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMeans<T: Scalar> {
    /// `C x T` estimates; rows of cohorts outside the estimation component
    /// are zero and flagged absent via `estimated`.
    pub mu_hat: DMatrix<T>,
    /// Per-cohort flag: true when the row holds estimates.
    pub estimated: Vec<bool>,
    /// `C x T` row-major flags: true when the cell is observed (`t` in `T_c`).
    pub observed: Vec<bool>,
    /// Per-outcome flag: true when some cohort in the estimation component
    /// observes the outcome (estimates exist only for covered outcomes).
    pub covered_outcomes: Vec<bool>,
    /// Empirical cohort probabilities over retained units (sums to one).
    pub cohort_probs: DVector<T>,
}

impl<T: Scalar> CohortMeans<T> {
    /// Number of cohorts.
    pub fn n_cohorts(&self) -> usize {
        self.mu_hat.nrows()
    }

    /// Number of outcomes.
    pub fn n_outcomes(&self) -> usize {
        self.mu_hat.ncols()
    }

    /// Whether cell (cohort, outcome) is observed.
    pub fn is_observed(&self, cohort: usize, outcome: usize) -> bool {
        self.observed[cohort * self.n_outcomes() + outcome]
    }

    /// Whether cell (cohort, outcome) carries an estimate.
    pub fn is_estimated(&self, cohort: usize, outcome: usize) -> bool {
        self.estimated[cohort] && self.covered_outcomes[outcome]
    }
}

/// (Weighted) sample mean of a cohort's observed outcomes, zeros off `T_c`.
pub fn cohort_observed_mean<T: Scalar>(
    panel: &Panel<T>,
    index: &CohortIndex,
    cohort: usize,
    weights: Option<&[T]>,
) -> Result<DVector<T>> {
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
    let mut mean = DVector::zeros(panel.n_outcomes());
    for &row in &c.members {
        let w = weight_of(row) / total;
        for &t in &c.t_set {
            mean[t] += w * panel.value(row, t).expect("cohort member observes T_c");
        }
    }
    Ok(mean)
}

/// Extrapolate a cohort's observed mean vector to all outcomes.
///
/// Computes `basis (basis' E_c basis)^{-1} basis' E_c m`; any invertible
/// recombination of the basis columns leaves the result unchanged.
pub fn bridge_extrapolate<T: Scalar>(
    basis: &DMatrix<T>,
    t_set: &[usize],
    observed_mean: &DVector<T>,
) -> Result<DVector<T>> {
    let r = basis.ncols();
    let restricted = restrict_rows(basis, t_set);
    let rank = numerical_rank(&restricted, real::<T>(DEFAULT_RANK_TOL));
    if rank < r {
        return Err(Error::RankDeficientRestriction { rank, r });
    }
    let gram = restricted.transpose() * &restricted;
    let gram_inv = gram.try_inverse().ok_or(Error::SingularGram)?;
    let mut m_obs = DVector::zeros(t_set.len());
    for (a, &t) in t_set.iter().enumerate() {
        m_obs[a] = observed_mean[t];
    }
    let loading = gram_inv * restricted.transpose() * m_obs;
    Ok(basis * loading)
}

/// The extrapolation operator `R_c = I + basis (basis' E_c basis)^{-1} basis' (I - E_c)`.
///
/// Invariant to invertible recombinations of the basis columns; appears in
/// the first-order expansion of the outcome-mean estimator.
pub fn r_matrix<T: Scalar>(basis: &DMatrix<T>, t_set: &[usize]) -> Result<DMatrix<T>> {
    let t = basis.nrows();
    let restricted = restrict_rows(basis, t_set);
    let gram = restricted.transpose() * &restricted;
    let gram_inv = gram.try_inverse().ok_or(Error::SingularGram)?;
    let mut complement = DMatrix::<T>::identity(t, t);
    for &i in t_set {
        complement[(i, i)] = T::zero();
    }
    Ok(DMatrix::identity(t, t) + basis * gram_inv * basis.transpose() * complement)
}

fn restrict_rows<T: Scalar>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (dst, &src) in rows.iter().enumerate() {
        out.set_row(dst, &m.row(src));
    }
    out
}

/// Estimator choices for the full pipeline.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Cohorts smaller than this are dropped at cohortization (default 2;
    /// second moments need at least two members).
    pub min_cohort_size: usize,
    /// Cohort-specific factor estimator.
    pub factor_method: FactorMethod,
    /// Weak-identification floor relative to the aggregate's largest
    /// eigenvalue.
    pub gap_floor_rel: f64,
    /// Cohort whose graph component is estimated; `None` picks the largest
    /// component.
    pub target_cohort: Option<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            min_cohort_size: 2,
            factor_method: FactorMethod::Pc,
            gap_floor_rel: crate::apm::DEFAULT_GAP_FLOOR_REL,
            target_cohort: None,
        }
    }
}

/// Non-fatal conditions surfaced by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimateWarning {
    /// Cohorts observing fewer than `r` outcomes were dropped.
    SubRankCohortsDropped { cohorts: Vec<Vec<usize>> },
    /// The overlap graph is disconnected; the listed cohorts were excluded.
    DisconnectedGraph { excluded: Vec<usize> },
    /// A cohort observes exactly `r` outcomes: extrapolation is exactly
    /// determined with zero residual degrees of freedom.
    ZeroResidualDf { cohort: usize },
    /// Warning from the null-space extraction.
    Apm(ApmWarning),
}

impl std::fmt::Display for EstimateWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimateWarning::SubRankCohortsDropped { cohorts } => {
                write!(f, "dropped {} cohorts observing fewer than r outcomes", cohorts.len())
            }
            EstimateWarning::DisconnectedGraph { excluded } => {
                write!(f, "overlap graph disconnected; excluded cohorts {excluded:?}")
            }
            EstimateWarning::ZeroResidualDf { cohort } => {
                write!(f, "cohort {cohort} observes exactly r outcomes (zero residual df)")
            }
            EstimateWarning::Apm(w) => w.fmt(f),
        }
    }
}

/// Cohortization and component selection, fixed across bootstrap replicates.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    /// Retained cohorts (post size and sub-rank filters).
    pub index: CohortIndex,
    /// Units dropped by the size filter, empty-row filter, or sub-rank filter.
    pub dropped_units: usize,
    /// Cohorts (by index into `index`) inside the estimation component.
    pub component: Vec<usize>,
    /// Cohorts outside the estimation component.
    pub excluded: Vec<usize>,
    /// Warnings raised during preparation.
    pub warnings: Vec<EstimateWarning>,
}

/// Cohortize, filter sub-rank cohorts, and pick the estimation component.
pub fn prepare_design<T: Scalar>(
    panel: &Panel<T>,
    r: usize,
    config: &EstimatorConfig,
) -> Result<PreparedDesign> {
    let (raw_index, mut dropped_units) = cohortize(panel, config.min_cohort_size)?;
    let mut warnings = Vec::new();

    let keep: Vec<usize> = (0..raw_index.n_cohorts())
        .filter(|&c| raw_index.cohorts()[c].t_set.len() >= r)
        .collect();
    let index = if keep.len() == raw_index.n_cohorts() {
        raw_index
    } else {
        let dropped_sets: Vec<Vec<usize>> = (0..raw_index.n_cohorts())
            .filter(|c| !keep.contains(c))
            .map(|c| raw_index.cohorts()[c].t_set.clone())
            .collect();
        dropped_units += (0..raw_index.n_cohorts())
            .filter(|c| !keep.contains(c))
            .map(|c| raw_index.cohorts()[c].size())
            .sum::<usize>();
        warnings.push(EstimateWarning::SubRankCohortsDropped { cohorts: dropped_sets });
        raw_index.restrict(&keep)
    };
    if index.n_cohorts() == 0 {
        return Err(Error::AllCohortsDropped { min_cohort_size: config.min_cohort_size });
    }

    let graph = build_overlap_graph::<T>(&index, r, None)?;
    let components = connected_components(&graph);
    let component = match config.target_cohort {
        Some(target) => {
            if target >= index.n_cohorts() {
                return Err(Error::UnidentifiedTarget {
                    cohort: target,
                    reason: format!("only {} cohorts retained", index.n_cohorts()),
                });
            }
            components
                .iter()
                .find(|comp| comp.contains(&target))
                .cloned()
                .expect("components partition the cohorts")
        }
        None => components
            .iter()
            .max_by_key(|comp| comp.len())
            .cloned()
            .expect("at least one component"),
    };
    let excluded: Vec<usize> =
        (0..index.n_cohorts()).filter(|c| !component.contains(c)).collect();
    if !excluded.is_empty() {
        warnings.push(EstimateWarning::DisconnectedGraph { excluded: excluded.clone() });
    }
    Ok(PreparedDesign { index, dropped_units, component, excluded, warnings })
}

/// Full estimation output.
#[derive(Debug, Clone)]
pub struct EstimateResult<T: Scalar> {
    /// Cohort-by-outcome mean estimates.
    pub means: CohortMeans<T>,
    /// Aligned factor basis from the aggregate's null space.
    pub basis: FactorBasis<T>,
    /// The aggregated projection matrix with its spectrum.
    pub apm: Apm<T>,
    /// Per-cohort factor estimates (`None` outside the component).
    pub factor_estimates: Vec<Option<CohortFactorEstimate<T>>>,
    /// Design bookkeeping (cohorts, component, drops).
    pub design: PreparedDesign,
    /// All warnings raised along the way.
    pub warnings: Vec<EstimateWarning>,
}

/// Run the full pipeline on a panel.
pub fn estimate_all<T: Scalar>(
    panel: &Panel<T>,
    r: usize,
    config: &EstimatorConfig,
    weights: Option<&[T]>,
) -> Result<EstimateResult<T>> {
    let design = prepare_design(panel, r, config)?;
    estimate_prepared(panel, &design, r, config, weights)
}

/// Run estimation against a fixed design (used by bootstrap replicates).
pub fn estimate_prepared<T: Scalar>(
    panel: &Panel<T>,
    design: &PreparedDesign,
    r: usize,
    config: &EstimatorConfig,
    weights: Option<&[T]>,
) -> Result<EstimateResult<T>> {
    let index = &design.index;
    let n_cohorts = index.n_cohorts();
    let t = index.n_outcomes();
    let mut warnings = design.warnings.clone();

    let mut factor_estimates: Vec<Option<CohortFactorEstimate<T>>> = vec![None; n_cohorts];
    let mut projections = Vec::with_capacity(design.component.len());
    for &c in &design.component {
        let t_set = &index.cohorts()[c].t_set;
        let moment = second_moment(panel, index, c, weights)?;
        let estimate = match config.factor_method {
            FactorMethod::Pc => pc_factors(&moment, t_set, r)?,
            FactorMethod::HeteroskedasticSplit => hetero_split_factors(&moment, t_set, r)?,
        };
        projections.push(CohortProjection {
            cohort: c,
            mask: index.mask::<T>(c),
            projection: estimate.projection(),
        });
        if t_set.len() == r {
            warnings.push(EstimateWarning::ZeroResidualDf { cohort: c });
        }
        factor_estimates[c] = Some(estimate);
    }

    let mut covered_flags = vec![false; t];
    for &c in &design.component {
        for &out in &index.cohorts()[c].t_set {
            covered_flags[out] = true;
        }
    }
    let covered: Vec<usize> = (0..t).filter(|&out| covered_flags[out]).collect();

    let apm = build_apm(&projections)?;
    let gap_floor = apm.lambda_max() * real::<T>(config.gap_floor_rel);
    let basis = null_basis_restricted(&apm, r, gap_floor, &covered)?;
    warnings.extend(basis.warnings.iter().cloned().map(EstimateWarning::Apm));

    let mut mu_hat = DMatrix::<T>::zeros(n_cohorts, t);
    let mut estimated = vec![false; n_cohorts];
    for &c in &design.component {
        let t_set = &index.cohorts()[c].t_set;
        let observed_mean = cohort_observed_mean(panel, index, c, weights)?;
        let mu_c = bridge_extrapolate(&basis.basis, t_set, &observed_mean).map_err(|e| {
            match e {
                Error::RankDeficientRestriction { .. } | Error::SingularGram => {
                    Error::UnidentifiedTarget { cohort: c, reason: e.to_string() }
                }
                other => other,
            }
        })?;
        mu_hat.set_row(c, &mu_c.transpose());
        estimated[c] = true;
    }

    let mut observed = vec![false; n_cohorts * t];
    for (c, cohort) in index.cohorts().iter().enumerate() {
        for &out in &cohort.t_set {
            observed[c * t + out] = true;
        }
    }

    let cohort_probs = cohort_probabilities(panel, index, weights)?;
    Ok(EstimateResult {
        means: CohortMeans {
            mu_hat,
            estimated,
            observed,
            covered_outcomes: covered_flags,
            cohort_probs,
        },
        basis,
        apm,
        factor_estimates,
        design: design.clone(),
        warnings,
    })
}

/// Empirical (or weighted) cohort shares over retained units.
pub fn cohort_probabilities<T: Scalar>(
    panel: &Panel<T>,
    index: &CohortIndex,
    weights: Option<&[T]>,
) -> Result<DVector<T>> {
    if let Some(w) = weights {
        validate_weights(w, panel.n_units())?;
    }
    let n = panel.n_units();
    let uniform = T::one() / count::<T>(n);
    let mut probs = DVector::zeros(index.n_cohorts());
    let mut total = T::zero();
    for (c, cohort) in index.cohorts().iter().enumerate() {
        for &row in &cohort.members {
            let w = match weights {
                Some(w) => w[row],
                None => uniform,
            };
            probs[c] += w;
            total += w;
        }
    }
    if total <= T::zero() {
        return Err(Error::BadWeights("zero total weight on retained units".into()));
    }
    Ok(probs / total)
}
