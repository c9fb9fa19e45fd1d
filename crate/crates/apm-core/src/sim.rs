//! Synthetic data generation, baselines, and evaluation harnesses.
//!
//! A [`DgpTruth`] fixes factor vectors, cohort loading distributions, noise
//! variances, cohort probabilities, and a missingness pattern; [`generate`]
//! draws panels from it deterministically per seed. [`twfe_estimate`] fits
//! the additive two-way fixed-effects benchmark, [`mask_eval`] runs the
//! mask-and-resample estimator comparison, and [`oracle_influence`]
//! evaluates the asymptotic-linearity influence function from the true
//! parameters for use as a simulation oracle.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::apm::projector;
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_prepared, prepare_design, r_matrix, EstimatorConfig,
};
use crate::linalg::{mask_matrix, pinv, sym_eigen_ascending};
use crate::panel::{cohortize, mask_cell, CohortIndex, Panel};
use crate::scalar::{count, real, Scalar};

/// Residual noise specification.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec<T: Scalar> {
    /// One variance per cohort, constant across outcomes.
    Homoskedastic(Vec<T>),
    /// One variance per (cohort, outcome) cell.
    Heteroskedastic(DMatrix<T>),
}

impl<T: Scalar> NoiseSpec<T> {
    fn variance(&self, cohort: usize, outcome: usize) -> T {
        match self {
            NoiseSpec::Homoskedastic(v) => v[cohort],
            NoiseSpec::Heteroskedastic(m) => m[(cohort, outcome)],
        }
    }
}

/// Library of outcome missingness patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MissingnessPattern {
    /// Two cohorts: a reference cohort observing everything and a cohort
    /// observing the first half of the outcomes.
    Block {
        /// Total number of outcomes.
        n_outcomes: usize,
    },
    /// Overlapping windows of width `T - C + 1`, shifted by one per cohort.
    Staircase {
        /// Number of cohorts.
        cohorts: usize,
        /// Total number of outcomes.
        n_outcomes: usize,
    },
    /// The canonical three-cohort staircase over four outcomes.
    ThreeCohort,
    /// Staggered-entry trapezoid: cohort `k` observes a pre-treatment window
    /// of fixed length ending at period `k + pre_window - 1`.
    StaggeredEventStudy {
        /// Number of cohorts.
        cohorts: usize,
        /// Observed pre-treatment window length.
        pre_window: usize,
    },
    /// Explicit observed sets.
    Custom {
        /// One sorted outcome set per cohort.
        sets: Vec<Vec<usize>>,
    },
}

impl MissingnessPattern {
    /// Observed outcome sets, one per cohort.
    pub fn t_sets(&self) -> Result<Vec<Vec<usize>>> {
        let sets = match self {
            MissingnessPattern::Block { n_outcomes } => {
                if *n_outcomes < 2 {
                    return Err(Error::BadConfig("block pattern needs >= 2 outcomes".into()));
                }
                let half = n_outcomes.div_ceil(2);
                vec![(0..half).collect(), (0..*n_outcomes).collect()]
            }
            MissingnessPattern::Staircase { cohorts, n_outcomes } => {
                if *cohorts < 1 || *n_outcomes < cohorts + 1 {
                    return Err(Error::BadConfig(
                        "staircase needs n_outcomes >= cohorts + 1".into(),
                    ));
                }
                let width = n_outcomes - cohorts + 1;
                (0..*cohorts).map(|c| (c..c + width).collect()).collect()
            }
            MissingnessPattern::ThreeCohort => {
                MissingnessPattern::Staircase { cohorts: 3, n_outcomes: 4 }.t_sets()?
            }
            MissingnessPattern::StaggeredEventStudy { cohorts, pre_window } => {
                if *cohorts < 1 || *pre_window < 1 {
                    return Err(Error::BadConfig("staggered pattern needs positive sizes".into()));
                }
                (0..*cohorts).map(|c| (c..c + pre_window).collect()).collect()
            }
            MissingnessPattern::Custom { sets } => sets.clone(),
        };
        if sets.is_empty() || sets.iter().any(Vec::is_empty) {
            return Err(Error::BadConfig("every cohort must observe some outcome".into()));
        }
        let t = sets.iter().flat_map(|s| s.iter().copied()).max().unwrap() + 1;
        let mut covered = vec![false; t];
        for s in &sets {
            for &out in s {
                covered[out] = true;
            }
        }
        if !covered.iter().all(|&c| c) {
            return Err(Error::BadConfig("every outcome must be observed somewhere".into()));
        }
        Ok(sets)
    }

    /// Number of outcomes spanned by the pattern.
    pub fn n_outcomes(&self) -> Result<usize> {
        Ok(self
            .t_sets()?
            .iter()
            .flat_map(|s| s.iter().copied())
            .max()
            .map_or(0, |m| m + 1))
    }
}

/// Complete data-generating process for the factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpTruth<T: Scalar> {
    /// `T x r` factor matrix; row `t` is the outcome-`t` factor vector.
    pub gamma: DMatrix<T>,
    /// Conditional loading means, one length-`r` vector per cohort.
    pub loading_means: Vec<DVector<T>>,
    /// Conditional loading covariances, positive definite `r x r` each.
    pub loading_covs: Vec<DMatrix<T>>,
    /// Residual noise variances.
    pub noise: NoiseSpec<T>,
    /// Cohort membership probabilities (positive, sum to one).
    pub cohort_probs: Vec<T>,
    /// Outcome missingness pattern.
    pub pattern: MissingnessPattern,
}

impl<T: Scalar> DgpTruth<T> {
    /// Number of cohorts.
    pub fn n_cohorts(&self) -> usize {
        self.loading_means.len()
    }

    /// Number of outcomes.
    pub fn n_outcomes(&self) -> usize {
        self.gamma.nrows()
    }

    /// Factor rank.
    pub fn rank(&self) -> usize {
        self.gamma.ncols()
    }

    /// Observed outcome sets per cohort.
    pub fn t_sets(&self) -> Result<Vec<Vec<usize>>> {
        self.pattern.t_sets()
    }

    /// True cohort-by-outcome means `mu_ct = gamma_t' E[lambda | c]`.
    pub fn mu_true(&self) -> DMatrix<T> {
        let c = self.n_cohorts();
        let t = self.n_outcomes();
        let mut mu = DMatrix::zeros(c, t);
        for ci in 0..c {
            let row = &self.gamma * &self.loading_means[ci];
            mu.set_row(ci, &row.transpose());
        }
        mu
    }

    /// Conditional second moment of loadings `E[lambda lambda' | c]`.
    pub fn loading_second_moment(&self, cohort: usize) -> DMatrix<T> {
        &self.loading_covs[cohort]
            + &self.loading_means[cohort] * self.loading_means[cohort].transpose()
    }

    /// Population second-moment matrix `V_c`, supported on `T_c x T_c`.
    pub fn population_second_moment(&self, cohort: usize) -> Result<DMatrix<T>> {
        let t = self.n_outcomes();
        let t_set = &self.t_sets()?[cohort];
        let cols = &self.gamma * self.loading_second_moment(cohort) * self.gamma.transpose();
        let mut v = DMatrix::zeros(t, t);
        for &a in t_set {
            for &b in t_set {
                v[(a, b)] = cols[(a, b)];
            }
            v[(a, a)] += self.noise.variance(cohort, a);
        }
        Ok(v)
    }

    /// Validate dimensions, positivity, and the missingness pattern.
    pub fn validate(&self) -> Result<()> {
        let c = self.n_cohorts();
        let r = self.rank();
        let t = self.n_outcomes();
        let sets = self.t_sets()?;
        if sets.len() != c {
            return Err(Error::BadConfig(format!(
                "{} cohorts in pattern, {} loading means",
                sets.len(),
                c
            )));
        }
        if self.pattern.n_outcomes()? > t {
            return Err(Error::BadConfig("pattern references outcomes beyond gamma".into()));
        }
        if self.loading_covs.len() != c || self.cohort_probs.len() != c {
            return Err(Error::BadConfig("per-cohort field lengths disagree".into()));
        }
        let mut prob_sum = T::zero();
        for &p in &self.cohort_probs {
            if p <= T::zero() {
                return Err(Error::BadConfig("cohort probabilities must be positive".into()));
            }
            prob_sum += p;
        }
        if (prob_sum - T::one()).abs() > real::<T>(1e-9) {
            return Err(Error::BadConfig("cohort probabilities must sum to one".into()));
        }
        for (ci, cov) in self.loading_covs.iter().enumerate() {
            if cov.nrows() != r || cov.ncols() != r || self.loading_means[ci].len() != r {
                return Err(Error::BadConfig("loading dimensions disagree with gamma".into()));
            }
            if Cholesky::new(cov.clone()).is_none() {
                return Err(Error::BadConfig(format!(
                    "loading covariance of cohort {ci} is not positive definite"
                )));
            }
        }
        match &self.noise {
            NoiseSpec::Homoskedastic(v) => {
                if v.len() != c || v.iter().any(|&s| s < T::zero()) {
                    return Err(Error::BadConfig("bad homoskedastic noise vector".into()));
                }
            }
            NoiseSpec::Heteroskedastic(m) => {
                if m.nrows() != c || m.ncols() != t || m.iter().any(|&s| s < T::zero()) {
                    return Err(Error::BadConfig("bad heteroskedastic noise matrix".into()));
                }
            }
        }
        Ok(())
    }
}

/// What to do when a cohort draws zero units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyCohortPolicy {
    /// Fail with [`Error::DegenerateCohort`].
    Error,
    /// Redraw the membership vector (up to 100 attempts).
    Resample,
}

/// A generated panel along with the latent draws behind it.
#[derive(Debug, Clone)]
pub struct SimDraw<T: Scalar> {
    /// The observable panel.
    pub panel: Panel<T>,
    /// True cohort assignment per unit (truth cohort indices).
    pub cohort_of_unit: Vec<usize>,
    /// Latent loadings, one row per unit.
    pub loadings: DMatrix<T>,
}

/// Draw a panel from the data-generating process (errors on empty cohorts).
pub fn generate<T: Scalar>(truth: &DgpTruth<T>, n: usize, seed: u64) -> Result<Panel<T>> {
    Ok(generate_detailed(truth, n, seed, EmptyCohortPolicy::Error)?.panel)
}

/// Draw a panel and keep the latent loadings and assignments.
pub fn generate_detailed<T: Scalar>(
    truth: &DgpTruth<T>,
    n: usize,
    seed: u64,
    policy: EmptyCohortPolicy,
) -> Result<SimDraw<T>> {
    truth.validate()?;
    let c_count = truth.n_cohorts();
    if n < c_count {
        return Err(Error::BadConfig(format!("n = {n} below cohort count {c_count}")));
    }
    let sets = truth.t_sets()?;
    let r = truth.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut cumulative = Vec::with_capacity(c_count);
    let mut acc = 0.0f64;
    for &p in &truth.cohort_probs {
        acc += p.to_f64().expect("probability fits f64");
        cumulative.push(acc);
    }

    let cohort_of_unit = loop {
        let assignment: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                cumulative.iter().position(|&edge| u < edge).unwrap_or(c_count - 1)
            })
            .collect();
        let mut counts = vec![0usize; c_count];
        for &c in &assignment {
            counts[c] += 1;
        }
        match counts.iter().position(|&k| k == 0) {
            None => break assignment,
            Some(empty) => match policy {
                EmptyCohortPolicy::Error => {
                    return Err(Error::DegenerateCohort { cohort: empty, n });
                }
                EmptyCohortPolicy::Resample => continue,
            },
        }
    };

    let cholesky: Vec<Cholesky<T, Dyn>> = truth
        .loading_covs
        .iter()
        .map(|cov| Cholesky::new(cov.clone()).expect("validated positive definite"))
        .collect();

    let unit_width = (n as f64).log10().ceil().max(1.0) as usize + 1;
    let outcome_width = (truth.n_outcomes() as f64).log10().ceil().max(1.0) as usize + 1;
    let mut loadings = DMatrix::zeros(n, r);
    let mut cells = Vec::new();
    for i in 0..n {
        let c = cohort_of_unit[i];
        let mut z = DVector::zeros(r);
        for k in 0..r {
            let draw: f64 = StandardNormal.sample(&mut rng);
            z[k] = real::<T>(draw);
        }
        let lambda = &truth.loading_means[c] + cholesky[c].l() * z;
        loadings.set_row(i, &lambda.transpose());
        for &t in &sets[c] {
            let eps_draw: f64 = StandardNormal.sample(&mut rng);
            let eps = truth.noise.variance(c, t).sqrt() * real::<T>(eps_draw);
            let value = self::row_dot(&truth.gamma, t, &lambda) + eps;
            cells.push((
                format!("u{i:0unit_width$}"),
                format!("t{t:0outcome_width$}"),
                value,
            ));
        }
    }
    let panel = Panel::from_cells(&cells)?;
    Ok(SimDraw { panel, cohort_of_unit, loadings })
}

fn row_dot<T: Scalar>(m: &DMatrix<T>, row: usize, v: &DVector<T>) -> T {
    let mut acc = T::zero();
    for k in 0..m.ncols() {
        acc += m[(row, k)] * v[k];
    }
    acc
}

/// Two-way fixed-effects imputation of all cohort outcome means.
///
/// Fits `y_it = a_i + g_t` by least squares on the observed cells with the
/// normalization `sum_t g_t = 0`, then imputes `mu_ct` as the cohort's
/// average unit effect plus the outcome effect. The normal equations reduce
/// exactly to cohort-level statistics.
pub fn twfe_estimate<T: Scalar>(panel: &Panel<T>, index: &CohortIndex) -> Result<DMatrix<T>> {
    let t = panel.n_outcomes();
    let c_count = index.n_cohorts();

    // Cohort-level sample means of observed cells.
    let mut cohort_mean = DMatrix::<T>::zeros(c_count, t);
    for (c, cohort) in index.cohorts().iter().enumerate() {
        let share = T::one() / count::<T>(cohort.size());
        for &row in &cohort.members {
            for &out in &cohort.t_set {
                cohort_mean[(c, out)] += share * panel.value(row, out).expect("observed");
            }
        }
    }

    // Reduced normal equations for the outcome effects g.
    let mut m = DMatrix::<T>::zeros(t, t);
    let mut rhs = DVector::<T>::zeros(t);
    for (c, cohort) in index.cohorts().iter().enumerate() {
        let size = count::<T>(cohort.size());
        let inv_width = T::one() / count::<T>(cohort.t_set.len());
        let mut bar = T::zero();
        for &out in &cohort.t_set {
            bar += cohort_mean[(c, out)];
        }
        bar *= inv_width;
        for &a in &cohort.t_set {
            m[(a, a)] += size;
            rhs[a] += size * (cohort_mean[(c, a)] - bar);
            for &b in &cohort.t_set {
                m[(a, b)] -= size * inv_width;
            }
        }
    }

    // A connected design has exactly one zero eigenvalue (the constant
    // direction); more means the bipartite design is disconnected.
    let (eigs, _) = sym_eigen_ascending(&m);
    let tol = eigs[t - 1].abs().max(T::one()) * real::<T>(1e-9);
    let near_zero = eigs.iter().filter(|&&v| v.abs() < tol).count();
    if near_zero > 1 {
        return Err(Error::DisconnectedDesign);
    }
    let g = pinv(&m) * rhs;

    let mut mu = DMatrix::<T>::zeros(c_count, t);
    for (c, cohort) in index.cohorts().iter().enumerate() {
        let inv_width = T::one() / count::<T>(cohort.t_set.len());
        let mut bar_y = T::zero();
        let mut bar_g = T::zero();
        for &out in &cohort.t_set {
            bar_y += cohort_mean[(c, out)];
            bar_g += g[out];
        }
        let a_c = (bar_y - bar_g) * inv_width;
        for out in 0..t {
            mu[(c, out)] = a_c + g[out];
        }
    }
    Ok(mu)
}

/// Estimators compared by the masking harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// The spectral factor-model estimator.
    Apm,
    /// The additive two-way fixed-effects baseline.
    Twfe,
}

impl EstimatorKind {
    /// Stable lowercase name for CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Apm => "apm",
            EstimatorKind::Twfe => "twfe",
        }
    }
}

/// One masking-evaluation result row.
#[derive(Debug, Clone)]
pub struct MaskEvalRow<T: Scalar> {
    /// Target cohort (index into the original panel's cohortization).
    pub cohort: usize,
    /// Target outcome.
    pub outcome: usize,
    /// Which estimator the metrics describe.
    pub estimator: EstimatorKind,
    /// |mean estimate - ground truth| over replicates.
    pub abs_bias: T,
    /// Replicate standard deviation (population form).
    pub se: T,
    /// Root mean squared error against the ground truth.
    pub rmse: T,
    /// False when the target was unidentified after masking.
    pub identified: bool,
}

/// Mask each target cell, resample within cohorts, and score estimators.
///
/// The ground truth for a target is the pre-mask sample mean of the masked
/// cells. Resampling draws units with replacement within every cohort of
/// the masked panel, preserving cohort sizes.
pub fn mask_eval<T: Scalar>(
    panel: &Panel<T>,
    r: usize,
    targets: &[(usize, usize)],
    replications: usize,
    seed: u64,
    estimators: &[EstimatorKind],
    config: &EstimatorConfig,
) -> Result<Vec<MaskEvalRow<T>>> {
    let (index, _) = cohortize(panel, config.min_cohort_size)?;
    let mut rows = Vec::new();
    for (target_id, &(cohort, outcome)) in targets.iter().enumerate() {
        if cohort >= index.n_cohorts() {
            return Err(Error::EmptyCohort { cohort });
        }
        let masked = mask_cell(panel, &index, cohort, outcome)?;
        let masked_t_set: Vec<usize> = index.cohorts()[cohort]
            .t_set
            .iter()
            .copied()
            .filter(|&t| t != outcome)
            .collect();

        let evaluation = evaluate_masked_target(
            &masked.panel,
            r,
            &masked_t_set,
            outcome,
            masked.ground_truth,
            replications,
            seed,
            target_id as u64,
            estimators,
            config,
        );
        match evaluation {
            Ok(metrics) => {
                for (kind, (abs_bias, se, rmse)) in metrics {
                    rows.push(MaskEvalRow {
                        cohort,
                        outcome,
                        estimator: kind,
                        abs_bias,
                        se,
                        rmse,
                        identified: true,
                    });
                }
            }
            Err(Error::UnidentifiedAfterMask { .. }) => {
                for &kind in estimators {
                    rows.push(MaskEvalRow {
                        cohort,
                        outcome,
                        estimator: kind,
                        abs_bias: T::zero(),
                        se: T::zero(),
                        rmse: T::zero(),
                        identified: false,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_masked_target<T: Scalar>(
    masked_panel: &Panel<T>,
    r: usize,
    masked_t_set: &[usize],
    outcome: usize,
    truth: T,
    replications: usize,
    seed: u64,
    target_id: u64,
    estimators: &[EstimatorKind],
    config: &EstimatorConfig,
) -> Result<Vec<(EstimatorKind, (T, T, T))>> {
    if masked_t_set.is_empty() {
        return Err(Error::UnidentifiedAfterMask { cohort: usize::MAX, outcome });
    }
    // Locate the masked units' cohort in the masked panel's cohortization
    // (they may have merged with an existing cohort sharing the same set).
    let (masked_index, _) = cohortize(masked_panel, config.min_cohort_size)?;
    let masked_cohort = masked_index
        .cohorts()
        .iter()
        .position(|c| c.t_set == masked_t_set)
        .ok_or(Error::UnidentifiedAfterMask { cohort: usize::MAX, outcome })?;

    let mut cfg = config.clone();
    cfg.target_cohort = Some(masked_cohort);
    let design = prepare_design(masked_panel, r, &cfg)?;
    // Map the cohort through the sub-rank filter.
    let design_cohort = design
        .index
        .cohorts()
        .iter()
        .position(|c| c.t_set == masked_t_set)
        .ok_or(Error::UnidentifiedAfterMask { cohort: masked_cohort, outcome })?;
    let mut cfg = cfg;
    cfg.target_cohort = Some(design_cohort);
    let design = prepare_design(masked_panel, r, &cfg)?;
    // The target outcome must be observed inside the estimation component.
    let covered = design.component.iter().any(|&c| {
        design.index.cohorts()[c].t_set.contains(&outcome)
    });
    if !covered || !design.component.contains(&design_cohort) {
        return Err(Error::UnidentifiedAfterMask { cohort: masked_cohort, outcome });
    }

    let needs_twfe = estimators.contains(&EstimatorKind::Twfe);
    let mut draws: Vec<(EstimatorKind, Vec<T>)> =
        estimators.iter().map(|&k| (k, Vec::with_capacity(replications))).collect();
    for b in 0..replications {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((target_id << 32) | (b as u64 + 1));
        let resampled = resample_within_cohorts(masked_panel, &masked_index, &mut rng);
        let apm_estimate = if estimators.contains(&EstimatorKind::Apm) {
            let result = estimate_prepared(&resampled, &design, r, &cfg, None)?;
            Some(result.means.mu_hat[(design_cohort, outcome)])
        } else {
            None
        };
        let twfe = if needs_twfe {
            Some(twfe_estimate(&resampled, &masked_index)?[(masked_cohort, outcome)])
        } else {
            None
        };
        for (kind, values) in &mut draws {
            match kind {
                EstimatorKind::Apm => values.push(apm_estimate.expect("computed")),
                EstimatorKind::Twfe => values.push(twfe.expect("computed")),
            }
        }
    }

    Ok(draws
        .into_iter()
        .map(|(kind, values)| (kind, spread_metrics(&values, truth)))
        .collect())
}

/// Resample units with replacement within each cohort, preserving sizes.
fn resample_within_cohorts<T: Scalar, R: Rng>(
    panel: &Panel<T>,
    index: &CohortIndex,
    rng: &mut R,
) -> Panel<T> {
    let mut source: Vec<usize> = (0..panel.n_units()).collect();
    for cohort in index.cohorts() {
        for &slot in &cohort.members {
            let pick = rng.random_range(0..cohort.members.len());
            source[slot] = cohort.members[pick];
        }
    }
    panel.with_resampled_rows(&source)
}

/// (abs bias, population sd, rmse) of draws against a fixed truth.
fn spread_metrics<T: Scalar>(values: &[T], truth: T) -> (T, T, T) {
    let n = count::<T>(values.len());
    let mut mean = T::zero();
    for &v in values {
        mean += v;
    }
    mean /= n;
    let mut var = T::zero();
    let mut mse = T::zero();
    for &v in values {
        var += (v - mean) * (v - mean);
        mse += (v - truth) * (v - truth);
    }
    var /= n;
    mse /= n;
    ((mean - truth).abs(), var.sqrt(), mse.sqrt())
}

/// Sign convention for the projection-induced influence term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfluenceSign {
    /// The convention validated by the perturbation oracle (default).
    Validated,
    /// The opposite convention, retained for auditability.
    Flipped,
}

/// Per-unit influence function of the target cohort's mean vector, built
/// from the true data-generating process.
///
/// Requires homoskedastic noise. Each unit's contribution combines the
/// first-order effect of its cohort's second-moment fluctuation on the
/// factor-space estimate (propagated through the aggregate's pseudo-inverse
/// and the extrapolation operator) with the direct term for target-cohort
/// members. The sample average estimates the estimator's sampling error.
pub fn oracle_influence<T: Scalar>(
    truth: &DgpTruth<T>,
    panel: &Panel<T>,
    target_cohort: usize,
    sign: InfluenceSign,
) -> Result<Vec<DVector<T>>> {
    let NoiseSpec::Homoskedastic(_) = &truth.noise else {
        return Err(Error::HeteroskedasticTruth);
    };
    truth.validate()?;
    let t = truth.n_outcomes();
    let r = truth.rank();
    let sets = truth.t_sets()?;
    let c_count = truth.n_cohorts();

    // Map panel cohorts to truth cohorts by observed set.
    let (index, dropped) = cohortize(panel, 1)?;
    if dropped > 0 {
        return Err(Error::BadConfig("panel has units outside the pattern".into()));
    }
    let mut truth_cohort_of_row = vec![usize::MAX; panel.n_units()];
    for cohort in index.cohorts() {
        let truth_c = sets
            .iter()
            .position(|s| s == &cohort.t_set)
            .ok_or_else(|| Error::BadConfig("panel cohort not in the pattern".into()))?;
        for &row in &cohort.members {
            truth_cohort_of_row[row] = truth_c;
        }
    }

    // Population aggregate and its pseudo-inverse.
    let gamma_proj = projector(&truth.gamma);
    let mut aggregate = DMatrix::<T>::zeros(t, t);
    for set in &sets {
        let mask = mask_matrix::<T>(t, set);
        let restricted = &mask * &truth.gamma;
        aggregate += mask;
        aggregate -= projector(&restricted);
    }
    let aggregate_pinv = pinv(&aggregate);
    let h_apm = aggregate_pinv.kronecker(&gamma_proj) + gamma_proj.kronecker(&aggregate_pinv);

    // Target-cohort extrapolation pieces.
    let target_set = &sets[target_cohort];
    let r_target = r_matrix(&truth.gamma, target_set)
        .map_err(|_| Error::UnidentifiedTarget {
            cohort: target_cohort,
            reason: "restricted Gram is singular".into(),
        })?;
    let mu_target = &truth.gamma * &truth.loading_means[target_cohort];
    let e_target = mask_matrix::<T>(t, target_set);
    // (mu' E R) as a 1 x T matrix.
    let mu_er = (r_target.transpose() * &e_target * &mu_target).transpose();
    let row_mat = mu_er.kronecker(&r_target); // T x T^2
    let b_target = bridge_operator(&truth.gamma, target_set);

    // Per-cohort composite weight matrices W_c = row_mat * H * H_c.
    let sign_factor = match sign {
        InfluenceSign::Validated => T::one(),
        InfluenceSign::Flipped => -T::one(),
    };
    let mut weight_mats = Vec::with_capacity(c_count);
    let mut v_mats = Vec::with_capacity(c_count);
    for c in 0..c_count {
        let v_c = truth.population_second_moment(c)?;
        let h_c = second_moment_sensitivity(&v_c, r)?;
        weight_mats.push((&row_mat * &h_apm * h_c) * sign_factor);
        v_mats.push(v_c);
    }

    let mut out = Vec::with_capacity(panel.n_units());
    for i in 0..panel.n_units() {
        let c = truth_cohort_of_row[i];
        let p_c = truth.cohort_probs[c];
        let y = panel.masked_row(i);
        let moment_dev = &y * y.transpose() - &v_mats[c];
        let x = DVector::from_column_slice(moment_dev.as_slice());
        let mut psi = (&weight_mats[c] * x) / p_c;
        if c == target_cohort {
            let direct = (&b_target * &e_target * &y - &mu_target)
                / truth.cohort_probs[target_cohort];
            psi += direct;
        }
        out.push(psi);
    }
    Ok(out)
}

/// `gamma (gamma' E gamma)^{-1} gamma' E`, the population bridge operator.
fn bridge_operator<T: Scalar>(gamma: &DMatrix<T>, t_set: &[usize]) -> DMatrix<T> {
    let t = gamma.nrows();
    let e = mask_matrix::<T>(t, t_set);
    let gram = gamma.transpose() * &e * gamma;
    let gram_inv = gram.try_inverse().expect("full-rank restriction");
    gamma * gram_inv * gamma.transpose() * e
}

/// First-order sensitivity of the top-`r` eigenprojection of a symmetric
/// matrix to perturbations of the matrix, as a `T^2 x T^2` operator on
/// vectorized perturbations (validated sign: `1 / (lambda_j - lambda_k)`
/// with `j` in the top window).
fn second_moment_sensitivity<T: Scalar>(v: &DMatrix<T>, r: usize) -> Result<DMatrix<T>> {
    let t = v.nrows();
    if r >= t {
        return Err(Error::BadRank { r, t });
    }
    let (values, vectors) = sym_eigen_ascending(v);
    let mut h = DMatrix::<T>::zeros(t * t, t * t);
    for j in (t - r)..t {
        let uj = vectors.column(j).into_owned();
        let pj = &uj * uj.transpose();
        for k in 0..(t - r) {
            let uk = vectors.column(k).into_owned();
            let pk = &uk * uk.transpose();
            let coeff = T::one() / (values[j] - values[k]);
            h += (pk.kronecker(&pj) + pj.kronecker(&pk)) * coeff;
        }
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

/// Factor matrix specification in a simulation config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaConfig {
    /// Draw entries i.i.d. standard normal from the config seed.
    Random(String),
    /// Explicit row-major `T x r` entries.
    Explicit(Vec<Vec<f64>>),
}

/// Noise specification in a simulation config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseConfig {
    /// One variance per cohort.
    Homoskedastic(Vec<f64>),
    /// Row-major `C x T` variances.
    Heteroskedastic(Vec<Vec<f64>>),
}

/// One cohort's block in a simulation config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortConfig {
    /// Membership probability.
    pub prob: f64,
    /// Conditional loading mean (length `r`).
    pub loading_mean: Vec<f64>,
    /// Conditional loading covariance (`r x r`, row-major).
    pub loading_cov: Vec<Vec<f64>>,
    /// Observed outcome indices.
    pub t_set: Vec<usize>,
}

/// JSON-facing simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Number of outcomes.
    pub t: usize,
    /// Factor rank.
    pub r: usize,
    /// Factor matrix or the string "random".
    pub gamma: GammaConfig,
    /// Cohort blocks.
    pub cohorts: Vec<CohortConfig>,
    /// Residual noise.
    pub noise: NoiseConfig,
    /// Default seed used when the command line does not supply one.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DgpConfig {
    /// Parse from a JSON string.
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::BadConfig(e.to_string()))
    }

    /// Materialize the truth, drawing a random factor matrix if requested.
    pub fn to_truth<T: Scalar>(&self, seed: u64) -> Result<DgpTruth<T>> {
        if self.r == 0 || self.r >= self.t {
            return Err(Error::BadRank { r: self.r, t: self.t });
        }
        let gamma = match &self.gamma {
            GammaConfig::Explicit(rows) => {
                if rows.len() != self.t || rows.iter().any(|row| row.len() != self.r) {
                    return Err(Error::BadConfig("gamma must be T x r".into()));
                }
                DMatrix::from_fn(self.t, self.r, |i, j| real::<T>(rows[i][j]))
            }
            GammaConfig::Random(tag) => {
                if tag != "random" {
                    return Err(Error::BadConfig(format!("unknown gamma spec '{tag}'")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                DMatrix::from_fn(self.t, self.r, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    real::<T>(z)
                })
            }
        };
        let sets: Vec<Vec<usize>> = self.cohorts.iter().map(|c| c.t_set.clone()).collect();
        let truth = DgpTruth {
            gamma,
            loading_means: self
                .cohorts
                .iter()
                .map(|c| DVector::from_iterator(c.loading_mean.len(), c.loading_mean.iter().map(|&x| real::<T>(x))))
                .collect(),
            loading_covs: self
                .cohorts
                .iter()
                .map(|c| {
                    DMatrix::from_fn(c.loading_cov.len(), c.loading_cov.len(), |i, j| {
                        real::<T>(c.loading_cov[i][j])
                    })
                })
                .collect(),
            noise: match &self.noise {
                NoiseConfig::Homoskedastic(v) => {
                    NoiseSpec::Homoskedastic(v.iter().map(|&x| real::<T>(x)).collect())
                }
                NoiseConfig::Heteroskedastic(rows) => {
                    if rows.len() != self.cohorts.len()
                        || rows.iter().any(|row| row.len() != self.t)
                    {
                        return Err(Error::BadConfig("heteroskedastic noise must be C x T".into()));
                    }
                    NoiseSpec::Heteroskedastic(DMatrix::from_fn(
                        rows.len(),
                        self.t,
                        |i, j| real::<T>(rows[i][j]),
                    ))
                }
            },
            cohort_probs: self.cohorts.iter().map(|c| real::<T>(c.prob)).collect(),
            pattern: MissingnessPattern::Custom { sets },
        };
        truth.validate()?;
        Ok(truth)
    }
}
