//! Exponential-weight bootstrap with simultaneous confidence intervals.
//!
//! Each replicate draws i.i.d. Exponential(1) variables, normalizes them to
//! a weight simplex, and re-runs the whole weighted estimation pipeline.
//! Standard errors come from the replicate interquartile range (more robust
//! to outlier replicates than the standard deviation), and the simultaneous
//! critical value is the empirical `1 - alpha` quantile of the max
//! standardized deviation across coordinates.
//!
//! Replicate `m` draws from an independent RNG stream derived from
//! `(seed, m)`, so results are identical under any parallel schedule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::{estimate_prepared, prepare_design, EstimatorConfig};
use crate::panel::Panel;
use crate::scalar::{real, Scalar};
use crate::targets::TargetSpec;

/// Interquartile range of the standard normal, hard-coded for
/// cross-platform determinism.
pub const NORMAL_IQR: f64 = 1.348979500;

/// Share of failed replicates tolerated before the bootstrap aborts.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// Draw a normalized Exponential(1) weight vector (a point on the simplex).
pub fn draw_weights<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    assert!(n >= 1, "weight vector needs at least one entry");
    let mut weights = Vec::with_capacity(n);
    let mut sum = T::zero();
    for _ in 0..n {
        let xi: f64 = Exp1.sample(rng);
        let w = real::<T>(xi);
        sum += w;
        weights.push(w);
    }
    for w in &mut weights {
        *w /= sum;
    }
    weights
}

/// RNG stream for replicate `m`: one seed, independent ChaCha streams.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate.wrapping_add(1));
    rng
}

/// Type-7 (linear interpolation) quantile of pre-sorted values.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    assert!(!sorted.is_empty());
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = real::<T>((m - 1) as f64) * p;
    let lo = h.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(m - 1);
    let hi_idx = (lo_idx + 1).min(m - 1);
    let frac = h - lo;
    sorted[lo_idx] + frac * (sorted[hi_idx] - sorted[lo_idx])
}

/// Interquartile-range standard error of a replicate column.
///
/// The 0.75/0.25 quantile spread divided by the standard-normal IQR; exact
/// zero spread is an error so the caller can apply its positivity floor.
pub fn iqr_se<T: Scalar>(column: &[T]) -> Result<T> {
    assert!(column.len() >= 2, "need at least two replicates");
    let mut sorted = column.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN replicate"));
    let q75 = quantile_sorted(&sorted, real::<T>(0.75));
    let q25 = quantile_sorted(&sorted, real::<T>(0.25));
    let spread = q75 - q25;
    if spread <= T::zero() {
        return Err(Error::ZeroSpread);
    }
    Ok(spread / real::<T>(NORMAL_IQR))
}

/// Simultaneous critical value: the empirical `1 - alpha` quantile of
/// `max_j |theta*_mj - center_j| / sigma_j`.
///
/// Centered mode subtracts the point estimate (the default); literal mode
/// uses the replicate magnitude as printed in the defining display.
pub fn critical_value<T: Scalar>(
    replicates: &DMatrix<T>,
    theta_hat: &DVector<T>,
    sigma: &DVector<T>,
    alpha: T,
    centered: bool,
) -> T {
    let m = replicates.nrows();
    let p = replicates.ncols();
    assert!(m >= 1 && p >= 1);
    assert!(sigma.iter().all(|&s| s > T::zero()), "standard errors must be positive");
    let mut stats = Vec::with_capacity(m);
    for i in 0..m {
        let mut z = T::zero();
        for j in 0..p {
            let center = if centered { theta_hat[j] } else { T::zero() };
            let dev = (replicates[(i, j)] - center).abs() / sigma[j];
            z = z.max(dev);
        }
        stats.push(z);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("NaN sup statistic"));
    quantile_sorted(&stats, T::one() - alpha)
}

/// Bootstrap settings beyond the estimator configuration.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    /// Number of replicates (at least 2; 500 or more recommended).
    pub replicates: usize,
    /// Simultaneous miscoverage level in (0, 1).
    pub alpha: f64,
    /// Seed for the replicate weight streams.
    pub seed: u64,
    /// Use the centered sup statistic (default true).
    pub centered: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 500, alpha: 0.05, seed: 0, centered: true }
    }
}

/// Point estimates, replicates, and simultaneous intervals.
#[derive(Debug, Clone)]
pub struct BootstrapResult<T: Scalar> {
    /// Point estimate from the unweighted pipeline.
    pub theta_hat: DVector<T>,
    /// Successful replicate draws (rows).
    pub replicates: DMatrix<T>,
    /// Interquartile-range standard errors (after the positivity floor).
    pub sigma_hat: DVector<T>,
    /// Simultaneous critical value.
    pub q_crit: T,
    /// Intervals `theta_j -/+ q * sigma_j`.
    pub intervals: Vec<(T, T)>,
    /// Miscoverage level.
    pub alpha: T,
    /// Requested replicate count.
    pub m_requested: usize,
    /// Replicates whose pipeline failed (dropped).
    pub failed_replicates: usize,
    /// Seed used for the weight streams.
    pub seed: u64,
    /// Whether the centered sup statistic was used.
    pub centered: bool,
    /// Coordinates whose replicate spread collapsed to zero (intervals
    /// degenerate to the point estimate up to the positivity floor).
    pub degenerate_coords: Vec<usize>,
    /// Coordinate labels from the target.
    pub labels: Vec<String>,
}

/// Run the full weighted-pipeline bootstrap for a target parameter.
pub fn bootstrap<T: Scalar>(
    panel: &Panel<T>,
    r: usize,
    target: &TargetSpec<T>,
    est_config: &EstimatorConfig,
    config: &BootstrapConfig,
) -> Result<BootstrapResult<T>> {
    assert!(config.replicates >= 2, "need at least two bootstrap replicates");
    assert!(config.alpha > 0.0 && config.alpha < 1.0, "alpha must lie in (0, 1)");
    let design = prepare_design(panel, r, est_config)?;
    let point = estimate_prepared(panel, &design, r, est_config, None)?;
    let theta_hat = target.evaluate(&point.means, &design.index)?;
    let p = theta_hat.len();
    let n = panel.n_units();

    let draws: Vec<Option<DVector<T>>> = (0..config.replicates)
        .into_par_iter()
        .map(|m| {
            let mut rng = replicate_rng(config.seed, m as u64);
            let weights = draw_weights::<T, _>(n, &mut rng);
            let est = estimate_prepared(panel, &design, r, est_config, Some(&weights)).ok()?;
            target.evaluate(&est.means, &design.index).ok()
        })
        .collect();

    let successes: Vec<&DVector<T>> = draws.iter().flatten().collect();
    let failed = config.replicates - successes.len();
    let limit = (config.replicates as f64 * MAX_FAILURE_SHARE).floor() as usize;
    if failed > limit {
        return Err(Error::TooManyReplicateFailures {
            failed,
            total: config.replicates,
            limit,
        });
    }
    let mut replicates = DMatrix::zeros(successes.len(), p);
    for (i, draw) in successes.iter().enumerate() {
        replicates.set_row(i, &draw.transpose());
    }

    let mut sigma_hat = DVector::zeros(p);
    let mut degenerate = Vec::new();
    for j in 0..p {
        let column: Vec<T> = (0..replicates.nrows()).map(|i| replicates[(i, j)]).collect();
        let se = match iqr_se(&column) {
            Ok(se) => se,
            Err(Error::ZeroSpread) => {
                degenerate.push(j);
                T::zero()
            }
            Err(e) => return Err(e),
        };
        sigma_hat[j] = se.max(positivity_floor(theta_hat[j]));
    }

    let q_crit = critical_value(
        &replicates,
        &theta_hat,
        &sigma_hat,
        real::<T>(config.alpha),
        config.centered,
    );
    let intervals = (0..p)
        .map(|j| (theta_hat[j] - q_crit * sigma_hat[j], theta_hat[j] + q_crit * sigma_hat[j]))
        .collect();
    Ok(BootstrapResult {
        theta_hat,
        replicates,
        sigma_hat,
        q_crit,
        intervals,
        alpha: real::<T>(config.alpha),
        m_requested: config.replicates,
        failed_replicates: failed,
        seed: config.seed,
        centered: config.centered,
        degenerate_coords: degenerate,
        labels: target.labels(),
    })
}

/// Positivity floor for standard errors: scale-relative plus a tiny absolute
/// term so degenerate coordinates still produce valid (collapsed) intervals.
fn positivity_floor<T: Scalar>(theta: T) -> T {
    let mut tiny = real::<T>(1e-300);
    if tiny <= T::zero() {
        // f32 underflows 1e-300; fall back to a representable tiny value.
        tiny = real::<T>(1e-37);
    }
    real::<T>(1e-12) * theta.abs() + tiny
}
