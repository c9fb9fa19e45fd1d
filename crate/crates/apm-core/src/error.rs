//! Error type shared by the estimation pipeline.

use thiserror::Error;

/// Errors produced by panel construction, estimation, and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input row or unparseable number during CSV ingestion.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// The same (unit, outcome) pair appeared more than once.
    #[error("duplicate cell for unit '{unit}', outcome '{outcome}'")]
    DuplicateCell { unit: String, outcome: String },
    /// Input contained no data rows.
    #[error("input contains no data rows")]
    EmptyInput,
    /// A non-finite value was encountered where a real number is required.
    #[error("non-finite value for unit '{unit}', outcome '{outcome}'")]
    NonFiniteValue { unit: String, outcome: String },
    /// Every cohort fell below the minimum size threshold.
    #[error("all cohorts dropped by min_cohort_size = {min_cohort_size}")]
    AllCohortsDropped { min_cohort_size: usize },
    /// The requested outcome is not observed for the cohort.
    #[error("outcome {outcome} is not observed for cohort {cohort}")]
    NotObserved { cohort: usize, outcome: usize },
    /// The requested factor rank is incompatible with the panel dimensions.
    #[error("invalid rank r = {r} for {t} outcomes")]
    BadRank { r: usize, t: usize },
    /// A cohort with no members was passed where members are required.
    #[error("cohort {cohort} is empty")]
    EmptyCohort { cohort: usize },
    /// All members of a cohort carry zero bootstrap weight.
    #[error("cohort {cohort} has zero total weight")]
    ZeroCohortWeight { cohort: usize },
    /// Weight vector failed validation.
    #[error("invalid weights: {0}")]
    BadWeights(String),
    /// Requested more factors than the cohort observes outcomes.
    #[error("rank r = {r} exceeds |T_c| = {observed} for cohort {cohort}")]
    RankExceedsObserved { cohort: usize, r: usize, observed: usize },
    /// The split-spectral estimator needs at least 2r + 1 observed outcomes.
    #[error("cohort {cohort} observes {observed} outcomes; split estimator needs >= {needed}")]
    TooFewOutcomes { cohort: usize, observed: usize, needed: usize },
    /// Matrices of inconsistent dimension were combined.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// The restriction of the factor basis to a cohort's observed outcomes is rank deficient.
    #[error("restricted basis has rank {rank} < r = {r}")]
    RankDeficientRestriction { rank: usize, r: usize },
    /// The restricted Gram matrix of the factor basis is numerically singular.
    #[error("singular restricted Gram matrix")]
    SingularGram,
    /// The target cohort cannot be identified from its graph component.
    #[error("target cohort {cohort} is not identified: {reason}")]
    UnidentifiedTarget { cohort: usize, reason: String },
    /// A treated-cell mean required by the dynamic-effects target is missing.
    #[error("missing treated mean for cohort {cohort}, outcome {outcome}")]
    MissingTreatedMean { cohort: usize, outcome: usize },
    /// The attribution-share denominator is numerically zero.
    #[error("degenerate attribution denominator {denominator}")]
    DegenerateDenominator { denominator: f64 },
    /// A user-supplied target function failed.
    #[error("target evaluation failed: {0}")]
    TargetEvaluation(String),
    /// Too many bootstrap replicates failed.
    #[error("{failed} of {total} bootstrap replicates failed (limit {limit})")]
    TooManyReplicateFailures { failed: usize, total: usize, limit: usize },
    /// Interquartile range of a replicate column is exactly zero.
    #[error("zero interquartile spread in bootstrap column")]
    ZeroSpread,
    /// The perturbation lies outside the neighborhood where the bound applies.
    #[error("perturbation norm {norm} exceeds window gap {gap}")]
    OutsideNeighborhood { norm: f64, gap: f64 },
    /// Eigen-window indices violate 1 <= s+1 <= s+r <= d.
    #[error("invalid eigen-window (s = {s}, r = {r}) for dimension {d}")]
    BadWindow { s: usize, r: usize, d: usize },
    /// A simulated cohort drew zero units.
    #[error("cohort {cohort} drew zero units (n = {n})")]
    DegenerateCohort { cohort: usize, n: usize },
    /// The two-way fixed effects design matrix is disconnected.
    #[error("two-way fixed effects design is disconnected")]
    DisconnectedDesign,
    /// Masking removed the information needed to identify the target.
    #[error("target (cohort {cohort}, outcome {outcome}) unidentified after masking")]
    UnidentifiedAfterMask { cohort: usize, outcome: usize },
    /// The influence-function oracle is only defined for homoskedastic noise.
    #[error("influence oracle requires homoskedastic noise")]
    HeteroskedasticTruth,
    /// Invalid simulation configuration.
    #[error("invalid simulation configuration: {0}")]
    BadConfig(String),
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used across the crate.
pub type Result<V> = std::result::Result<V, Error>;
