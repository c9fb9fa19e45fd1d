//! Long-format panel data with explicit outcome missingness.
//!
//! A [`Panel`] holds one row per unit and one column per outcome; cells that
//! were never observed are marked missing rather than carrying a sentinel
//! value. Units sharing the exact same set of observed outcomes form a
//! cohort, computed by [`cohortize`]. The CSV interchange format is long:
//! `unit_id,outcome_id,value`, with missingness encoded by row absence.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::mask_matrix;
use crate::scalar::Scalar;

/// Unit-by-outcome panel with explicit missingness.
///
/// Outcome columns are ordered lexicographically by outcome id; that order is
/// the canonical outcome index used everywhere downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<T: Scalar> {
    unit_ids: Vec<String>,
    outcome_ids: Vec<String>,
    values: DMatrix<T>,
    observed: Vec<bool>,
}

impl<T: Scalar> Panel<T> {
    /// Build a panel from (unit, outcome, value) cells.
    ///
    /// Units keep their order of first appearance; outcomes are sorted
    /// lexicographically. Duplicate (unit, outcome) pairs and non-finite
    /// values are rejected.
    pub fn from_cells(cells: &[(String, String, T)]) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut outcome_ids: Vec<String> = cells.iter().map(|c| c.1.clone()).collect();
        outcome_ids.sort();
        outcome_ids.dedup();
        let outcome_index: HashMap<&str, usize> = outcome_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();

        let mut unit_ids: Vec<String> = Vec::new();
        let mut unit_index: HashMap<String, usize> = HashMap::new();
        for (unit, _, _) in cells {
            if !unit_index.contains_key(unit) {
                unit_index.insert(unit.clone(), unit_ids.len());
                unit_ids.push(unit.clone());
            }
        }

        let n = unit_ids.len();
        let t = outcome_ids.len();
        let mut values = DMatrix::zeros(n, t);
        let mut observed = vec![false; n * t];
        for (unit, outcome, value) in cells {
            if !value.is_finite() {
                return Err(Error::NonFiniteValue { unit: unit.clone(), outcome: outcome.clone() });
            }
            let i = unit_index[unit];
            let j = outcome_index[outcome.as_str()];
            if observed[i * t + j] {
                return Err(Error::DuplicateCell { unit: unit.clone(), outcome: outcome.clone() });
            }
            observed[i * t + j] = true;
            values[(i, j)] = *value;
        }
        Ok(Panel { unit_ids, outcome_ids, values, observed })
    }

    /// Number of units (rows).
    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    /// Number of outcomes (columns), the panel's `T`.
    pub fn n_outcomes(&self) -> usize {
        self.outcome_ids.len()
    }

    /// Unit identifiers in row order.
    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Outcome identifiers in canonical (lexicographic) column order.
    pub fn outcome_ids(&self) -> &[String] {
        &self.outcome_ids
    }

    /// Whether cell (unit, outcome) is observed.
    #[inline]
    pub fn is_observed(&self, unit: usize, outcome: usize) -> bool {
        self.observed[unit * self.n_outcomes() + outcome]
    }

    /// Observed value, or `None` for a missing cell.
    #[inline]
    pub fn value(&self, unit: usize, outcome: usize) -> Option<T> {
        if self.is_observed(unit, outcome) {
            Some(self.values[(unit, outcome)])
        } else {
            None
        }
    }

    /// Sorted indices of the outcomes observed for a unit.
    pub fn observed_set(&self, unit: usize) -> Vec<usize> {
        (0..self.n_outcomes()).filter(|&t| self.is_observed(unit, t)).collect()
    }

    /// Unit row as a length-`T` vector with zeros in missing cells.
    pub fn masked_row(&self, unit: usize) -> DVector<T> {
        let t = self.n_outcomes();
        let mut out = DVector::zeros(t);
        for j in 0..t {
            if self.is_observed(unit, j) {
                out[j] = self.values[(unit, j)];
            }
        }
        out
    }

    /// Copy of the panel with `outcome` blanked for the given unit rows.
    pub(crate) fn with_column_masked(&self, rows: &[usize], outcome: usize) -> Self {
        let mut masked = self.clone();
        let t = self.n_outcomes();
        for &row in rows {
            masked.observed[row * t + outcome] = false;
            masked.values[(row, outcome)] = T::zero();
        }
        masked
    }

    /// Copy of the panel whose unit rows are replaced by other rows' values.
    ///
    /// `source[i]` names the row whose values populate row `i`. Every source
    /// row must share row `i`'s observed set; used by within-cohort
    /// resampling, which preserves cohort structure by construction.
    pub(crate) fn with_resampled_rows(&self, source: &[usize]) -> Self {
        assert_eq!(source.len(), self.n_units());
        let mut out = self.clone();
        let t = self.n_outcomes();
        for (dst, &src) in source.iter().enumerate() {
            debug_assert_eq!(
                self.observed[src * t..(src + 1) * t],
                self.observed[dst * t..(dst + 1) * t]
            );
            for j in 0..t {
                out.values[(dst, j)] = self.values[(src, j)];
            }
        }
        out
    }

    /// Serialize to long CSV (`unit_id,outcome_id,value`), one row per
    /// observed cell, unit-major. Values print in shortest round-trip form.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit_id", "outcome_id", "value"]).map_err(csv_io)?;
        for i in 0..self.n_units() {
            for j in 0..self.n_outcomes() {
                if self.is_observed(i, j) {
                    w.write_record([
                        self.unit_ids[i].as_str(),
                        self.outcome_ids[j].as_str(),
                        &format!("{}", self.values[(i, j)]),
                    ])
                    .map_err(csv_io)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Serialize to a long CSV string.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_long_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse { line: 0, message: e.to_string() })
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Parse { line: 0, message: e.to_string() }
}

/// Load a panel from long-format CSV with header `unit_id,outcome_id,value`.
pub fn load_long_csv<T: Scalar, P: AsRef<Path>>(path: P) -> Result<Panel<T>> {
    let file = std::fs::File::open(path)?;
    read_long_csv(file)
}

/// Load a panel from any long-format CSV reader.
pub fn read_long_csv<T: Scalar, R: Read>(reader: R) -> Result<Panel<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        let expected = ["unit_id", "outcome_id", "value"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header unit_id,outcome_id,value, got {:?}", headers),
            });
        }
    }
    let mut cells = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let raw = record[2].trim();
        let parsed: f64 = raw
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("bad number '{raw}'") })?;
        if !parsed.is_finite() {
            return Err(Error::Parse { line, message: format!("non-finite value '{raw}'") });
        }
        let value = T::from_f64(parsed)
            .ok_or_else(|| Error::Parse { line, message: format!("unrepresentable '{raw}'") })?;
        cells.push((record[0].to_string(), record[1].to_string(), value));
    }
    Panel::from_cells(&cells)
}

/// One cohort: the units sharing an observed-outcome set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cohort {
    /// Sorted observed outcome indices `T_c`.
    pub t_set: Vec<usize>,
    /// Panel row indices of the member units.
    pub members: Vec<usize>,
}

impl Cohort {
    /// Number of member units.
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Partition of panel units into cohorts by exact observed-outcome set.
///
/// Cohort order is deterministic: lexicographic by `T_c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortIndex {
    cohorts: Vec<Cohort>,
    n_outcomes: usize,
    n_units_panel: usize,
}

impl CohortIndex {
    /// Cohorts in lexicographic `T_c` order.
    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }

    /// Number of cohorts.
    pub fn n_cohorts(&self) -> usize {
        self.cohorts.len()
    }

    /// Number of outcomes in the underlying panel.
    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    /// Number of units in the underlying panel (including dropped ones).
    pub fn n_units_panel(&self) -> usize {
        self.n_units_panel
    }

    /// Total units retained across cohorts.
    pub fn n_units_retained(&self) -> usize {
        self.cohorts.iter().map(Cohort::size).sum()
    }

    /// The cohort's diagonal 0/1 mask matrix `E_c`.
    pub fn mask<T: Scalar>(&self, cohort: usize) -> DMatrix<T> {
        mask_matrix(self.n_outcomes, &self.cohorts[cohort].t_set)
    }

    /// Retain only the listed cohorts (used to drop sub-rank cohorts).
    pub fn restrict(&self, keep: &[usize]) -> CohortIndex {
        CohortIndex {
            cohorts: keep.iter().map(|&c| self.cohorts[c].clone()).collect(),
            n_outcomes: self.n_outcomes,
            n_units_panel: self.n_units_panel,
        }
    }

    /// Cohort index containing the given panel row, if retained.
    pub fn cohort_of_row(&self, row: usize) -> Option<usize> {
        self.cohorts.iter().position(|c| c.members.binary_search(&row).is_ok())
    }
}

/// Group units into cohorts by identical observed-outcome sets.
///
/// Cohorts smaller than `min_cohort_size` are dropped; the second return
/// value is the number of dropped units. Units with no observed cells
/// (possible after masking) are always dropped.
pub fn cohortize<T: Scalar>(
    panel: &Panel<T>,
    min_cohort_size: usize,
) -> Result<(CohortIndex, usize)> {
    assert!(min_cohort_size >= 1, "min_cohort_size must be at least 1");
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for i in 0..panel.n_units() {
        groups.entry(panel.observed_set(i)).or_default().push(i);
    }
    let mut cohorts = Vec::new();
    let mut dropped = 0usize;
    for (t_set, members) in groups {
        if t_set.is_empty() || members.len() < min_cohort_size {
            dropped += members.len();
        } else {
            cohorts.push(Cohort { t_set, members });
        }
    }
    if cohorts.is_empty() {
        return Err(Error::AllCohortsDropped { min_cohort_size });
    }
    Ok((
        CohortIndex {
            cohorts,
            n_outcomes: panel.n_outcomes(),
            n_units_panel: panel.n_units(),
        },
        dropped,
    ))
}

/// Outcome of masking one cohort's observed outcome for evaluation.
#[derive(Debug, Clone)]
pub struct MaskOutcome<T: Scalar> {
    /// Panel with the cohort's column blanked.
    pub panel: Panel<T>,
    /// Pre-mask sample mean of the removed cells (the evaluation truth).
    pub ground_truth: T,
    /// True when masking removed the cohort's only observed outcome.
    pub degenerate: bool,
}

/// Blank outcome `outcome` for every member of `cohort`, returning the masked
/// panel and the pre-mask sample mean of the removed cells.
pub fn mask_cell<T: Scalar>(
    panel: &Panel<T>,
    index: &CohortIndex,
    cohort: usize,
    outcome: usize,
) -> Result<MaskOutcome<T>> {
    let c = &index.cohorts()[cohort];
    if c.members.is_empty() {
        return Err(Error::EmptyCohort { cohort });
    }
    if !c.t_set.contains(&outcome) {
        return Err(Error::NotObserved { cohort, outcome });
    }
    let mut sum = T::zero();
    for &row in &c.members {
        sum += panel.value(row, outcome).expect("cohort member must observe T_c");
    }
    let truth = sum / T::from_usize(c.size()).unwrap();
    let masked = panel.with_column_masked(&c.members, outcome);
    Ok(MaskOutcome { panel: masked, ground_truth: truth, degenerate: c.t_set.len() == 1 })
}
