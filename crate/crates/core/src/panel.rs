//! Long-format panel model shared by every estimator.
//!
//! A [`CohortPanel`] is an immutable, validated unit-by-year panel with a
//! staggered absorbing binary treatment. Rows are stored column-wise and
//! sorted by (unit id, year); each unit carries its first treatment year
//! (`None` for never-treated units).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Year = i32;

/// Dense index of a unit inside a [`CohortPanel`] (position in sorted id order).
pub type UnitIx = usize;

const NO_ROW: u32 = u32::MAX;

/// Scale of the outcome column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Outcomes must be exactly 0 or 1 (the smoking indicator).
    #[default]
    Binary,
    /// Any finite value; used by the linear simulation designs.
    Continuous,
}

/// One unit-year row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub unit_id: String,
    pub region_id: String,
    pub year: Year,
    /// `None` encodes a missing outcome (e.g. an interval-censored year).
    pub outcome: Option<f64>,
    pub treated: bool,
    pub age: u32,
    /// 0 = male, 1 = female.
    pub gender: u8,
    /// First treatment year of the unit when known from outside the row
    /// indicators (the adoption year of its region). `None` means "derive it
    /// from `treated`".
    pub cohort: Option<Year>,
    pub extra_covariates: BTreeMap<String, f64>,
}

/// Borrowed row handed to [`PanelBuilder::push`].
#[derive(Debug, Clone, Copy)]
pub struct RowInput<'a> {
    pub unit: &'a str,
    pub region: &'a str,
    pub year: Year,
    pub outcome: Option<f64>,
    pub treated: bool,
    pub age: u32,
    pub gender: u8,
    pub cohort: Option<Year>,
    /// Values aligned with the builder's covariate names.
    pub covariates: &'a [f64],
}

/// Reference to a covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Covariate {
    Age,
    Gender,
    Extra(usize),
}

/// Validated panel with a staggered absorbing treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortPanel {
    outcome_kind: OutcomeKind,
    unit_ids: Vec<String>,
    unit_lookup: HashMap<String, UnitIx>,
    first_treated: Vec<Option<Year>>,
    unit_start: Vec<usize>,
    region_ids: Vec<String>,
    covariate_names: Vec<String>,
    year: Vec<Year>,
    region: Vec<u32>,
    outcome: Vec<Option<f64>>,
    treated: Vec<bool>,
    age: Vec<u32>,
    gender: Vec<u8>,
    extras: Vec<Vec<f64>>,
    year_range: (Year, Year),
    grid: Vec<u32>,
}

struct RawRow {
    unit: u32,
    region: u32,
    year: Year,
    outcome: Option<f64>,
    treated: bool,
    age: u32,
    gender: u8,
    cohort: Option<Year>,
}

/// Incremental constructor; [`PanelBuilder::finish`] runs full validation.
pub struct PanelBuilder {
    covariate_names: Vec<String>,
    unit_ids: Vec<String>,
    unit_lookup: HashMap<String, u32>,
    region_ids: Vec<String>,
    region_lookup: HashMap<String, u32>,
    rows: Vec<RawRow>,
    extras: Vec<f64>,
}

impl PanelBuilder {
    pub fn new(covariate_names: Vec<String>) -> Self {
        Self {
            covariate_names,
            unit_ids: Vec::new(),
            unit_lookup: HashMap::new(),
            region_ids: Vec::new(),
            region_lookup: HashMap::new(),
            rows: Vec::new(),
            extras: Vec::new(),
        }
    }

    pub fn with_capacity(covariate_names: Vec<String>, rows: usize) -> Self {
        let mut b = Self::new(covariate_names);
        b.rows.reserve(rows);
        b.extras.reserve(rows * b.covariate_names.len());
        b
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: RowInput<'_>) {
        assert_eq!(
            row.covariates.len(),
            self.covariate_names.len(),
            "covariate vector does not match builder columns"
        );
        let unit = intern(&mut self.unit_ids, &mut self.unit_lookup, row.unit);
        let region = intern(&mut self.region_ids, &mut self.region_lookup, row.region);
        self.rows.push(RawRow {
            unit,
            region,
            year: row.year,
            outcome: row.outcome,
            treated: row.treated,
            age: row.age,
            gender: row.gender,
            cohort: row.cohort,
        });
        self.extras.extend_from_slice(row.covariates);
    }

    pub fn finish(self, outcome_kind: OutcomeKind) -> Result<CohortPanel> {
        if self.rows.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let k = self.covariate_names.len();

        let unit_rank = sorted_ranks(&self.unit_ids);
        let region_rank = sorted_ranks(&self.region_ids);
        let mut unit_ids = vec![String::new(); self.unit_ids.len()];
        for (old, name) in self.unit_ids.into_iter().enumerate() {
            unit_ids[unit_rank[old] as usize] = name;
        }
        let mut region_ids = vec![String::new(); self.region_ids.len()];
        for (old, name) in self.region_ids.into_iter().enumerate() {
            region_ids[region_rank[old] as usize] = name;
        }

        let mut order: Vec<u32> = (0..self.rows.len() as u32).collect();
        order.sort_unstable_by_key(|&r| {
            let row = &self.rows[r as usize];
            (unit_rank[row.unit as usize], row.year)
        });

        let n = self.rows.len();
        let mut year = Vec::with_capacity(n);
        let mut region = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        let mut treated = Vec::with_capacity(n);
        let mut age = Vec::with_capacity(n);
        let mut gender = Vec::with_capacity(n);
        let mut cohort_labels = Vec::with_capacity(n);
        let mut unit_of_row = Vec::with_capacity(n);
        let mut extras = vec![Vec::with_capacity(n); k];
        for &r in &order {
            let row = &self.rows[r as usize];
            unit_of_row.push(unit_rank[row.unit as usize]);
            year.push(row.year);
            region.push(region_rank[row.region as usize]);
            outcome.push(row.outcome);
            treated.push(row.treated);
            age.push(row.age);
            gender.push(row.gender);
            cohort_labels.push(row.cohort);
            for (j, col) in extras.iter_mut().enumerate() {
                col.push(self.extras[r as usize * k + j]);
            }
        }

        let n_units = unit_ids.len();
        let mut unit_start = Vec::with_capacity(n_units + 1);
        unit_start.push(0);
        for i in 1..n {
            if unit_of_row[i] != unit_of_row[i - 1] {
                unit_start.push(i);
            }
        }
        unit_start.push(n);
        debug_assert_eq!(unit_start.len(), n_units + 1);

        let t_min = *year.iter().min().expect("non-empty");
        let t_max = *year.iter().max().expect("non-empty");

        let mut first_treated = Vec::with_capacity(n_units);
        for u in 0..n_units {
            let rows = unit_start[u]..unit_start[u + 1];
            let name = &unit_ids[u];
            let mut derived: Option<Year> = None;
            let label = cohort_labels[rows.start];
            for r in rows.clone() {
                if r > rows.start && year[r] == year[r - 1] {
                    return Err(Error::DuplicateKey {
                        unit: name.clone(),
                        year: year[r],
                    });
                }
                if r > rows.start && treated[r - 1] && !treated[r] {
                    return Err(Error::NonAbsorbing {
                        unit: name.clone(),
                        year: year[r],
                    });
                }
                if treated[r] && derived.is_none() {
                    derived = Some(year[r]);
                }
                if cohort_labels[r] != label {
                    return Err(Error::InconsistentCohort {
                        unit: name.clone(),
                        reason: "rows disagree on the cohort label".into(),
                    });
                }
                match outcome[r] {
                    Some(v) if !v.is_finite() => {
                        return Err(Error::NonFinite {
                            unit: name.clone(),
                            year: year[r],
                            column: "outcome".into(),
                        })
                    }
                    Some(v) if outcome_kind == OutcomeKind::Binary && v != 0.0 && v != 1.0 => {
                        return Err(Error::NonBinaryOutcome {
                            unit: name.clone(),
                            year: year[r],
                            value: v,
                        })
                    }
                    _ => {}
                }
                for (j, col) in extras.iter().enumerate() {
                    if !col[r].is_finite() {
                        return Err(Error::NonFinite {
                            unit: name.clone(),
                            year: year[r],
                            column: self.covariate_names[j].clone(),
                        });
                    }
                }
            }
            let g = match label {
                Some(g) => {
                    if let Some(r) = rows.clone().find(|&r| treated[r] != (year[r] >= g)) {
                        return Err(Error::InconsistentCohort {
                            unit: name.clone(),
                            reason: format!(
                                "cohort label {g} contradicts treated={} in {}",
                                treated[r] as u8, year[r]
                            ),
                        });
                    }
                    Some(g)
                }
                None => derived,
            };
            if let Some(g) = g {
                if g <= t_min {
                    return Err(Error::TreatedInInitialPeriod {
                        unit: name.clone(),
                        year: t_min,
                    });
                }
            }
            first_treated.push(g);
        }

        let n_years = (t_max - t_min + 1) as usize;
        let mut grid = vec![NO_ROW; n_units * n_years];
        for u in 0..n_units {
            for r in unit_start[u]..unit_start[u + 1] {
                grid[u * n_years + (year[r] - t_min) as usize] = r as u32;
            }
        }

        let unit_lookup = unit_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();

        Ok(CohortPanel {
            outcome_kind,
            unit_ids,
            unit_lookup,
            first_treated,
            unit_start,
            region_ids,
            covariate_names: self.covariate_names,
            year,
            region,
            outcome,
            treated,
            age,
            gender,
            extras,
            year_range: (t_min, t_max),
            grid,
        })
    }
}

fn intern(names: &mut Vec<String>, lookup: &mut HashMap<String, u32>, name: &str) -> u32 {
    if let Some(&i) = lookup.get(name) {
        return i;
    }
    let i = names.len() as u32;
    names.push(name.to_owned());
    lookup.insert(name.to_owned(), i);
    i
}

fn sorted_ranks(names: &[String]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..names.len() as u32).collect();
    idx.sort_unstable_by(|&a, &b| names[a as usize].cmp(&names[b as usize]));
    let mut rank = vec![0u32; names.len()];
    for (pos, &i) in idx.iter().enumerate() {
        rank[i as usize] = pos as u32;
    }
    rank
}

/// Validates binary-outcome observations into a [`CohortPanel`].
pub fn validate_panel(observations: Vec<PanelObservation>) -> Result<CohortPanel> {
    validate_panel_with(observations, OutcomeKind::Binary)
}

pub fn validate_panel_with(
    observations: Vec<PanelObservation>,
    outcome_kind: OutcomeKind,
) -> Result<CohortPanel> {
    let first = observations.first().ok_or(Error::EmptyPanel)?;
    let names: Vec<String> = first.extra_covariates.keys().cloned().collect();
    let mut builder = PanelBuilder::with_capacity(names.clone(), observations.len());
    let mut values = Vec::with_capacity(names.len());
    for obs in &observations {
        if obs.extra_covariates.len() != names.len()
            || !obs.extra_covariates.keys().zip(&names).all(|(a, b)| a == b)
        {
            return Err(Error::InconsistentCovariates {
                unit: obs.unit_id.clone(),
                expected: names,
                found: obs.extra_covariates.keys().cloned().collect(),
            });
        }
        values.clear();
        values.extend(obs.extra_covariates.values().copied());
        builder.push(RowInput {
            unit: &obs.unit_id,
            region: &obs.region_id,
            year: obs.year,
            outcome: obs.outcome,
            treated: obs.treated,
            age: obs.age,
            gender: obs.gender,
            cohort: obs.cohort,
            covariates: &values,
        });
    }
    builder.finish(outcome_kind)
}

impl CohortPanel {
    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.year.len()
    }

    pub fn year_range(&self) -> (Year, Year) {
        self.year_range
    }

    pub fn n_years(&self) -> usize {
        (self.year_range.1 - self.year_range.0 + 1) as usize
    }

    pub fn unit_id(&self, unit: UnitIx) -> &str {
        &self.unit_ids[unit]
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_index(&self, unit_id: &str) -> Option<UnitIx> {
        self.unit_lookup.get(unit_id).copied()
    }

    /// First treatment year of a unit; `None` for never-treated units.
    pub fn first_treated(&self, unit: UnitIx) -> Option<Year> {
        self.first_treated[unit]
    }

    pub fn first_treated_map(&self) -> BTreeMap<&str, Option<Year>> {
        self.unit_ids
            .iter()
            .map(String::as_str)
            .zip(self.first_treated.iter().copied())
            .collect()
    }

    pub fn rows(&self, unit: UnitIx) -> Range<usize> {
        self.unit_start[unit]..self.unit_start[unit + 1]
    }

    /// Row of `unit` in `year`, if observed.
    pub fn row_at(&self, unit: UnitIx, year: Year) -> Option<usize> {
        let (t_min, t_max) = self.year_range;
        if year < t_min || year > t_max {
            return None;
        }
        let r = self.grid[unit * self.n_years() + (year - t_min) as usize];
        (r != NO_ROW).then_some(r as usize)
    }

    /// Outcome of `unit` in `year` when the row exists and is not missing.
    pub fn outcome_at(&self, unit: UnitIx, year: Year) -> Option<f64> {
        self.row_at(unit, year).and_then(|r| self.outcome[r])
    }

    pub fn year(&self, row: usize) -> Year {
        self.year[row]
    }

    pub fn outcome(&self, row: usize) -> Option<f64> {
        self.outcome[row]
    }

    pub fn treated(&self, row: usize) -> bool {
        self.treated[row]
    }

    pub fn age(&self, row: usize) -> u32 {
        self.age[row]
    }

    pub fn gender(&self, row: usize) -> u8 {
        self.gender[row]
    }

    pub fn region_id(&self, row: usize) -> &str {
        &self.region_ids[self.region[row] as usize]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Resolves a covariate name; `age` and `gender` are built in.
    pub fn covariate(&self, name: &str) -> Result<Covariate> {
        match name {
            "age" => Ok(Covariate::Age),
            "gender" => Ok(Covariate::Gender),
            _ => self
                .covariate_names
                .iter()
                .position(|c| c == name)
                .map(Covariate::Extra)
                .ok_or_else(|| Error::UnknownCovariate(name.to_owned())),
        }
    }

    pub fn value(&self, row: usize, covariate: Covariate) -> f64 {
        match covariate {
            Covariate::Age => self.age[row] as f64,
            Covariate::Gender => self.gender[row] as f64,
            Covariate::Extra(j) => self.extras[j][row],
        }
    }

    pub fn observation(&self, row: usize) -> PanelObservation {
        let unit = self.unit_of_row(row);
        PanelObservation {
            unit_id: self.unit_ids[unit].clone(),
            region_id: self.region_id(row).to_owned(),
            year: self.year[row],
            outcome: self.outcome[row],
            treated: self.treated[row],
            age: self.age[row],
            gender: self.gender[row],
            cohort: self.first_treated[unit],
            extra_covariates: self
                .covariate_names
                .iter()
                .zip(&self.extras)
                .map(|(n, col)| (n.clone(), col[row]))
                .collect(),
        }
    }

    pub fn to_observations(&self) -> Vec<PanelObservation> {
        (0..self.n_rows()).map(|r| self.observation(r)).collect()
    }

    pub fn unit_of_row(&self, row: usize) -> UnitIx {
        self.unit_start.partition_point(|&s| s <= row) - 1
    }

    /// `t - g` for units with a first-treatment year, `None` otherwise.
    pub fn event_time(&self, unit_id: &str, year: Year) -> Result<Option<i32>> {
        let u = self
            .unit_index(unit_id)
            .ok_or_else(|| Error::UnknownUnit(unit_id.to_owned()))?;
        Ok(self.first_treated[u].map(|g| year - g))
    }

    /// Copies every row of `unit` into `builder` under a new unit id.
    pub fn copy_unit_into(&self, unit: UnitIx, new_id: &str, builder: &mut PanelBuilder) {
        let mut covs = vec![0.0; self.covariate_names.len()];
        for r in self.rows(unit) {
            for (j, col) in self.extras.iter().enumerate() {
                covs[j] = col[r];
            }
            builder.push(RowInput {
                unit: new_id,
                region: self.region_id(r),
                year: self.year[r],
                outcome: self.outcome[r],
                treated: self.treated[r],
                age: self.age[r],
                gender: self.gender[r],
                cohort: self.first_treated[unit],
                covariates: &covs,
            });
        }
    }

    /// Panel made of the given units, in draw order; repeated draws become
    /// distinct units named `<draw index>:<original id>`.
    pub fn resample_units(&self, draws: &[UnitIx]) -> Result<CohortPanel> {
        let rows: usize = draws.iter().map(|&u| self.rows(u).len()).sum();
        let mut builder = PanelBuilder::with_capacity(self.covariate_names.clone(), rows);
        let width = draws.len().to_string().len();
        for (k, &u) in draws.iter().enumerate() {
            let id = format!("{k:0width$}:{}", self.unit_ids[u]);
            self.copy_unit_into(u, &id, &mut builder);
        }
        builder.finish(self.outcome_kind)
    }

    /// Keeps the rows for which `keep` holds. Units keep their cohort.
    pub fn filter_rows(&self, mut keep: impl FnMut(&CohortPanel, usize) -> bool) -> Result<CohortPanel> {
        let mut builder = PanelBuilder::with_capacity(self.covariate_names.clone(), self.n_rows());
        let mut covs = vec![0.0; self.covariate_names.len()];
        for u in 0..self.n_units() {
            for r in self.rows(u) {
                if !keep(self, r) {
                    continue;
                }
                for (j, col) in self.extras.iter().enumerate() {
                    covs[j] = col[r];
                }
                builder.push(RowInput {
                    unit: &self.unit_ids[u],
                    region: self.region_id(r),
                    year: self.year[r],
                    outcome: self.outcome[r],
                    treated: self.treated[r],
                    age: self.age[r],
                    gender: self.gender[r],
                    cohort: self.first_treated[u],
                    covariates: &covs,
                });
            }
        }
        builder.finish(self.outcome_kind)
    }
}

/// `t - g` for the named unit, `None` when it is never treated.
pub fn event_time(panel: &CohortPanel, unit_id: &str, year: Year) -> Result<Option<i32>> {
    panel.event_time(unit_id, year)
}

/// Units grouped by first treatment year.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortIndex {
    /// Distinct first-treatment years, ascending.
    pub groups: Vec<Year>,
    pub members: BTreeMap<Year, Vec<UnitIx>>,
    pub never_treated: Vec<UnitIx>,
    pub year_range: (Year, Year),
}

impl CohortIndex {
    pub fn cohort_size(&self, g: Year) -> usize {
        self.members.get(&g).map_or(0, Vec::len)
    }

    pub fn n_treated_units(&self) -> usize {
        self.members.values().map(Vec::len).sum()
    }

    pub fn export(&self, panel: &CohortPanel) -> CohortIndexExport {
        let names = |units: &[UnitIx]| -> Vec<String> {
            units.iter().map(|&u| panel.unit_id(u).to_owned()).collect()
        };
        CohortIndexExport {
            year_range: self.year_range,
            groups: self.groups.clone(),
            members: self.members.iter().map(|(g, m)| (*g, names(m))).collect(),
            never_treated: names(&self.never_treated),
        }
    }
}

/// JSON shape of a [`CohortIndex`] with unit ids resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortIndexExport {
    pub year_range: (Year, Year),
    pub groups: Vec<Year>,
    pub members: BTreeMap<Year, Vec<String>>,
    pub never_treated: Vec<String>,
}

pub fn build_cohort_index(panel: &CohortPanel) -> CohortIndex {
    let mut members: BTreeMap<Year, Vec<UnitIx>> = BTreeMap::new();
    let mut never_treated = Vec::new();
    for u in 0..panel.n_units() {
        match panel.first_treated(u) {
            Some(g) => members.entry(g).or_default().push(u),
            None => never_treated.push(u),
        }
    }
    let groups = members.keys().copied().collect::<BTreeSet<_>>().into_iter().collect();
    CohortIndex {
        groups,
        members,
        never_treated,
        year_range: panel.year_range(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(unit: &str, year: Year, treated: bool, outcome: Option<f64>) -> PanelObservation {
        PanelObservation {
            unit_id: unit.into(),
            region_id: "R".into(),
            year,
            outcome,
            treated,
            age: 30,
            gender: 0,
            cohort: None,
            extra_covariates: BTreeMap::new(),
        }
    }

    fn series(unit: &str, start: Year, treated: &[u8]) -> Vec<PanelObservation> {
        treated
            .iter()
            .enumerate()
            .map(|(k, &d)| obs(unit, start + k as Year, d == 1, Some(0.0)))
            .collect()
    }

    #[test]
    fn first_treatment_year_is_derived() {
        let mut rows = series("A", 2005, &[0, 0, 1, 1]);
        rows.extend(series("C", 2005, &[0, 0, 0, 0]));
        let panel = validate_panel(rows).unwrap();
        let a = panel.unit_index("A").unwrap();
        let c = panel.unit_index("C").unwrap();
        assert_eq!(panel.first_treated(a), Some(2007));
        assert_eq!(panel.first_treated(c), None);
    }

    #[test]
    fn treatment_reversal_is_rejected() {
        let mut rows = series("A", 2005, &[0, 0, 0]);
        rows.extend(series("B", 2005, &[0, 1, 0]));
        assert!(matches!(
            validate_panel(rows),
            Err(Error::NonAbsorbing { unit, year: 2007 }) if unit == "B"
        ));
    }

    #[test]
    fn duplicate_unit_year_is_rejected() {
        let mut rows = series("A", 2005, &[0, 0]);
        rows.push(obs("A", 2006, false, Some(1.0)));
        assert!(matches!(validate_panel(rows), Err(Error::DuplicateKey { year: 2006, .. })));
    }

    #[test]
    fn binary_outcome_enforced() {
        let rows = vec![obs("A", 2005, false, Some(0.5))];
        assert!(matches!(validate_panel(rows.clone()), Err(Error::NonBinaryOutcome { .. })));
        assert!(validate_panel_with(rows, OutcomeKind::Continuous).is_ok());
    }

    #[test]
    fn missing_outcomes_are_allowed() {
        let rows = vec![obs("A", 2005, false, None), obs("A", 2006, false, Some(1.0))];
        let panel = validate_panel(rows).unwrap();
        assert_eq!(panel.outcome_at(0, 2005), None);
        assert_eq!(panel.outcome_at(0, 2006), Some(1.0));
    }

    #[test]
    fn empty_panel_is_rejected() {
        assert!(matches!(validate_panel(vec![]), Err(Error::EmptyPanel)));
    }

    #[test]
    fn treated_in_initial_period_is_rejected() {
        let mut rows = series("A", 2005, &[1, 1]);
        rows.extend(series("B", 2005, &[0, 0]));
        assert!(matches!(validate_panel(rows), Err(Error::TreatedInInitialPeriod { .. })));
    }

    #[test]
    fn cohort_label_covers_late_entrants() {
        // unit enters after its region adopted; the label keeps the true g
        let mut rows = series("A", 2005, &[0, 0, 0, 0]);
        let mut late = series("B", 2007, &[1, 1]);
        for r in &mut late {
            r.cohort = Some(2006);
        }
        rows.extend(late);
        let panel = validate_panel(rows).unwrap();
        assert_eq!(panel.first_treated(panel.unit_index("B").unwrap()), Some(2006));

        let mut bad = series("C", 2005, &[0, 0, 1]);
        for r in &mut bad {
            r.cohort = Some(2006);
        }
        assert!(matches!(validate_panel(bad), Err(Error::InconsistentCohort { .. })));
    }

    #[test]
    fn inconsistent_covariate_sets_are_rejected() {
        let mut a = obs("A", 2005, false, Some(0.0));
        a.extra_covariates.insert("sales_ban".into(), 0.0);
        let b = obs("A", 2006, false, Some(0.0));
        assert!(matches!(
            validate_panel(vec![a, b]),
            Err(Error::InconsistentCovariates { .. })
        ));
    }

    #[test]
    fn cohort_index_partitions_units() {
        let mut rows = Vec::new();
        rows.extend(series("a", 2005, &[0, 0, 1, 1]));
        rows.extend(series("b", 2005, &[0, 0, 1, 1]));
        rows.extend(series("c", 2005, &[0, 0, 0, 1]));
        rows.extend(series("d", 2005, &[0, 0, 0, 0]));
        let panel = validate_panel(rows).unwrap();
        let index = build_cohort_index(&panel);
        assert_eq!(index.groups, vec![2007, 2008]);
        assert_eq!(index.never_treated.len(), 1);
        assert_eq!(index.cohort_size(2007), 2);
        let all: usize = index.members.values().map(Vec::len).sum::<usize>() + index.never_treated.len();
        assert_eq!(all, panel.n_units());
    }

    #[test]
    fn all_never_treated_gives_no_groups() {
        let mut rows = series("a", 2005, &[0, 0]);
        rows.extend(series("b", 2005, &[0, 0]));
        let index = build_cohort_index(&validate_panel(rows).unwrap());
        assert!(index.groups.is_empty());
        assert_eq!(index.never_treated.len(), 2);
    }

    #[test]
    fn event_time_examples() {
        let mut rows = series("A", 2005, &[0, 0, 1, 1]);
        rows.extend(series("C", 2005, &[0, 0, 0, 0]));
        let panel = validate_panel(rows).unwrap();
        assert_eq!(event_time(&panel, "A", 2007).unwrap(), Some(0));
        assert_eq!(event_time(&panel, "A", 2005).unwrap(), Some(-2));
        assert_eq!(event_time(&panel, "C", 2007).unwrap(), None);
        assert!(matches!(event_time(&panel, "Z", 2007), Err(Error::UnknownUnit(_))));
    }

    #[test]
    fn revalidation_is_idempotent() {
        let mut rows = series("b", 2005, &[0, 1, 1]);
        rows.extend(series("a", 2004, &[0, 0, 0, 0]));
        for r in &mut rows {
            r.extra_covariates.insert("sales_ban".into(), (r.year > 2005) as u8 as f64);
        }
        let panel = validate_panel(rows).unwrap();
        let again = validate_panel(panel.to_observations()).unwrap();
        assert_eq!(panel, again);
        assert_eq!(build_cohort_index(&panel), build_cohort_index(&again));
    }

    #[test]
    fn resample_keeps_duplicates_distinct() {
        let mut rows = series("a", 2005, &[0, 1]);
        rows.extend(series("b", 2005, &[0, 0]));
        let panel = validate_panel(rows).unwrap();
        let boot = panel.resample_units(&[0, 0, 1]).unwrap();
        assert_eq!(boot.n_units(), 3);
        assert_eq!(boot.unit_id(0), "0:a");
        assert_eq!(boot.first_treated(1), Some(2006));
        assert_eq!(boot.first_treated(2), None);
    }
}
