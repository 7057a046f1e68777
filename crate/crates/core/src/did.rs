//! Doubly robust group-time difference-in-differences.
//!
//! For each cohort `g` and year `t` the estimator contrasts the outcome
//! change `Y_t − Y_b` of cohort members with that of a comparison group,
//! combining a logistic propensity score with a linear outcome regression
//! fitted on the comparison units. Either model being correctly specified is
//! enough for consistency.

use std::fmt;

use log::{debug, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{influence_se, ClusterScheme};
use crate::panel::{CohortIndex, CohortPanel, Covariate, UnitIx, Year};
use crate::regression::{logistic_irls, spd_factor, Design, LOGISTIC_MAX_ITER, LOGISTIC_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlGroup {
    #[default]
    NotYetTreated,
    NeverTreated,
}

/// Base period rule. Post-treatment cells always compare against `g − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasePeriod {
    /// Pre-treatment cells use short differences `Y_t − Y_{t−1}`.
    #[default]
    VaryingPre,
    /// Every cell compares against `g − 1`; the cell `t = g − 1` is the
    /// reference and is not estimated.
    #[serde(rename = "anchor_g_minus_1")]
    AnchorGMinus1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DidConfig {
    pub control_group: ControlGroup,
    pub covariates: Vec<String>,
    pub interact_covariates: bool,
    pub base_period: BasePeriod,
    /// Propensity scores at or above this bound abort the cell.
    pub propensity_trim: f64,
    /// Inclusive event-time window of emitted cells.
    pub window: (i32, i32),
}

impl Default for DidConfig {
    fn default() -> Self {
        Self {
            control_group: ControlGroup::NotYetTreated,
            covariates: Vec::new(),
            interact_covariates: false,
            base_period: BasePeriod::VaryingPre,
            propensity_trim: 0.995,
            window: (-10, 5),
        }
    }
}

impl DidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.propensity_trim > 0.0 && self.propensity_trim < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "propensity_trim must lie in (0, 1), got {}",
                self.propensity_trim
            )));
        }
        if self.window.0 > self.window.1 {
            return Err(Error::InvalidConfig(format!("empty event window {:?}", self.window)));
        }
        Ok(())
    }
}

/// Base year of cell `(g, t)` under `rule`.
pub fn base_period(g: Year, t: Year, rule: BasePeriod) -> Year {
    match rule {
        BasePeriod::VaryingPre if t < g => t - 1,
        _ => g - 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTimeEffect {
    pub g: Year,
    pub t: Year,
    pub base: Year,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub n_treated: usize,
    pub n_control: usize,
    /// Covariate columns dropped because they were constant among the
    /// comparison units.
    pub dropped_covariates: Vec<String>,
    /// `(unit, ψ)` pairs with `estimate − θ ≈ (1/N) Σ ψ` over all `N` panel
    /// units; units outside the cell contribute zero.
    #[serde(skip)]
    pub influence: Vec<(UnitIx, f64)>,
}

impl GroupTimeEffect {
    pub fn event_time(&self) -> i32 {
        self.t - self.g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub g: Year,
    pub t: Year,
    pub reason: String,
}

impl fmt::Display for SkippedCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cell (g={}, t={}) skipped: {}", self.g, self.t, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupTimeResults {
    /// Sorted by `(g, t)`.
    pub effects: Vec<GroupTimeEffect>,
    pub skipped: Vec<SkippedCell>,
}

/// Column of the cell design: a covariate or the product of two.
#[derive(Debug, Clone, Copy)]
enum Term {
    Main(Covariate),
    Product(Covariate, Covariate),
}

fn design_terms(panel: &CohortPanel, config: &DidConfig) -> Result<Vec<(String, Term)>> {
    let mut mains = Vec::with_capacity(config.covariates.len());
    for name in &config.covariates {
        mains.push((name.clone(), panel.covariate(name)?));
    }
    let mut terms: Vec<(String, Term)> = mains.iter().map(|(n, c)| (n.clone(), Term::Main(*c))).collect();
    if config.interact_covariates {
        for a in 0..mains.len() {
            for b in a + 1..mains.len() {
                terms.push((format!("{}:{}", mains[a].0, mains[b].0), Term::Product(mains[a].1, mains[b].1)));
            }
        }
    }
    Ok(terms)
}

fn term_value(panel: &CohortPanel, row: usize, term: Term) -> f64 {
    match term {
        Term::Main(c) => panel.value(row, c),
        Term::Product(a, b) => panel.value(row, a) * panel.value(row, b),
    }
}

/// Units and long differences entering one cell.
struct CellSample {
    units: Vec<UnitIx>,
    treated: Vec<bool>,
    delta: Vec<f64>,
    base_rows: Vec<usize>,
    n_treated: usize,
}

fn comparison_units<'a>(
    index: &'a CohortIndex,
    g: Year,
    horizon: Year,
    control: ControlGroup,
) -> impl Iterator<Item = UnitIx> + 'a {
    let later = index
        .members
        .iter()
        .filter(move |(&h, _)| control == ControlGroup::NotYetTreated && h != g && h > horizon)
        .flat_map(|(_, m)| m.iter().copied());
    index.never_treated.iter().copied().chain(later)
}

fn collect_sample(
    panel: &CohortPanel,
    index: &CohortIndex,
    g: Year,
    t: Year,
    b: Year,
    control: ControlGroup,
) -> Result<CellSample> {
    let treated_units = index.members.get(&g).ok_or(Error::UnknownCohort { g })?;
    let mut s = CellSample {
        units: Vec::new(),
        treated: Vec::new(),
        delta: Vec::new(),
        base_rows: Vec::new(),
        n_treated: 0,
    };
    let push = |s: &mut CellSample, u: UnitIx, d: bool| {
        let (Some(rb), Some(rt)) = (panel.row_at(u, b), panel.row_at(u, t)) else {
            return;
        };
        let (Some(yb), Some(yt)) = (panel.outcome(rb), panel.outcome(rt)) else {
            return;
        };
        s.units.push(u);
        s.treated.push(d);
        s.delta.push(yt - yb);
        s.base_rows.push(rb);
    };
    for &u in treated_units {
        push(&mut s, u, true);
    }
    s.n_treated = s.units.len();
    for u in comparison_units(index, g, t.max(b), control) {
        push(&mut s, u, false);
    }
    if s.n_treated == 0 {
        return Err(Error::EmptyTreatedSet { g, t });
    }
    if s.units.len() == s.n_treated {
        return Err(Error::EmptyComparisonSet { g, t });
    }
    Ok(s)
}

/// Design `[1, terms...]` at the base period, dropping terms constant among
/// comparison units.
fn build_design(panel: &CohortPanel, s: &CellSample, terms: &[(String, Term)]) -> (Design, Vec<String>) {
    let mut kept = Vec::with_capacity(terms.len());
    let mut dropped = Vec::new();
    for (name, term) in terms {
        let mut values = s
            .base_rows
            .iter()
            .zip(&s.treated)
            .filter(|(_, d)| !**d)
            .map(|(&r, _)| term_value(panel, r, *term));
        let first = values.next().unwrap_or(0.0);
        if values.all(|v| v == first) {
            dropped.push(name.clone());
        } else {
            kept.push(*term);
        }
    }
    let mut x = Design::new(1 + kept.len());
    x.data.reserve(s.units.len() * x.k);
    let mut row = vec![1.0; x.k];
    for &r in &s.base_rows {
        for (slot, term) in row[1..].iter_mut().zip(&kept) {
            *slot = term_value(panel, r, *term);
        }
        x.push_row(&row);
    }
    (x, dropped)
}

/// Doubly robust estimate and per-observation influence (sample scale:
/// `estimate − θ ≈ (1/n) Σ inf_i`).
pub(crate) struct DrFit {
    pub estimate: f64,
    pub influence: Vec<f64>,
}

pub(crate) fn doubly_robust(x: &Design, d: &[bool], dy: &[f64], trim: f64) -> Result<DrFit> {
    let n = x.n;
    let nf = n as f64;
    let dv: Vec<f64> = d.iter().map(|&b| f64::from(u8::from(b))).collect();

    let ps = logistic_irls(x, &dv, LOGISTIC_TOLERANCE, LOGISTIC_MAX_ITER)?;
    let p = &ps.fitted;
    let max_p = p.iter().copied().fold(0.0f64, f64::max);
    if max_p >= trim {
        return Err(Error::PropensityOverflow {
            max_score: max_p,
            bound: trim,
        });
    }

    let gram_ols = x.weighted_gram(|i| 1.0 - dv[i]);
    let ols = spd_factor(&gram_ols, "outcome regression")?;
    let beta = ols.solve(&x.weighted_cross(|i| (1.0 - dv[i]) * dy[i]));
    let beta = beta.as_slice();
    let resid: Vec<f64> = (0..n).map(|i| dy[i] - x.dot(i, beta)).collect();

    let w1 = &dv;
    let w0: Vec<f64> = (0..n).map(|i| p[i] * (1.0 - dv[i]) / (1.0 - p[i])).collect();
    let mean_w1 = w1.iter().sum::<f64>() / nf;
    let mean_w0 = w0.iter().sum::<f64>() / nf;
    let att_treat: Vec<f64> = (0..n).map(|i| w1[i] * resid[i]).collect();
    let att_cont: Vec<f64> = (0..n).map(|i| w0[i] * resid[i]).collect();
    let eta_treat = att_treat.iter().sum::<f64>() / nf / mean_w1;
    let eta_cont = att_cont.iter().sum::<f64>() / nf / mean_w0;
    let estimate = eta_treat - eta_cont;

    // Linear representations of the nuisance estimators.
    let ols_inv = spd_factor(&(gram_ols / nf), "outcome regression")?.inverse();
    let info = x.weighted_gram(|i| p[i] * (1.0 - p[i])) / nf;
    let ps_inv = spd_factor(&info, "logistic information")?.inverse();

    let col_mean = |f: &dyn Fn(usize) -> f64| -> DVector<f64> { x.weighted_cross(f) / nf };
    let m1 = col_mean(&|i| w1[i]);
    let m2 = col_mean(&|i| w0[i] * (resid[i] - eta_cont));
    let m3 = col_mean(&|i| w0[i]);
    let a_treat = &ols_inv * m1;
    let a_ps = &ps_inv * m2;
    let a_cont = &ols_inv * m3;

    let mut influence = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row(i);
        let dotv = |v: &DVector<f64>| xi.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>();
        let ols_scale = (1.0 - dv[i]) * resid[i];
        let ps_scale = dv[i] - p[i];
        let inf_treat = (att_treat[i] - w1[i] * eta_treat - ols_scale * dotv(&a_treat)) / mean_w1;
        let inf_cont = (att_cont[i] - w0[i] * eta_cont + ps_scale * dotv(&a_ps) - ols_scale * dotv(&a_cont)) / mean_w0;
        influence.push(inf_treat - inf_cont);
    }
    Ok(DrFit { estimate, influence })
}

/// ATET(g, t) with unit-level clustering.
pub fn estimate_group_time(
    panel: &CohortPanel,
    index: &CohortIndex,
    g: Year,
    t: Year,
    config: &DidConfig,
) -> Result<GroupTimeEffect> {
    estimate_group_time_clustered(panel, index, g, t, config, &ClusterScheme::by_unit(panel.n_units()))
}

pub fn estimate_group_time_clustered(
    panel: &CohortPanel,
    index: &CohortIndex,
    g: Year,
    t: Year,
    config: &DidConfig,
    scheme: &ClusterScheme,
) -> Result<GroupTimeEffect> {
    config.validate()?;
    let terms = design_terms(panel, config)?;
    cell_effect(panel, index, g, t, config, &terms, scheme)
}

fn cell_effect(
    panel: &CohortPanel,
    index: &CohortIndex,
    g: Year,
    t: Year,
    config: &DidConfig,
    terms: &[(String, Term)],
    scheme: &ClusterScheme,
) -> Result<GroupTimeEffect> {
    if !index.members.contains_key(&g) {
        return Err(Error::UnknownCohort { g });
    }
    let b = base_period(g, t, config.base_period);
    let (t_min, t_max) = panel.year_range();
    if t == b {
        return Err(Error::InfeasibleCell {
            g,
            t,
            reason: "reference period of the anchored base".into(),
        });
    }
    if b < t_min || t < t_min || t > t_max {
        return Err(Error::InfeasibleCell {
            g,
            t,
            reason: format!("base year {b} or evaluation year outside {t_min}..={t_max}"),
        });
    }
    let sample = collect_sample(panel, index, g, t, b, config.control_group)?;
    let (x, dropped) = build_design(panel, &sample, terms);
    if !dropped.is_empty() {
        debug!("cell (g={g}, t={t}): dropped constant covariates {dropped:?}");
    }
    let fit = doubly_robust(&x, &sample.treated, &sample.delta, config.propensity_trim)?;

    let n_panel = panel.n_units() as f64;
    let scale = n_panel / sample.units.len() as f64;
    let influence: Vec<(UnitIx, f64)> = sample
        .units
        .iter()
        .zip(&fit.influence)
        .map(|(&u, &v)| (u, v * scale))
        .collect();
    let mut dense = vec![0.0; panel.n_units()];
    for &(u, v) in &influence {
        dense[u] += v;
    }
    let summary = influence_se(fit.estimate, &dense, scheme)?;
    Ok(GroupTimeEffect {
        g,
        t,
        base: b,
        estimate: fit.estimate,
        std_error: summary.std_error,
        p_value: summary.p_value,
        n_treated: sample.n_treated,
        n_control: sample.units.len() - sample.n_treated,
        dropped_covariates: dropped,
        influence,
    })
}

/// Candidate `(g, t)` cells within the configured window, sorted.
pub fn candidate_cells(panel: &CohortPanel, index: &CohortIndex, config: &DidConfig) -> Vec<(Year, Year)> {
    let (t_min, t_max) = panel.year_range();
    let mut cells = Vec::new();
    for &g in &index.groups {
        for t in t_min..=t_max {
            let e = t - g;
            let b = base_period(g, t, config.base_period);
            if e < config.window.0 || e > config.window.1 || b < t_min || b == t {
                continue;
            }
            cells.push((g, t));
        }
    }
    cells
}

fn is_skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::EmptyComparisonSet { .. } | Error::EmptyTreatedSet { .. } | Error::InfeasibleCell { .. }
    )
}

/// Every feasible cell in the window, with unit-level clustering.
pub fn estimate_all(panel: &CohortPanel, index: &CohortIndex, config: &DidConfig) -> Result<GroupTimeResults> {
    estimate_all_clustered(panel, index, config, &ClusterScheme::by_unit(panel.n_units()))
}

/// Every feasible cell in the window. Cells without treated or comparison
/// units are skipped and reported; any other failure aborts.
pub fn estimate_all_clustered(
    panel: &CohortPanel,
    index: &CohortIndex,
    config: &DidConfig,
    scheme: &ClusterScheme,
) -> Result<GroupTimeResults> {
    config.validate()?;
    if index.groups.is_empty() {
        return Err(Error::NoTreatedUnits);
    }
    let terms = design_terms(panel, config)?;
    let cells = candidate_cells(panel, index, config);
    let outcomes: Vec<Result<GroupTimeEffect>> = cells
        .par_iter()
        .map(|&(g, t)| cell_effect(panel, index, g, t, config, &terms, scheme))
        .collect();
    let mut results = GroupTimeResults::default();
    for ((g, t), outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(effect) => results.effects.push(effect),
            Err(e) if is_skippable(&e) => {
                let skipped = SkippedCell {
                    g,
                    t,
                    reason: e.to_string(),
                };
                warn!("{skipped}");
                results.skipped.push(skipped);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(results)
}

pub fn write_effects_csv<W: std::io::Write>(effects: &[GroupTimeEffect], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["g", "t", "event_time", "estimate", "std_error", "p_value", "n_treated", "n_control"])?;
    for e in effects {
        w.write_record([
            e.g.to_string(),
            e.t.to_string(),
            e.event_time().to_string(),
            e.estimate.to_string(),
            e.std_error.to_string(),
            e.p_value.to_string(),
            e.n_treated.to_string(),
            e.n_control.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_cohort_index, OutcomeKind, PanelBuilder, RowInput};
    use approx::assert_abs_diff_eq;

    /// Units with given cohort, outcome path and one covariate `x`.
    fn panel_from(units: &[(Option<Year>, Vec<f64>, f64)], t0: Year) -> CohortPanel {
        let mut b = PanelBuilder::new(vec!["x".into()]);
        for (i, (g, ys, x)) in units.iter().enumerate() {
            let id = format!("u{i:03}");
            for (k, y) in ys.iter().enumerate() {
                let year = t0 + k as Year;
                b.push(RowInput {
                    unit: &id,
                    region: "R",
                    year,
                    outcome: Some(*y),
                    treated: g.is_some_and(|g| year >= g),
                    age: 30,
                    gender: (i % 2) as u8,
                    cohort: None,
                    covariates: &[*x],
                });
            }
        }
        b.finish(OutcomeKind::Continuous).unwrap()
    }

    #[test]
    fn two_by_two_collapses_to_difference_in_means() {
        let units = vec![
            (Some(2001), vec![0.50, 0.44], 0.0),
            (Some(2001), vec![0.30, 0.26], 0.0),
            (None, vec![0.40, 0.39], 0.0),
            (None, vec![0.20, 0.19], 0.0),
            (None, vec![0.70, 0.69], 0.0),
        ];
        let panel = panel_from(&units, 2000);
        let idx = build_cohort_index(&panel);
        let e = estimate_group_time(&panel, &idx, 2001, 2001, &DidConfig::default()).unwrap();
        // treated mean change −0.05, comparison −0.01
        assert_abs_diff_eq!(e.estimate, -0.04, epsilon = 1e-12);
        assert_eq!((e.n_treated, e.n_control), (2, 3));
        assert!(e.std_error > 0.0);
    }

    #[test]
    fn identical_paths_give_zero() {
        let path = vec![0.3, 0.5, 0.2];
        let units = vec![
            (Some(2002), path.clone(), 1.0),
            (Some(2002), path.clone(), 2.0),
            (None, path.clone(), 1.5),
            (None, path.clone(), 0.5),
            (None, path, 2.5),
        ];
        let panel = panel_from(&units, 2000);
        let idx = build_cohort_index(&panel);
        let cfg = DidConfig {
            covariates: vec!["x".into()],
            ..Default::default()
        };
        for t in [2001, 2002] {
            let e = estimate_group_time(&panel, &idx, 2002, t, &cfg).unwrap();
            assert_abs_diff_eq!(e.estimate, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_and_sign_flip() {
        let units: Vec<(Option<Year>, Vec<f64>, f64)> = (0..30)
            .map(|i| {
                let g = match i % 3 {
                    0 => Some(2002),
                    1 => Some(2003),
                    _ => None,
                };
                let x = (i as f64 * 0.37).sin();
                let ys = (0..4).map(|k| (i as f64 * 0.11 + k as f64 * 0.7).cos() + x).collect();
                (g, ys, x)
            })
            .collect();
        let cfg = DidConfig {
            covariates: vec!["x".into()],
            ..Default::default()
        };
        let base = panel_from(&units, 2000);
        let idx = build_cohort_index(&base);
        let shift = |f: &dyn Fn(f64) -> f64| {
            let moved: Vec<_> = units.iter().map(|(g, ys, x)| (*g, ys.iter().map(|y| f(*y)).collect(), *x)).collect();
            let p = panel_from(&moved, 2000);
            estimate_all(&p, &build_cohort_index(&p), &cfg).unwrap()
        };
        let reference = estimate_all(&base, &idx, &cfg).unwrap();
        let shifted = shift(&|y| y + 3.5);
        let flipped = shift(&|y| -y);
        assert!(!reference.effects.is_empty());
        for ((a, b), c) in reference.effects.iter().zip(&shifted.effects).zip(&flipped.effects) {
            assert_abs_diff_eq!(a.estimate, b.estimate, epsilon = 1e-10);
            assert_abs_diff_eq!(a.estimate, -c.estimate, epsilon = 1e-10);
        }
    }

    #[test]
    fn enumeration_respects_window_and_base() {
        let units: Vec<(Option<Year>, Vec<f64>, f64)> = [Some(2007), Some(2008), None]
            .iter()
            .map(|g| (*g, vec![0.0; 16], 0.0))
            .collect();
        let panel = panel_from(&units, 1997);
        let idx = build_cohort_index(&panel);
        let cells = candidate_cells(&panel, &idx, &DidConfig::default());
        for &(g, t) in &cells {
            assert!((1998..=2012).contains(&t));
            assert!((-10..=5).contains(&(t - g)));
        }
        assert_eq!(cells.iter().filter(|c| c.0 == 2007).count(), 15);
        let post = DidConfig {
            window: (0, 5),
            ..Default::default()
        };
        assert!(candidate_cells(&panel, &idx, &post).iter().all(|&(g, t)| t >= g));
        let anchored = DidConfig {
            base_period: BasePeriod::AnchorGMinus1,
            ..Default::default()
        };
        assert!(!candidate_cells(&panel, &idx, &anchored).contains(&(2007, 2006)));
    }

    #[test]
    fn missing_comparison_is_skipped() {
        let units = vec![(Some(2001), vec![0.1, 0.2, 0.3], 0.0), (Some(2002), vec![0.1, 0.2, 0.3], 0.0)];
        let panel = panel_from(&units, 2000);
        let idx = build_cohort_index(&panel);
        assert!(matches!(
            estimate_group_time(&panel, &idx, 2001, 2002, &DidConfig::default()),
            Err(Error::EmptyComparisonSet { .. })
        ));
        let all = estimate_all(&panel, &idx, &DidConfig::default()).unwrap();
        assert_eq!(all.effects.len(), 1);
        assert!(!all.skipped.is_empty());
    }

    #[test]
    fn no_cohorts_is_an_error() {
        let panel = panel_from(&[(None, vec![0.0, 1.0], 0.0)], 2000);
        let idx = build_cohort_index(&panel);
        assert!(matches!(estimate_all(&panel, &idx, &DidConfig::default()), Err(Error::NoTreatedUnits)));
    }

    #[test]
    fn separated_propensity_fails_loudly() {
        let mut units = Vec::new();
        for i in 0..20 {
            let x = i as f64;
            units.push((if i >= 10 { Some(2001) } else { None }, vec![0.0, x * 0.1], x));
        }
        let panel = panel_from(&units, 2000);
        let idx = build_cohort_index(&panel);
        let cfg = DidConfig {
            covariates: vec!["x".into()],
            ..Default::default()
        };
        let err = estimate_group_time(&panel, &idx, 2001, 2001, &cfg).unwrap_err();
        assert!(
            matches!(err, Error::NonConvergence { .. } | Error::PropensityOverflow { .. } | Error::Singular(_)),
            "{err:?}"
        );
    }

    #[test]
    fn constant_covariate_is_dropped() {
        let units: Vec<(Option<Year>, Vec<f64>, f64)> = (0..10)
            .map(|i| (if i < 4 { Some(2001) } else { None }, vec![0.0, i as f64 * 0.1], 1.0))
            .collect();
        let panel = panel_from(&units, 2000);
        let idx = build_cohort_index(&panel);
        let cfg = DidConfig {
            covariates: vec!["x".into()],
            ..Default::default()
        };
        let e = estimate_group_time(&panel, &idx, 2001, 2001, &cfg).unwrap();
        assert_eq!(e.dropped_covariates, vec!["x".to_string()]);
    }

    #[test]
    fn invalid_trim_rejected() {
        let cfg = DidConfig {
            propensity_trim: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
