//! Event-time aggregation of group-time effects and window averages.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::did::{base_period, estimate_all_clustered, BasePeriod, DidConfig, GroupTimeEffect, GroupTimeResults};
use crate::error::{Error, Result};
use crate::inference::{
    cluster_bootstrap, influence_se, quantile_sorted, sample_sd, two_sided_p, BootstrapSpec, ClusterScheme,
    InferenceSummary,
};
use crate::panel::{build_cohort_index, CohortIndex, CohortPanel, Year};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingCellPolicy {
    /// Abort with [`Error::MissingCell`].
    #[default]
    Error,
    /// Leave the event time out of the result.
    DropEventTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventStudyOptions {
    /// Inclusive event-time range.
    pub horizon: (i32, i32),
    /// Base period rule the cells were estimated under; decides which cells
    /// are estimable and therefore required.
    pub base_period: BasePeriod,
    pub on_missing: MissingCellPolicy,
}

impl Default for EventStudyOptions {
    fn default() -> Self {
        Self {
            horizon: (-10, 5),
            base_period: BasePeriod::VaryingPre,
            on_missing: MissingCellPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventTimeEstimate {
    pub event_time: i32,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Treated units behind the estimate.
    pub n_treated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortWeight {
    pub g: Year,
    pub event_time: i32,
    pub weight: f64,
}

/// Source of sampling uncertainty, aligned with the event-time estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Uncertainty {
    #[default]
    None,
    /// Dense per-unit influence vectors, one per event time.
    Influence { scheme: ClusterScheme, psi: Vec<Vec<f64>> },
    /// Bootstrap replicates; each row holds one value per event time, `NaN`
    /// where the replicate could not produce it.
    Replicates(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    pub estimates: Vec<EventTimeEstimate>,
    pub weights: Vec<CohortWeight>,
    #[serde(skip)]
    pub uncertainty: Uncertainty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub label: String,
    pub from: i32,
    pub to: i32,
}

impl Window {
    pub fn new(label: impl Into<String>, from: i32, to: i32) -> Self {
        Self {
            label: label.into(),
            from,
            to,
        }
    }
}

/// Post-treatment windows 0–1, 0–3, 0–5 and pre-treatment windows of
/// 1, 1–5 and 1–10 years before introduction.
pub fn default_windows() -> Vec<Window> {
    vec![
        Window::new("pre 1-10", -10, -1),
        Window::new("pre 1-5", -5, -1),
        Window::new("pre 1", -1, -1),
        Window::new("post 0-1", 0, 1),
        Window::new("post 0-3", 0, 3),
        Window::new("post 0-5", 0, 5),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAverage {
    pub label: String,
    pub from: i32,
    pub to: i32,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

fn replicate_summary(estimate: f64, draws: impl Iterator<Item = f64>) -> InferenceSummary {
    let mut draws: Vec<f64> = draws.filter(|v| v.is_finite()).collect();
    if draws.len() < 2 {
        return unavailable(estimate);
    }
    let sd = sample_sd(&draws);
    draws.sort_by(f64::total_cmp);
    InferenceSummary {
        estimate,
        std_error: sd,
        p_value: two_sided_p(estimate, sd),
        ci_lo: quantile_sorted(&draws, 0.025),
        ci_hi: quantile_sorted(&draws, 0.975),
    }
}

fn unavailable(estimate: f64) -> InferenceSummary {
    InferenceSummary {
        estimate,
        std_error: f64::NAN,
        p_value: f64::NAN,
        ci_lo: f64::NAN,
        ci_hi: f64::NAN,
    }
}

impl Uncertainty {
    /// Inference for `Σ_j c_j θ_j` where `coef` pairs event-time positions
    /// with coefficients.
    fn summarize(&self, estimate: f64, coef: &[(usize, f64)]) -> Result<InferenceSummary> {
        match self {
            Uncertainty::None => Ok(unavailable(estimate)),
            Uncertainty::Influence { scheme, psi } => {
                let mut combined = vec![0.0; scheme.n_units()];
                for &(j, c) in coef {
                    for (acc, v) in combined.iter_mut().zip(&psi[j]) {
                        *acc += c * v;
                    }
                }
                influence_se(estimate, &combined, scheme)
            }
            Uncertainty::Replicates(reps) => Ok(replicate_summary(
                estimate,
                reps.iter().map(|r| coef.iter().map(|&(j, c)| c * r[j]).sum()),
            )),
        }
    }
}

impl EventStudyResult {
    /// Builds a result from point estimates and their uncertainty source.
    pub fn from_points(points: Vec<(i32, f64, usize)>, uncertainty: Uncertainty) -> Result<Self> {
        let mut estimates = Vec::with_capacity(points.len());
        for (j, &(e, est, n)) in points.iter().enumerate() {
            let s = uncertainty.summarize(est, &[(j, 1.0)])?;
            estimates.push(EventTimeEstimate {
                event_time: e,
                estimate: est,
                std_error: s.std_error,
                p_value: s.p_value,
                ci_lo: s.ci_lo,
                ci_hi: s.ci_hi,
                n_treated: n,
            });
        }
        Ok(Self {
            estimates,
            weights: Vec::new(),
            uncertainty,
        })
    }

    pub fn get(&self, e: i32) -> Option<&EventTimeEstimate> {
        self.estimates.iter().find(|x| x.event_time == e)
    }

    fn position(&self, e: i32) -> Option<usize> {
        self.estimates.iter().position(|x| x.event_time == e)
    }
}

/// Cohort-share weighted event-time effects.
///
/// For each `e`, every cohort whose cell `(g, g + e)` is estimable within the
/// panel years gets weight `|g| / Σ |g'|` over those cohorts.
pub fn aggregate_event_study(
    effects: &[GroupTimeEffect],
    index: &CohortIndex,
    options: &EventStudyOptions,
    scheme: &ClusterScheme,
) -> Result<EventStudyResult> {
    let cells: BTreeMap<(Year, Year), &GroupTimeEffect> = effects.iter().map(|e| ((e.g, e.t), e)).collect();
    let (t_min, t_max) = index.year_range;
    let mut points = Vec::new();
    let mut psi = Vec::new();
    let mut weights = Vec::new();
    'event: for e in options.horizon.0..=options.horizon.1 {
        let required: Vec<Year> = index
            .groups
            .iter()
            .copied()
            .filter(|&g| {
                let t = g + e;
                let b = base_period(g, t, options.base_period);
                t >= t_min && t <= t_max && b >= t_min && b != t
            })
            .collect();
        if required.is_empty() {
            continue;
        }
        let mut chosen = Vec::with_capacity(required.len());
        for &g in &required {
            match cells.get(&(g, g + e)) {
                Some(cell) => chosen.push(*cell),
                None => match options.on_missing {
                    MissingCellPolicy::Error => return Err(Error::MissingCell { g, e }),
                    MissingCellPolicy::DropEventTime => {
                        warn!("event time {e} dropped: cell (g={g}, t={}) unavailable", g + e);
                        continue 'event;
                    }
                },
            }
        }
        let total: f64 = required.iter().map(|&g| index.cohort_size(g) as f64).sum();
        if !(total > 0.0) {
            return Err(Error::WeightDegenerate(e));
        }
        let mut estimate = 0.0;
        let mut n_treated = 0;
        let mut combined = vec![0.0; scheme.n_units()];
        for cell in chosen {
            let w = index.cohort_size(cell.g) as f64 / total;
            estimate += w * cell.estimate;
            n_treated += cell.n_treated;
            for &(u, v) in &cell.influence {
                combined[u] += w * v;
            }
            weights.push(CohortWeight {
                g: cell.g,
                event_time: e,
                weight: w,
            });
        }
        points.push((e, estimate, n_treated));
        psi.push(combined);
    }
    let mut result = EventStudyResult::from_points(
        points,
        Uncertainty::Influence {
            scheme: scheme.clone(),
            psi,
        },
    )?;
    result.weights = weights;
    Ok(result)
}

/// Simple averages of event-time estimates over each window.
pub fn window_average(result: &EventStudyResult, windows: &[Window]) -> Result<Vec<WindowAverage>> {
    windows
        .iter()
        .map(|w| {
            if w.from > w.to {
                return Err(Error::WindowOutOfRange {
                    label: w.label.clone(),
                    e: w.from,
                });
            }
            let mut positions = Vec::new();
            for e in w.from..=w.to {
                positions.push(result.position(e).ok_or_else(|| Error::WindowOutOfRange {
                    label: w.label.clone(),
                    e,
                })?);
            }
            let c = 1.0 / positions.len() as f64;
            let estimate = positions.iter().map(|&j| result.estimates[j].estimate).sum::<f64>() * c;
            let coef: Vec<(usize, f64)> = positions.iter().map(|&j| (j, c)).collect();
            let s = result.uncertainty.summarize(estimate, &coef)?;
            Ok(WindowAverage {
                label: w.label.clone(),
                from: w.from,
                to: w.to,
                estimate,
                std_error: s.std_error,
                p_value: s.p_value,
                ci_lo: s.ci_lo,
                ci_hi: s.ci_hi,
            })
        })
        .collect()
}

/// Window averages for the windows fully covered by `result`; the rest are
/// logged and left out.
pub fn available_window_averages(result: &EventStudyResult, windows: &[Window]) -> Result<Vec<WindowAverage>> {
    let mut out = Vec::new();
    for w in windows {
        match window_average(result, std::slice::from_ref(w)) {
            Ok(mut v) => out.append(&mut v),
            Err(Error::WindowOutOfRange { label, e }) => warn!("window {label} skipped: event time {e} unavailable"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn write_event_study_csv<W: Write>(result: &EventStudyResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["event_time", "estimate", "std_error", "p_value", "ci_lo", "ci_hi", "n_treated"])?;
    for e in &result.estimates {
        w.write_record([
            e.event_time.to_string(),
            e.estimate.to_string(),
            e.std_error.to_string(),
            e.p_value.to_string(),
            e.ci_lo.to_string(),
            e.ci_hi.to_string(),
            e.n_treated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_windows_csv<W: Write>(windows: &[WindowAverage], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window", "from", "to", "estimate", "std_error", "p_value", "ci_lo", "ci_hi"])?;
    for a in windows {
        w.write_record([
            a.label.clone(),
            a.from.to_string(),
            a.to.to_string(),
            a.estimate.to_string(),
            a.std_error.to_string(),
            a.p_value.to_string(),
            a.ci_lo.to_string(),
            a.ci_hi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: one row per window and statistic (`atet`, `std_error`,
/// `p_value`), rounded to four decimals.
pub fn write_table_long_csv<W: Write>(windows: &[WindowAverage], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window", "statistic", "value"])?;
    for a in windows {
        for (name, v) in [("atet", a.estimate), ("std_error", a.std_error), ("p_value", a.p_value)] {
            w.write_record([a.label.as_str(), name, &format!("{v:.4}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Group-time cells and their event study in one pass. Without `bootstrap`
/// the uncertainty comes from the influence functions; with it, event-time
/// effects are re-estimated on cluster resamples.
pub fn did_event_study(
    panel: &CohortPanel,
    config: &DidConfig,
    on_missing: MissingCellPolicy,
    scheme: &ClusterScheme,
    bootstrap: Option<&BootstrapSpec>,
) -> Result<(GroupTimeResults, EventStudyResult)> {
    let options = EventStudyOptions {
        horizon: config.window,
        base_period: config.base_period,
        on_missing,
    };
    let index = build_cohort_index(panel);
    let cells = estimate_all_clustered(panel, &index, config, scheme)?;
    let mut result = aggregate_event_study(&cells.effects, &index, &options, scheme)?;
    if let Some(spec) = bootstrap {
        let event_times: Vec<i32> = result.estimates.iter().map(|e| e.event_time).collect();
        let replicate_options = EventStudyOptions {
            on_missing: MissingCellPolicy::DropEventTime,
            ..options
        };
        let estimator = |p: &CohortPanel| -> Result<Vec<f64>> {
            let index = build_cohort_index(p);
            let by_unit = ClusterScheme::by_unit(p.n_units());
            let cells = estimate_all_clustered(p, &index, config, &by_unit)?;
            let es = aggregate_event_study(&cells.effects, &index, &replicate_options, &by_unit)?;
            Ok(event_times
                .iter()
                .map(|e| es.get(*e).map_or(f64::NAN, |x| x.estimate))
                .collect())
        };
        let boot = cluster_bootstrap(estimator, panel, scheme, spec)?;
        let points = result
            .estimates
            .iter()
            .map(|e| (e.event_time, e.estimate, e.n_treated))
            .collect();
        let weights = std::mem::take(&mut result.weights);
        result = EventStudyResult::from_points(points, Uncertainty::Replicates(boot.replicates))?;
        result.weights = weights;
    }
    Ok((cells, result))
}
