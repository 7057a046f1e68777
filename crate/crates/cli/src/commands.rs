use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use causal_panel::eventstudy::{
    available_window_averages, did_event_study, write_event_study_csv, write_table_long_csv, write_windows_csv,
    EventStudyResult, WindowAverage,
};
use causal_panel::ifect::estimate_ifect;
use causal_panel::inference::{BootstrapSpec, ClusterScheme};
use causal_panel::io::{read_panel_csv, write_cohort_index_json, write_panel_csv};
use causal_panel::policy::{adoption_curve, read_policy_events, write_policy_table, PolicyKind, RegionTreatmentTable};
use causal_panel::reconstruct::{
    composition_report, read_survey_csv, reconstruct_panel, write_composition_csv, ReconstructionConfig, SurveyRecord,
};
use causal_panel::simulate::{benchmark, generate, write_benchmark_csv};
use causal_panel::{CohortPanel, OutcomeKind, Year};
use serde::Serialize;

use crate::config::{ClusterBy, DidInference, Method, RunConfig};
use crate::filter::{self, RowFilter};
use crate::output::{Inputs, Staged};

/// Wall-clock per stage, kept apart from the deterministic outputs.
#[derive(Debug, Default, Serialize)]
pub struct Timings(pub BTreeMap<String, f64>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.insert(stage.to_owned(), start.elapsed().as_secs_f64());
        out
    }
}

fn required<'a>(path: &'a Option<std::path::PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().with_context(|| format!("missing {flag}"))
}

fn outcome_kind(cfg: &RunConfig) -> OutcomeKind {
    if cfg.estimate.continuous_outcome {
        OutcomeKind::Continuous
    } else {
        OutcomeKind::Binary
    }
}

fn load_survey(inputs: &mut Inputs, path: &Path) -> Result<Vec<SurveyRecord>> {
    let bytes = inputs.read(path)?;
    let records = read_survey_csv(bytes.as_slice(), &path.display().to_string())?;
    if records.is_empty() {
        bail!("survey file {} has no records", path.display());
    }
    Ok(records)
}

fn code_policies(
    inputs: &mut Inputs,
    path: &Path,
    years: (Year, Year),
    cfg: &RunConfig,
) -> Result<RegionTreatmentTable> {
    let bytes = inputs.read(path)?;
    let schedule = read_policy_events(bytes.as_slice(), &path.display().to_string())?;
    Ok(schedule.code(years, cfg.policy.date_rule)?)
}

fn reconstruction_years(records: &[SurveyRecord], config: &ReconstructionConfig) -> (Year, Year) {
    let last = records.iter().map(|r| r.survey_year).max().unwrap_or(config.earliest_year);
    (config.earliest_year, last.max(config.earliest_year))
}

/// Panel rebuilt from the survey, with the exclusion report and, when
/// requested, composition shares.
fn reconstruct_into(
    staged: &mut Staged,
    prefix: &str,
    records: &[SurveyRecord],
    table: &RegionTreatmentTable,
    cfg: &RunConfig,
) -> Result<CohortPanel> {
    let (panel, report) = reconstruct_panel(records, &cfg.reconstruct, table)?;
    staged.add_with(format!("{prefix}panel.csv"), |w| write_panel_csv(&panel, w))?;
    staged.add_json(format!("{prefix}exclusions.json"), &report)?;
    staged.add_with(format!("{prefix}cohorts.json"), |w| write_cohort_index_json(&panel, w))?;
    if cfg.composition {
        let comp = composition_report(records, &panel);
        staged.add_with(format!("{prefix}composition.csv"), |w| write_composition_csv(&comp, w))?;
    }
    Ok(panel)
}

pub fn reconstruct(cfg: &RunConfig, timings: &mut Timings) -> Result<()> {
    let out = required(&cfg.paths.out, "--out")?;
    let mut inputs = Inputs::new();
    let records = load_survey(&mut inputs, required(&cfg.paths.survey, "--survey")?)?;
    let years = cfg.policy.years.unwrap_or_else(|| reconstruction_years(&records, &cfg.reconstruct));
    let table = code_policies(&mut inputs, required(&cfg.paths.policies, "--policies")?, years, cfg)?;
    let mut staged = Staged::new(out);
    timings.time("reconstruct", || reconstruct_into(&mut staged, "", &records, &table, cfg))?;
    staged.commit("reconstruct", cfg, &inputs)?;
    Ok(())
}

#[derive(Serialize)]
struct FirstYears {
    region_id: String,
    billboard_ban: Option<Year>,
    sales_ban: Option<Year>,
    smoking_ban: Option<Year>,
}

pub fn policies(cfg: &RunConfig, timings: &mut Timings) -> Result<()> {
    let out = required(&cfg.paths.out, "--out")?;
    let years = cfg.policy.years.context("missing --years")?;
    let mut inputs = Inputs::new();
    let table = timings.time("code", || {
        code_policies(&mut inputs, required(&cfg.paths.policies, "--policies")?, years, cfg)
    })?;
    let mut staged = Staged::new(out);
    staged.add_with("policy_table.csv", |w| write_policy_table(&table, w))?;

    let mut first = csv::Writer::from_writer(Vec::new());
    for region in table.regions() {
        first.serialize(FirstYears {
            region_id: region.to_owned(),
            billboard_ban: table.first_year(region, PolicyKind::BillboardBan),
            sales_ban: table.first_year(region, PolicyKind::SalesBan),
            smoking_ban: table.first_year(region, PolicyKind::SmokingBan),
        })?;
    }
    staged.add("first_years.csv", first.into_inner()?);

    let mut curve = csv::Writer::from_writer(Vec::new());
    curve.write_record(["policy_kind", "year", "regions_adopted"])?;
    for kind in [PolicyKind::BillboardBan, PolicyKind::SalesBan, PolicyKind::SmokingBan] {
        for (year, n) in adoption_curve(&table, kind) {
            curve.write_record([kind.as_str().to_owned(), year.to_string(), n.to_string()])?;
        }
    }
    staged.add("adoption.csv", curve.into_inner()?);
    staged.commit("policies", cfg, &inputs)?;
    Ok(())
}

fn cluster_scheme(panel: &CohortPanel, by: ClusterBy) -> Result<ClusterScheme> {
    Ok(match by {
        ClusterBy::Unit => ClusterScheme::by_unit(panel.n_units()),
        ClusterBy::Region => {
            let labels: HashMap<String, String> = (0..panel.n_units())
                .map(|u| {
                    let r = panel.rows(u).start;
                    (panel.unit_id(u).to_owned(), panel.region_id(r).to_owned())
                })
                .collect();
            ClusterScheme::from_labels(panel, &labels)?
        }
    })
}

#[derive(Serialize)]
struct DidDiagnostics<'a> {
    method: &'static str,
    units: usize,
    rows: usize,
    cells_estimated: usize,
    skipped: &'a [causal_panel::did::SkippedCell],
    dropped_covariates: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct IfectDiagnostics<'a> {
    method: &'static str,
    units: usize,
    rows: usize,
    rank: usize,
    cv_mspe: Option<&'a [f64]>,
    covariates: &'a [String],
    dropped_covariates: &'a [String],
    beta: &'a [f64],
    converged: bool,
    iterations: usize,
    tolerance_achieved: f64,
    excluded_units: usize,
    insufficient_pretreatment: Vec<&'a str>,
    imputed_cells: usize,
    bootstrap_failed: usize,
}

/// Estimates on `panel` and stages event-study, window and diagnostic files
/// under `prefix`.
fn estimate_into(
    staged: &mut Staged,
    prefix: &str,
    panel: &CohortPanel,
    cfg: &RunConfig,
    timings: &mut Timings,
) -> Result<Vec<WindowAverage>> {
    let filters: Vec<RowFilter> = cfg.estimate.filters.iter().map(|f| f.parse()).collect::<Result<_>>()?;
    let filtered;
    let panel = if filters.is_empty() {
        panel
    } else {
        filtered = filter::apply(panel, &filters)?;
        &filtered
    };
    let scheme = cluster_scheme(panel, cfg.estimate.cluster_by)?;
    let study: EventStudyResult = match cfg.estimate.method {
        Method::Did => {
            let boot = (cfg.estimate.did_inference == DidInference::Bootstrap).then_some(&cfg.bootstrap);
            let (cells, study) = timings.time(&format!("{prefix}did"), || {
                did_event_study(panel, &cfg.did, cfg.estimate.on_missing, &scheme, boot)
            })?;
            staged.add_with(format!("{prefix}group_time.csv"), |w| {
                causal_panel::did::write_effects_csv(&cells.effects, w)
            })?;
            let mut dropped = BTreeMap::new();
            for e in &cells.effects {
                for c in &e.dropped_covariates {
                    *dropped.entry(c.clone()).or_insert(0) += 1;
                }
            }
            staged.add_json(
                format!("{prefix}diagnostics.json"),
                &DidDiagnostics {
                    method: "did",
                    units: panel.n_units(),
                    rows: panel.n_rows(),
                    cells_estimated: cells.effects.len(),
                    skipped: &cells.skipped,
                    dropped_covariates: dropped,
                },
            )?;
            study
        }
        Method::Ifect => {
            let boot = BootstrapSpec {
                reps: cfg.ifect.bootstrap_reps,
                ..cfg.bootstrap
            };
            let boot = (!cfg.estimate.skip_ifect_bootstrap).then_some(&boot);
            let result = timings.time(&format!("{prefix}ifect"), || estimate_ifect(panel, &cfg.ifect, &scheme, boot))?;
            let model = &result.model;
            let mut factors = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["year".to_owned(), "xi".to_owned()];
            header.extend((1..=model.rank).map(|k| format!("f{k}")));
            factors.write_record(&header)?;
            for (p, year) in model.years.iter().enumerate() {
                let mut row = vec![year.to_string(), model.xi[p].to_string()];
                row.extend(model.factor(p).iter().map(f64::to_string));
                factors.write_record(&row)?;
            }
            staged.add(format!("{prefix}factors.csv"), factors.into_inner()?);
            staged.add_json(
                format!("{prefix}diagnostics.json"),
                &IfectDiagnostics {
                    method: "ifect",
                    units: panel.n_units(),
                    rows: panel.n_rows(),
                    rank: model.rank,
                    cv_mspe: result.selection.as_ref().map(|s| s.mspe.as_slice()),
                    covariates: &model.covariates,
                    dropped_covariates: &model.dropped_covariates,
                    beta: &model.beta,
                    converged: model.converged,
                    iterations: model.iterations,
                    tolerance_achieved: model.tolerance_achieved,
                    excluded_units: result.imputation.excluded_units,
                    insufficient_pretreatment: model.insufficient_pretreatment.iter().map(|u| panel.unit_id(*u)).collect(),
                    imputed_cells: result.imputation.n_imputed,
                    bootstrap_failed: result.bootstrap_failed,
                },
            )?;
            result.event_study
        }
    };
    let windows = available_window_averages(&study, &cfg.estimate.windows)?;
    staged.add_with(format!("{prefix}event_study.csv"), |w| write_event_study_csv(&study, w))?;
    staged.add_with(format!("{prefix}windows.csv"), |w| write_windows_csv(&windows, w))?;
    staged.add_with(format!("{prefix}table.csv"), |w| write_table_long_csv(&windows, w))?;
    Ok(windows)
}

fn load_panel(inputs: &mut Inputs, path: &Path, cfg: &RunConfig) -> Result<CohortPanel> {
    let bytes = inputs.read(path)?;
    Ok(read_panel_csv(bytes.as_slice(), outcome_kind(cfg), &path.display().to_string())?)
}

pub fn estimate(cfg: &RunConfig, timings: &mut Timings) -> Result<()> {
    let out = required(&cfg.paths.out, "--out")?;
    let mut inputs = Inputs::new();
    let panel = timings.time("read", || load_panel(&mut inputs, required(&cfg.paths.panel, "--panel")?, cfg))?;
    let mut staged = Staged::new(out);
    estimate_into(&mut staged, "", &panel, cfg, timings)?;
    staged.commit("estimate", cfg, &inputs)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig, timings: &mut Timings) -> Result<()> {
    let out = required(&cfg.paths.out, "--out")?;
    let (panel, truth) = timings.time("generate", || generate(&cfg.simulate))?;
    let mut staged = Staged::new(out);
    staged.add_with("panel.csv", |w| write_panel_csv(&panel, w))?;
    staged.add_json("truth.json", &truth)?;
    staged.add_with("cohorts.json", |w| write_cohort_index_json(&panel, w))?;
    staged.commit("simulate", cfg, &Inputs::new())?;
    Ok(())
}

pub fn run_benchmark(cfg: &RunConfig, timings: &mut Timings) -> Result<()> {
    let out = required(&cfg.paths.out, "--out")?;
    let plan = &cfg.benchmark;
    let specs: Vec<(String, _)> = plan.specs.iter().map(|s| (s.label.clone(), s.spec.clone())).collect();
    let report = benchmark(&specs, &plan.estimators, plan.reps)?;
    for (run, d) in &report.timings {
        timings.0.insert(run.clone(), d.as_secs_f64());
    }
    let mut staged = Staged::new(out);
    staged.add_with("benchmark.csv", |w| write_benchmark_csv(&report, w))?;
    staged.add_json("benchmark.json", &report)?;
    staged.commit("benchmark", cfg, &Inputs::new())?;
    Ok(())
}

/// Runs every sweep column against one panel, or against panels rebuilt from
/// the survey when columns change the reconstruction settings.
pub fn sweep(cfg: &RunConfig, timings: &mut Timings) -> Result<()> {
    let out = required(&cfg.paths.out, "--out")?;
    if cfg.sweep.is_empty() {
        bail!("the configuration has no [[sweep]] columns");
    }
    let mut labels: Vec<&str> = cfg.sweep.iter().map(|c| c.label.as_str()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        bail!("sweep column labels must be distinct");
    }
    let mut inputs = Inputs::new();
    let mut staged = Staged::new(out);
    let base_panel = match &cfg.paths.panel {
        Some(p) => Some(load_panel(&mut inputs, p, cfg)?),
        None => None,
    };
    let survey = match (&cfg.paths.survey, &cfg.paths.policies, &base_panel) {
        (Some(s), Some(p), None) => {
            let records = load_survey(&mut inputs, s)?;
            let years = cfg.policy.years.unwrap_or_else(|| reconstruction_years(&records, &cfg.reconstruct));
            let table = code_policies(&mut inputs, p, years, cfg)?;
            Some((records, table))
        }
        (_, _, Some(_)) => None,
        _ => bail!("sweep needs --panel, or --survey with --policies"),
    };
    let mut panels: Vec<(ReconstructionConfig, CohortPanel)> = Vec::new();
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["column", "window", "statistic", "value"])?;
    for column in &cfg.sweep {
        let col_cfg = cfg
            .with_overrides(&column.overrides)
            .with_context(|| format!("sweep column {}", column.label))?;
        let prefix = format!("{}/", column.label);
        let panel = match (&base_panel, &survey) {
            (Some(p), _) => {
                if col_cfg.reconstruct != cfg.reconstruct {
                    bail!("column {} changes the reconstruction but no survey was given", column.label);
                }
                p
            }
            (None, Some((records, policy))) => {
                let k = match panels.iter().position(|(c, _)| *c == col_cfg.reconstruct) {
                    Some(k) => k,
                    None => {
                        let (panel, _) = reconstruct_panel(records, &col_cfg.reconstruct, policy)?;
                        panels.push((col_cfg.reconstruct, panel));
                        panels.len() - 1
                    }
                };
                &panels[k].1
            }
            (None, None) => unreachable!(),
        };
        let windows = estimate_into(&mut staged, &prefix, panel, &col_cfg, timings)
            .with_context(|| format!("sweep column {}", column.label))?;
        for w in &windows {
            for (stat, v) in [("atet", w.estimate), ("std_error", w.std_error), ("p_value", w.p_value)] {
                table.write_record([column.label.clone(), w.label.clone(), stat.to_owned(), format!("{v:.4}")])?;
            }
        }
    }
    staged.add("sweep.csv", table.into_inner()?);
    staged.commit("sweep", cfg, &inputs)?;
    Ok(())
}
