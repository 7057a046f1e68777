//! Synthetic staggered-adoption panels with known treatment effects, and a
//! Monte Carlo harness for estimator bias, RMSE and coverage.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::did::{estimate_all, DidConfig};
use crate::error::{Error, Result};
use crate::eventstudy::{aggregate_event_study, EventStudyOptions, EventStudyResult, MissingCellPolicy};
use crate::ifect::{estimate_ifect, IfectConfig};
use crate::inference::{replicate_rng, BootstrapSpec, ClusterScheme};
use crate::panel::{build_cohort_index, CohortPanel, OutcomeKind, PanelBuilder, RowInput, Year};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpOutcome {
    Linear,
    #[default]
    Binary,
}

/// Effect of treatment at event time `e ≥ 0`; zero before treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrueEffect {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    /// Listed event times; unlisted ones have no effect.
    Table {
        #[serde(with = "event_keys")]
        values: BTreeMap<i32, f64>,
    },
}

/// Event-time keyed maps with the keys written as strings, which survives the
/// buffering of tagged enums in text formats.
mod event_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &BTreeMap<i32, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(values.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<i32, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.trim().parse().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

impl TrueEffect {
    pub fn at(&self, e: i32) -> f64 {
        if e < 0 {
            return 0.0;
        }
        match self {
            TrueEffect::Constant { value } => *value,
            TrueEffect::Linear { intercept, slope } => intercept + slope * e as f64,
            TrueEffect::Table { values } => values.get(&e).copied().unwrap_or(0.0),
        }
    }
}

/// Cohort choice is a multinomial logit in the unit trait `x`: every treated
/// cohort has log-odds `log(share_g / share_never) + linear·x + quadratic·(x² − 1)`
/// against never-treated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Selection {
    pub linear: f64,
    pub quadratic: f64,
}

/// Outcome loadings on the unit trait `x` and the policy covariates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateEffects {
    /// Level shift `x`.
    pub level: f64,
    /// Trend `x·τ_t`, with `τ_t` running from 0 to 1 over the years.
    pub trend: f64,
    /// Trend `(x² − 1)·τ_t`.
    pub trend_quadratic: f64,
    pub sales_ban: f64,
    pub smoking_ban: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attrition {
    #[default]
    None,
    /// Each unit is interviewed once, in one of `waves`, at an age drawn
    /// from `[min_age, max_age]`, and observed back to age `min_age` or the
    /// first panel year, at most `history_cap` years.
    RetrospectiveWaves {
        waves: Vec<Year>,
        min_age: u32,
        max_age: u32,
        history_cap: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub n_units: usize,
    pub years: (Year, Year),
    pub cohort_shares: BTreeMap<Year, f64>,
    pub never_treated_share: f64,
    pub true_effect: TrueEffect,
    pub factor_rank: usize,
    pub loading_adoption_correlation: f64,
    /// Standard deviation of the factor term `λ_i'f_t`.
    pub factor_scale: f64,
    pub selection: Selection,
    pub covariate_effects: CovariateEffects,
    pub baseline: f64,
    pub unit_effect_sd: f64,
    /// Linear drift of the year effects over the whole span.
    pub time_trend: f64,
    pub time_effect_sd: f64,
    pub noise_sd: f64,
    pub outcome_kind: DgpOutcome,
    pub attrition: Attrition,
    pub n_regions: usize,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            n_units: 1000,
            years: (1993, 2017),
            cohort_shares: [(1999, 0.2), (2004, 0.2), (2008, 0.2), (2012, 0.2)].into_iter().collect(),
            never_treated_share: 0.2,
            true_effect: TrueEffect::Constant { value: -0.05 },
            factor_rank: 0,
            loading_adoption_correlation: 0.0,
            factor_scale: 0.0,
            selection: Selection::default(),
            covariate_effects: CovariateEffects::default(),
            baseline: 0.3,
            unit_effect_sd: 0.08,
            time_trend: -0.05,
            time_effect_sd: 0.01,
            noise_sd: 0.0,
            outcome_kind: DgpOutcome::Binary,
            attrition: Attrition::None,
            n_regions: 26,
            seed: 42,
        }
    }
}

pub const BINARY_CLAMP: (f64, f64) = (0.01, 0.99);

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        let (t0, t1) = self.years;
        if t0 >= t1 {
            return bad(format!("year range {t0}..={t1} needs at least two years"));
        }
        if self.n_units == 0 {
            return bad("n_units must be positive".into());
        }
        let total: f64 = self.cohort_shares.values().sum::<f64>() + self.never_treated_share;
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("cohort and never-treated shares sum to {total}, not 1"));
        }
        if self.cohort_shares.values().chain([&self.never_treated_share]).any(|s| *s < 0.0) {
            return bad("shares must be non-negative".into());
        }
        for &g in self.cohort_shares.keys() {
            if g <= t0 || g > t1 {
                return bad(format!("cohort {g} must lie in {}..={t1}", t0 + 1));
            }
        }
        if self.factor_rank > 2 {
            return bad(format!("factor_rank {} exceeds 2", self.factor_rank));
        }
        if !(-1.0..=1.0).contains(&self.loading_adoption_correlation) {
            return bad("loading_adoption_correlation must lie in [-1, 1]".into());
        }
        for (name, v) in [
            ("noise_sd", self.noise_sd),
            ("unit_effect_sd", self.unit_effect_sd),
            ("time_effect_sd", self.time_effect_sd),
            ("factor_scale", self.factor_scale),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.n_regions == 0 {
            return bad("n_regions must be positive".into());
        }
        if self.never_treated_share == 0.0 && (self.selection.linear != 0.0 || self.selection.quadratic != 0.0) {
            return bad("selection on x needs a never-treated share".into());
        }
        if let Attrition::RetrospectiveWaves {
            waves, min_age, max_age, ..
        } = &self.attrition
        {
            if waves.is_empty() || waves.iter().any(|w| *w < t0 || *w > t1) {
                return bad("interview waves must be non-empty and inside the year range".into());
            }
            if min_age > max_age {
                return bad("min_age exceeds max_age".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub g: Year,
    pub t: Year,
    pub att: f64,
    pub n: usize,
}

/// Realized average effects over observed treated cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub att_by_event: BTreeMap<i32, f64>,
    pub n_by_event: BTreeMap<i32, usize>,
    pub cells: Vec<CellTruth>,
}

impl GroundTruth {
    /// Effect at `e`: the realized average for `e ≥ 0`, zero before.
    pub fn att(&self, e: i32) -> Option<f64> {
        if e < 0 {
            Some(0.0)
        } else {
            self.att_by_event.get(&e).copied()
        }
    }
}

struct Globals {
    xi: Vec<f64>,
    factors: Vec<[f64; 2]>,
    sales_year: Vec<Option<Year>>,
    smoking_year: Vec<Option<Year>>,
    /// Timing score per category (cohorts ascending, then never-treated),
    /// standardized over the expected category mix.
    timing: Vec<f64>,
    categories: Vec<(Option<Year>, f64)>,
}

const GLOBAL_STREAM: u64 = u64::MAX;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn globals(spec: &DgpSpec) -> Globals {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(GLOBAL_STREAM);
    let (t0, t1) = spec.years;
    let n_years = (t1 - t0 + 1) as usize;
    let tau = |k: usize| k as f64 / (n_years - 1) as f64;
    let xi = (0..n_years)
        .map(|k| spec.time_trend * tau(k) + spec.time_effect_sd * normal(&mut rng))
        .collect();
    // trend factor plus a cycle, each with a little noise, standardized
    let mut factors: Vec<[f64; 2]> = (0..n_years)
        .map(|k| {
            let a = 2.0 * tau(k) - 1.0 + 0.3 * normal(&mut rng);
            let b = (2.0 * std::f64::consts::PI * tau(k)).sin() + 0.3 * normal(&mut rng);
            [a, b]
        })
        .collect();
    for q in 0..2 {
        let mean = factors.iter().map(|f| f[q]).sum::<f64>() / n_years as f64;
        let sd = (factors.iter().map(|f| (f[q] - mean).powi(2)).sum::<f64>() / n_years as f64).sqrt();
        for f in &mut factors {
            f[q] = (f[q] - mean) / sd;
        }
    }
    let mut policy_year = || {
        let y = rng.random_range(t0 + 1..=t1 + 6);
        (y <= t1).then_some(y)
    };
    let sales_year = (0..spec.n_regions).map(|_| policy_year()).collect();
    let smoking_year = (0..spec.n_regions).map(|_| policy_year()).collect();

    let mut categories: Vec<(Option<Year>, f64)> = spec.cohort_shares.iter().map(|(g, s)| (Some(*g), *s)).collect();
    categories.push((None, spec.never_treated_share));
    let k = categories.len() - 1;
    let raw: Vec<f64> = (0..=k).map(|c| if c < k { (k - c) as f64 } else { 0.0 }).collect();
    let mean: f64 = raw.iter().zip(&categories).map(|(r, c)| r * c.1).sum();
    let var: f64 = raw.iter().zip(&categories).map(|(r, c)| (r - mean).powi(2) * c.1).sum();
    let sd = var.sqrt();
    let timing = raw.iter().map(|r| if sd > 0.0 { (r - mean) / sd } else { 0.0 }).collect();
    Globals {
        xi,
        factors,
        sales_year,
        smoking_year,
        timing,
        categories,
    }
}

fn draw_category(spec: &DgpSpec, g: &Globals, x: f64, rng: &mut ChaCha8Rng) -> usize {
    let never = g.categories.len() - 1;
    let tilt = spec.selection.linear * x + spec.selection.quadratic * (x * x - 1.0);
    let weights: Vec<f64> = g
        .categories
        .iter()
        .enumerate()
        .map(|(c, (_, share))| if c == never || *share == 0.0 { *share } else { share * tilt.exp() })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (c, w) in weights.iter().enumerate() {
        if u < *w {
            return c;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(never)
}

struct UnitDraw {
    id: String,
    region: String,
    cohort: Option<Year>,
    x: f64,
    gender: u8,
    rows: Vec<(Year, u32, Option<f64>, f64, f64, f64)>,
}

fn draw_unit(spec: &DgpSpec, g: &Globals, i: usize, width: usize) -> UnitDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let (t0, t1) = spec.years;
    let n_years = (t1 - t0 + 1) as usize;
    let x = normal(&mut rng);
    let cat = draw_category(spec, g, x, &mut rng);
    let cohort = g.categories[cat].0;
    let regions_per_cat = spec.n_regions.div_ceil(g.categories.len()).max(1);
    let region_ix = (cat * regions_per_cat + rng.random_range(0..regions_per_cat)) % spec.n_regions;
    let alpha = spec.unit_effect_sd * normal(&mut rng) + spec.covariate_effects.level * x;
    let rho = spec.loading_adoption_correlation;
    let mut lambda = [0.0; 2];
    for l in lambda.iter_mut().take(spec.factor_rank) {
        *l = spec.factor_scale * (rho * g.timing[cat] + (1.0 - rho * rho).sqrt() * normal(&mut rng));
    }
    let gender = u8::from(rng.random::<bool>());
    let (first, last, age_last) = match &spec.attrition {
        Attrition::None => {
            let age0 = rng.random_range(15..=70u32);
            (t0, t1, age0 + (t1 - t0) as u32)
        }
        Attrition::RetrospectiveWaves {
            waves,
            min_age,
            max_age,
            history_cap,
        } => {
            let wave = waves[rng.random_range(0..waves.len())];
            let age = rng.random_range(*min_age..=*max_age);
            let mut start = (wave - (age - min_age) as Year).max(t0);
            if let Some(cap) = history_cap {
                start = start.max(wave - *cap as Year + 1);
            }
            (start, wave, age)
        }
    };
    let mut rows = Vec::with_capacity(n_years);
    for year in first..=last {
        let k = (year - t0) as usize;
        let tau = k as f64 / (n_years - 1) as f64;
        let sales = f64::from(u8::from(g.sales_year[region_ix].is_some_and(|y| year >= y)));
        let smoking = f64::from(u8::from(g.smoking_year[region_ix].is_some_and(|y| year >= y)));
        let ce = &spec.covariate_effects;
        let factor: f64 = lambda.iter().zip(g.factors[k]).map(|(l, f)| l * f).sum();
        let index0 = spec.baseline
            + alpha
            + g.xi[k]
            + factor
            + ce.trend * x * tau
            + ce.trend_quadratic * (x * x - 1.0) * tau
            + ce.sales_ban * sales
            + ce.smoking_ban * smoking;
        let effect = cohort.map_or(0.0, |gy| spec.true_effect.at(year - gy));
        let treated = cohort.is_some_and(|gy| year >= gy);
        let (y, truth) = match spec.outcome_kind {
            DgpOutcome::Linear => {
                let eps = if spec.noise_sd > 0.0 { spec.noise_sd * normal(&mut rng) } else { 0.0 };
                (index0 + if treated { effect } else { 0.0 } + eps, effect)
            }
            DgpOutcome::Binary => {
                let (lo, hi) = BINARY_CLAMP;
                let p0 = index0.clamp(lo, hi);
                let p1 = (index0 + effect).clamp(lo, hi);
                let u: f64 = rng.random();
                let p = if treated { p1 } else { p0 };
                (f64::from(u8::from(u < p)), p1 - p0)
            }
        };
        let age = age_last - (last - year) as u32;
        rows.push((year, age, Some(y), truth, sales, smoking));
    }
    UnitDraw {
        id: format!("u{i:0width$}"),
        region: format!("r{region_ix:02}"),
        cohort,
        x,
        gender,
        rows,
    }
}

/// Draws a panel and the effects it realizes.
pub fn generate(spec: &DgpSpec) -> Result<(CohortPanel, GroundTruth)> {
    spec.validate()?;
    let g = globals(spec);
    let width = (spec.n_units.max(2) - 1).to_string().len();
    let units: Vec<UnitDraw> = (0..spec.n_units)
        .into_par_iter()
        .map(|i| draw_unit(spec, &g, i, width))
        .collect();
    let n_rows = units.iter().map(|u| u.rows.len()).sum();
    let mut builder = PanelBuilder::with_capacity(
        vec!["x".to_owned(), "sales_ban".to_owned(), "smoking_ban".to_owned()],
        n_rows,
    );
    let mut cells: BTreeMap<(Year, Year), (f64, usize)> = BTreeMap::new();
    for u in &units {
        for &(year, age, y, truth, sales, smoking) in &u.rows {
            builder.push(RowInput {
                unit: &u.id,
                region: &u.region,
                year,
                outcome: y,
                treated: u.cohort.is_some_and(|gy| year >= gy),
                age,
                gender: u.gender,
                cohort: u.cohort,
                covariates: &[u.x, sales, smoking],
            });
            if let Some(gy) = u.cohort.filter(|gy| year >= *gy) {
                let c = cells.entry((gy, year)).or_insert((0.0, 0));
                c.0 += truth;
                c.1 += 1;
            }
        }
    }
    let kind = match spec.outcome_kind {
        DgpOutcome::Linear => OutcomeKind::Continuous,
        DgpOutcome::Binary => OutcomeKind::Binary,
    };
    let panel = builder.finish(kind)?;
    let mut by_event: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    let mut truth = GroundTruth::default();
    for (&(gy, t), &(sum, n)) in &cells {
        truth.cells.push(CellTruth {
            g: gy,
            t,
            att: sum / n as f64,
            n,
        });
        let e = by_event.entry(t - gy).or_insert((0.0, 0));
        e.0 += sum;
        e.1 += n;
    }
    for (e, (sum, n)) in by_event {
        truth.att_by_event.insert(e, sum / n as f64);
        truth.n_by_event.insert(e, n);
    }
    Ok((panel, truth))
}

/// Estimator run by the benchmark harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BenchEstimator {
    Did {
        #[serde(default)]
        config: DidConfig,
    },
    Ifect {
        #[serde(default)]
        config: IfectConfig,
        /// Bootstrap for intervals; without it only bias and RMSE are reported.
        #[serde(default)]
        bootstrap: Option<BootstrapSpec>,
    },
}

impl BenchEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            BenchEstimator::Did { .. } => "did",
            BenchEstimator::Ifect { .. } => "ifect",
        }
    }

    /// Event-study estimates for one panel plus the rank used (IFEct only).
    pub fn run(&self, panel: &CohortPanel, seed: u64) -> Result<(EventStudyResult, Option<usize>)> {
        let scheme = ClusterScheme::by_unit(panel.n_units());
        match self {
            BenchEstimator::Did { config } => {
                let index = build_cohort_index(panel);
                let cells = estimate_all(panel, &index, config)?;
                let options = EventStudyOptions {
                    horizon: config.window,
                    base_period: config.base_period,
                    on_missing: MissingCellPolicy::DropEventTime,
                };
                Ok((aggregate_event_study(&cells.effects, &index, &options, &scheme)?, None))
            }
            BenchEstimator::Ifect { config, bootstrap } => {
                let config = IfectConfig { seed, ..config.clone() };
                let boot = bootstrap.map(|b| BootstrapSpec { seed, ..b });
                let r = estimate_ifect(panel, &config, &scheme, boot.as_ref())?;
                Ok((r.event_study, Some(r.model.rank)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub spec: String,
    pub estimator: String,
    pub event_time: i32,
    pub reps: usize,
    pub mean_truth: f64,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    /// Monte Carlo standard error of the mean bias.
    pub mc_se: f64,
    pub rmse: f64,
    /// Share of intervals covering the truth; `NaN` without intervals.
    pub coverage: f64,
    /// Share of `|t| > 1.96` against zero.
    pub rejection_rate: f64,
    pub mean_rank: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub failed_reps: BTreeMap<String, usize>,
    /// Wall-clock per `spec/estimator`; not part of the deterministic output.
    #[serde(skip)]
    pub timings: BTreeMap<String, Duration>,
}

/// Seed of replicate `rep` of a spec seeded with `seed`.
pub fn replicate_seed(seed: u64, rep: u64) -> u64 {
    replicate_rng(seed, rep).next_u64()
}

#[derive(Default)]
struct Tally {
    truth: f64,
    est: f64,
    bias: f64,
    bias2: f64,
    covered: usize,
    with_ci: usize,
    rejected: usize,
    with_se: usize,
    n: usize,
}

/// Runs every estimator on `reps` draws of every spec.
pub fn benchmark(specs: &[(String, DgpSpec)], estimators: &[BenchEstimator], reps: usize) -> Result<BenchmarkReport> {
    if specs.is_empty() || estimators.is_empty() || reps == 0 {
        return Err(Error::InvalidConfig(
            "benchmark needs at least one spec, one estimator and one replicate".into(),
        ));
    }
    let mut report = BenchmarkReport {
        rows: Vec::new(),
        failed_reps: BTreeMap::new(),
        timings: BTreeMap::new(),
    };
    for (label, spec) in specs {
        spec.validate()?;
        for est in estimators {
            let start = Instant::now();
            let outcomes: Vec<Option<(EventStudyResult, Option<usize>, GroundTruth)>> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = replicate_seed(spec.seed, rep as u64);
                    let draw = DgpSpec { seed, ..spec.clone() };
                    let run = generate(&draw).and_then(|(panel, truth)| {
                        est.run(&panel, seed).map(|(r, rank)| (r, rank, truth))
                    });
                    match run {
                        Ok(v) => Some(v),
                        Err(e) => {
                            log::warn!("{label}/{} replicate {rep} failed: {e}", est.name());
                            None
                        }
                    }
                })
                .collect();
            let key = format!("{label}/{}", est.name());
            report.timings.insert(key.clone(), start.elapsed());
            report
                .failed_reps
                .insert(key, outcomes.iter().filter(|o| o.is_none()).count());

            let mut tallies: BTreeMap<i32, Tally> = BTreeMap::new();
            let mut ranks = Vec::new();
            for (result, rank, truth) in outcomes.iter().flatten() {
                ranks.extend(rank.map(|r| r as f64));
                for p in &result.estimates {
                    let Some(tv) = truth.att(p.event_time) else {
                        continue;
                    };
                    let t = tallies.entry(p.event_time).or_default();
                    let bias = p.estimate - tv;
                    t.truth += tv;
                    t.est += p.estimate;
                    t.bias += bias;
                    t.bias2 += bias * bias;
                    t.n += 1;
                    if p.ci_lo.is_finite() && p.ci_hi.is_finite() {
                        t.with_ci += 1;
                        t.covered += usize::from(p.ci_lo <= tv && tv <= p.ci_hi);
                    }
                    if p.std_error.is_finite() {
                        t.with_se += 1;
                        t.rejected += usize::from(p.p_value < 0.05);
                    }
                }
            }
            let mean_rank = (!ranks.is_empty()).then(|| ranks.iter().sum::<f64>() / ranks.len() as f64);
            for (e, t) in tallies {
                let n = t.n as f64;
                let mean_bias = t.bias / n;
                let var = if t.n > 1 { (t.bias2 - n * mean_bias * mean_bias) / (n - 1.0) } else { f64::NAN };
                let share = |a: usize, b: usize| if b > 0 { a as f64 / b as f64 } else { f64::NAN };
                report.rows.push(BenchmarkRow {
                    spec: label.clone(),
                    estimator: est.name().to_owned(),
                    event_time: e,
                    reps: t.n,
                    mean_truth: t.truth / n,
                    mean_estimate: t.est / n,
                    mean_bias,
                    mc_se: (var.max(0.0) / n).sqrt(),
                    rmse: (t.bias2 / n).sqrt(),
                    coverage: share(t.covered, t.with_ci),
                    rejection_rate: share(t.rejected, t.with_se),
                    mean_rank,
                });
            }
        }
    }
    Ok(report)
}

pub fn write_benchmark_csv<W: std::io::Write>(report: &BenchmarkReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "spec",
        "estimator",
        "event_time",
        "reps",
        "mean_truth",
        "mean_estimate",
        "mean_bias",
        "mc_se",
        "rmse",
        "coverage",
        "rejection_rate",
        "mean_rank",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.spec.clone(),
            r.estimator.clone(),
            r.event_time.to_string(),
            r.reps.to_string(),
            r.mean_truth.to_string(),
            r.mean_estimate.to_string(),
            r.mean_bias.to_string(),
            r.mc_se.to_string(),
            r.rmse.to_string(),
            r.coverage.to_string(),
            r.rejection_rate.to_string(),
            r.mean_rank.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::did::{estimate_group_time, ControlGroup};
    use crate::panel::validate_panel_with;

    fn small() -> DgpSpec {
        DgpSpec {
            n_units: 200,
            ..Default::default()
        }
    }

    #[test]
    fn null_effect_has_zero_truth() {
        let spec = DgpSpec {
            true_effect: TrueEffect::Constant { value: 0.0 },
            ..small()
        };
        let (_, truth) = generate(&spec).unwrap();
        assert!(truth.att_by_event.values().all(|v| *v == 0.0));
    }

    #[test]
    fn treated_counts_match_recount() {
        let spec = DgpSpec {
            attrition: Attrition::RetrospectiveWaves {
                waves: vec![1997, 2002, 2007, 2012, 2017],
                min_age: 15,
                max_age: 80,
                history_cap: None,
            },
            ..small()
        };
        let (panel, truth) = generate(&spec).unwrap();
        let mut recount: BTreeMap<i32, usize> = BTreeMap::new();
        for r in 0..panel.n_rows() {
            if panel.treated(r) {
                let u = panel.unit_of_row(r);
                *recount.entry(panel.year(r) - panel.first_treated(u).unwrap()).or_default() += 1;
            }
        }
        assert_eq!(recount, truth.n_by_event);
    }

    #[test]
    fn generated_panels_revalidate() {
        let (panel, _) = generate(&small()).unwrap();
        let again = validate_panel_with(panel.to_observations(), OutcomeKind::Binary).unwrap();
        assert_eq!(again.n_rows(), panel.n_rows());
        assert_eq!(panel.n_rows(), 200 * 25);
    }

    #[test]
    fn same_seed_same_panel() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&DgpSpec { seed: 43, ..small() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn noiseless_linear_did_is_exact() {
        let spec = DgpSpec {
            outcome_kind: DgpOutcome::Linear,
            noise_sd: 0.0,
            true_effect: TrueEffect::Linear {
                intercept: -0.05,
                slope: -0.01,
            },
            ..small()
        };
        let (panel, truth) = generate(&spec).unwrap();
        let index = build_cohort_index(&panel);
        for control in [ControlGroup::NotYetTreated, ControlGroup::NeverTreated] {
            let cfg = DidConfig {
                control_group: control,
                ..Default::default()
            };
            for cell in truth.cells.iter().filter(|c| c.t - c.g <= 5) {
                match estimate_group_time(&panel, &index, cell.g, cell.t, &cfg) {
                    Ok(e) => assert!((e.estimate - cell.att).abs() < 1e-10, "{cell:?} {}", e.estimate),
                    Err(Error::EmptyComparisonSet { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn shares_must_sum_to_one() {
        let spec = DgpSpec {
            never_treated_share: 0.5,
            ..small()
        };
        assert!(matches!(generate(&spec), Err(Error::InfeasibleSpec(_))));
    }

    #[test]
    fn benchmark_is_deterministic() {
        let specs = vec![("s".to_string(), DgpSpec { n_units: 120, ..Default::default() })];
        let est = vec![BenchEstimator::Did {
            config: DidConfig {
                window: (-2, 2),
                ..Default::default()
            },
        }];
        let a = benchmark(&specs, &est, 1).unwrap();
        let b = benchmark(&specs, &est, 1).unwrap();
        assert_eq!(a.rows, b.rows);
        assert!(!a.rows.is_empty());
    }
}
