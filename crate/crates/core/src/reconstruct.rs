//! Annual smoking histories rebuilt from retrospective survey answers.
//!
//! Each respondent reports a current status and, where applicable, the age
//! at initiation and at cessation (or a cessation age range). Going back from
//! the interview year, every year is coded as smoking (1), not smoking (0) or
//! unknown (missing).

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{CohortPanel, OutcomeKind, PanelBuilder, PanelObservation, RowInput, Year};
use crate::policy::{PolicyKind, RegionTreatmentTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmokerStatus {
    Never,
    Current,
    Former,
    Unknown,
}

impl FromStr for SmokerStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "never" => Ok(SmokerStatus::Never),
            "current" => Ok(SmokerStatus::Current),
            "former" => Ok(SmokerStatus::Former),
            "unknown" | "" => Ok(SmokerStatus::Unknown),
            other => Err(Error::InvalidConfig(format!("unknown smoker status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub respondent_id: String,
    pub survey_year: Year,
    pub age_at_survey: u32,
    /// 0 = male, 1 = female.
    pub gender: u8,
    pub region_id: String,
    pub status: SmokerStatus,
    pub initiation_age: Option<u32>,
    pub cessation_age: Option<u32>,
    /// Inclusive cessation age range, recorded instead of a point age.
    pub cessation_range: Option<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub min_age: u32,
    pub earliest_year: Year,
    /// Keep at most this many years before (and including) the interview.
    pub history_cap_years: Option<u32>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            min_age: 15,
            earliest_year: 1993,
            history_cap_years: None,
        }
    }
}

impl SurveyRecord {
    fn inconsistent(&self, reason: impl Into<String>) -> Error {
        Error::InconsistentAges {
            id: self.respondent_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the status/age field combination.
    pub fn check(&self) -> Result<()> {
        let age = self.age_at_survey;
        match self.status {
            SmokerStatus::Unknown => return Err(Error::UnknownStatus(self.respondent_id.clone())),
            SmokerStatus::Never => {
                if self.initiation_age.is_some() || self.cessation_age.is_some() || self.cessation_range.is_some() {
                    return Err(self.inconsistent("never smoker with initiation or cessation age"));
                }
            }
            SmokerStatus::Current => {
                if self.initiation_age.is_none() {
                    return Err(self.inconsistent("current smoker without initiation age"));
                }
                if self.cessation_age.is_some() || self.cessation_range.is_some() {
                    return Err(self.inconsistent("current smoker with cessation age"));
                }
            }
            SmokerStatus::Former => {
                if self.initiation_age.is_none() {
                    return Err(self.inconsistent("former smoker without initiation age"));
                }
                if self.cessation_age.is_some() == self.cessation_range.is_some() {
                    return Err(self.inconsistent("former smoker needs exactly one of cessation age or range"));
                }
            }
        }
        if let Some(init) = self.initiation_age {
            if init > age {
                return Err(self.inconsistent(format!("initiation age {init} after survey age {age}")));
            }
            if let Some(c) = self.cessation_age {
                if c < init || c > age {
                    return Err(self.inconsistent(format!("cessation age {c} outside [{init}, {age}]")));
                }
            }
            if let Some((lo, hi)) = self.cessation_range {
                if lo < init || lo > hi || hi > age {
                    return Err(self.inconsistent(format!("cessation range [{lo}, {hi}] outside [{init}, {age}]")));
                }
            }
        }
        Ok(())
    }

    /// Smoking status at a given age: `Some(1.0)`, `Some(0.0)` or `None` when
    /// it falls inside an interval-censored cessation range.
    pub fn status_at_age(&self, a: u32) -> Option<f64> {
        let smoking = |b: bool| Some(if b { 1.0 } else { 0.0 });
        match (self.status, self.initiation_age) {
            (SmokerStatus::Current, Some(init)) => smoking(a >= init),
            (SmokerStatus::Former, Some(init)) => match (self.cessation_age, self.cessation_range) {
                (Some(c), _) => smoking(a >= init && a <= c),
                (None, Some((lo, hi))) => {
                    if a < init || a > hi {
                        smoking(false)
                    } else if a <= lo {
                        smoking(true)
                    } else {
                        None
                    }
                }
                (None, None) => smoking(false),
            },
            _ => smoking(false),
        }
    }

    /// First emitted year under `config`; the interview year is always last.
    pub fn start_year(&self, config: &ReconstructionConfig) -> Year {
        let from_age = self.survey_year - (self.age_at_survey as Year - config.min_age as Year);
        let mut start = from_age.max(config.earliest_year);
        if let Some(cap) = config.history_cap_years {
            start = start.max(self.survey_year - cap as Year + 1);
        }
        start
    }
}

/// One observation per year from the start year through the survey year.
///
/// Rows carry no treatment information yet (`treated = false`); policy
/// indicators are joined by [`reconstruct_panel`].
pub fn reconstruct_history(record: &SurveyRecord, config: &ReconstructionConfig) -> Result<Vec<PanelObservation>> {
    record.check()?;
    let start = record.start_year(config);
    Ok((start..=record.survey_year)
        .map(|year| {
            let age = record.age_at_survey - (record.survey_year - year) as u32;
            PanelObservation {
                unit_id: record.respondent_id.clone(),
                region_id: record.region_id.clone(),
                year,
                outcome: record.status_at_age(age),
                treated: false,
                age,
                gender: record.gender,
                cohort: None,
                extra_covariates: BTreeMap::new(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub records_total: usize,
    pub excluded_unknown_status: usize,
    pub excluded_unknown_ids: Vec<String>,
    /// Respondents whose region adopted the policy no later than the first
    /// panel year; they have no untreated base period.
    pub excluded_always_treated: usize,
    pub rows: usize,
    pub units: usize,
}

pub const POLICY_COVARIATES: [&str; 2] = ["sales_ban", "smoking_ban"];

struct History {
    record: usize,
    start: Year,
    outcomes: Vec<Option<f64>>,
}

/// Builds the unbalanced panel: per-record histories joined with the
/// region-level billboard indicator (treatment) and the sales/smoking ban
/// indicators (covariates `sales_ban`, `smoking_ban`).
pub fn reconstruct_panel(
    records: &[SurveyRecord],
    config: &ReconstructionConfig,
    policy: &RegionTreatmentTable,
) -> Result<(CohortPanel, ReconstructionReport)> {
    if records.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let max_survey = records.iter().map(|r| r.survey_year).max().expect("non-empty");
    if config.earliest_year > max_survey {
        return Err(Error::InvalidConfig(format!(
            "earliest year {} is after the last survey year {max_survey}",
            config.earliest_year
        )));
    }
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.respondent_id.as_str()) {
            return Err(Error::DuplicateRespondent(r.respondent_id.clone()));
        }
    }

    let histories: Vec<Option<History>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| match rec.check() {
            Err(Error::UnknownStatus(_)) => Ok(None),
            Err(e) => Err(e),
            Ok(()) => {
                let start = rec.start_year(config);
                let outcomes = (start..=rec.survey_year)
                    .map(|y| rec.status_at_age(rec.age_at_survey - (rec.survey_year - y) as u32))
                    .collect();
                Ok(Some(History {
                    record: i,
                    start,
                    outcomes,
                }))
            }
        })
        .collect::<Result<_>>()?;

    let mut report = ReconstructionReport {
        records_total: records.len(),
        ..Default::default()
    };
    for (rec, h) in records.iter().zip(&histories) {
        if h.is_none() {
            report.excluded_unknown_status += 1;
            report.excluded_unknown_ids.push(rec.respondent_id.clone());
        }
    }
    let kept: Vec<&History> = histories.iter().flatten().filter(|h| !h.outcomes.is_empty()).collect();
    let t_min = kept.iter().map(|h| h.start).min().ok_or(Error::EmptyPanel)?;
    let t_max = kept
        .iter()
        .map(|h| records[h.record].survey_year)
        .max()
        .expect("non-empty");

    let names: Vec<String> = POLICY_COVARIATES.iter().map(|s| s.to_string()).collect();
    let n_rows: usize = kept.iter().map(|h| h.outcomes.len()).sum();
    let mut builder = PanelBuilder::with_capacity(names, n_rows);
    for h in kept {
        let rec = &records[h.record];
        let g = policy.first_year(&rec.region_id, PolicyKind::BillboardBan);
        if g.is_some_and(|g| g <= t_min) {
            report.excluded_always_treated += 1;
            continue;
        }
        let cohort = g.filter(|&g| g <= t_max);
        for (k, outcome) in h.outcomes.iter().enumerate() {
            let year = h.start + k as Year;
            let ind = policy
                .indicators(&rec.region_id, year)
                .ok_or_else(|| Error::MissingPolicyYear {
                    region: rec.region_id.clone(),
                    year,
                })?;
            builder.push(RowInput {
                unit: &rec.respondent_id,
                region: &rec.region_id,
                year,
                outcome: *outcome,
                treated: ind.billboard,
                age: rec.age_at_survey - (rec.survey_year - year) as u32,
                gender: rec.gender,
                cohort,
                covariates: &[ind.sales as u8 as f64, ind.smoking as u8 as f64],
            });
        }
    }
    let panel = builder.finish(OutcomeKind::Binary)?;
    report.rows = panel.n_rows();
    report.units = panel.n_units();
    Ok((panel, report))
}

pub const AGE_BANDS: [(&str, u32, u32); 4] = [
    ("15-24", 15, 24),
    ("25-44", 25, 44),
    ("45-64", 45, 64),
    ("65+", 65, u32::MAX),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComposition {
    pub group: String,
    pub share_original: Option<f64>,
    pub share_panel: Option<f64>,
    pub share_diff_pct: Option<f64>,
    pub smoking_original: Option<f64>,
    pub smoking_panel: Option<f64>,
    pub smoking_diff_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearComposition {
    pub year: Year,
    pub n_original: usize,
    pub n_panel: usize,
    pub groups: Vec<GroupComposition>,
}

/// Sample composition and smoking rates per survey year, in the interview
/// cross-section versus all reconstructed panel rows of that year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub years: Vec<YearComposition>,
}

pub const COMPOSITION_GROUPS: [&str; 7] = ["total", "women", "men", "15-24", "25-44", "45-64", "65+"];

fn group_flags(gender: u8, age: u32) -> [bool; 7] {
    let mut f = [true, gender == 1, gender == 0, false, false, false, false];
    for (k, (_, lo, hi)) in AGE_BANDS.iter().enumerate() {
        f[3 + k] = age >= *lo && age <= *hi;
    }
    f
}

#[derive(Default, Clone, Copy)]
struct Tally {
    n: usize,
    n_known: usize,
    smokers: usize,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn rel_diff_pct(original: Option<f64>, panel: Option<f64>) -> Option<f64> {
    match (original, panel) {
        (Some(o), Some(p)) if o != 0.0 => Some((p - o) / o * 100.0),
        _ => None,
    }
}

/// Compares the interview cross-section with the reconstructed panel. Only
/// respondents that made it into the panel enter the original view.
pub fn composition_report(records: &[SurveyRecord], panel: &CohortPanel) -> CompositionReport {
    let mut original: BTreeMap<Year, [Tally; 7]> = BTreeMap::new();
    for rec in records {
        if rec.status == SmokerStatus::Unknown || panel.unit_index(&rec.respondent_id).is_none() {
            continue;
        }
        let t = original.entry(rec.survey_year).or_default();
        for (k, on) in group_flags(rec.gender, rec.age_at_survey).into_iter().enumerate() {
            if on {
                t[k].n += 1;
                t[k].n_known += 1;
                t[k].smokers += usize::from(rec.status == SmokerStatus::Current);
            }
        }
    }
    let mut reconstructed: BTreeMap<Year, [Tally; 7]> = original.keys().map(|y| (*y, [Tally::default(); 7])).collect();
    for row in 0..panel.n_rows() {
        let Some(t) = reconstructed.get_mut(&panel.year(row)) else {
            continue;
        };
        for (k, on) in group_flags(panel.gender(row), panel.age(row)).into_iter().enumerate() {
            if on {
                t[k].n += 1;
                if let Some(y) = panel.outcome(row) {
                    t[k].n_known += 1;
                    t[k].smokers += usize::from(y == 1.0);
                }
            }
        }
    }
    let years = original
        .iter()
        .map(|(year, orig)| {
            let pan = &reconstructed[year];
            let groups = COMPOSITION_GROUPS
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let share_original = ratio(orig[k].n, orig[0].n);
                    let share_panel = ratio(pan[k].n, pan[0].n);
                    let smoking_original = ratio(orig[k].smokers, orig[k].n_known);
                    let smoking_panel = ratio(pan[k].smokers, pan[k].n_known);
                    GroupComposition {
                        group: name.to_string(),
                        share_original,
                        share_panel,
                        share_diff_pct: rel_diff_pct(share_original, share_panel),
                        smoking_original,
                        smoking_panel,
                        smoking_diff_pct: rel_diff_pct(smoking_original, smoking_panel),
                    }
                })
                .collect();
            YearComposition {
                year: *year,
                n_original: orig[0].n,
                n_panel: pan[0].n,
                groups,
            }
        })
        .collect();
    CompositionReport { years }
}

pub fn write_composition_csv<W: Write>(report: &CompositionReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "year",
        "group",
        "share_original",
        "share_panel",
        "share_diff_pct",
        "smoking_original",
        "smoking_panel",
        "smoking_diff_pct",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for y in &report.years {
        for g in &y.groups {
            w.write_record([
                y.year.to_string(),
                g.group.clone(),
                fmt(g.share_original),
                fmt(g.share_panel),
                fmt(g.share_diff_pct),
                fmt(g.smoking_original),
                fmt(g.smoking_panel),
                fmt(g.smoking_diff_pct),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct SurveyRow {
    respondent_id: String,
    survey_year: Year,
    age: u32,
    gender: u8,
    region_id: String,
    status: String,
    init_age: Option<u32>,
    cess_age: Option<u32>,
    cess_lo: Option<u32>,
    cess_hi: Option<u32>,
}

/// Reads survey records from CSV with header
/// `respondent_id,survey_year,age,gender,region_id,status,init_age,cess_age,cess_lo,cess_hi`.
pub fn read_survey_csv<R: Read>(reader: R, source: &str) -> Result<Vec<SurveyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SurveyRow>().enumerate() {
        let line = i + 2;
        let parse_err = |reason: String| Error::Parse {
            path: source.to_owned(),
            line,
            reason,
        };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let status = row.status.parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let cessation_range = match (row.cess_lo, row.cess_hi) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => return Err(parse_err("cess_lo and cess_hi must be given together".into())),
        };
        if row.gender > 1 {
            return Err(parse_err(format!("gender must be 0 or 1, got {}", row.gender)));
        }
        out.push(SurveyRecord {
            respondent_id: row.respondent_id,
            survey_year: row.survey_year,
            age_at_survey: row.age,
            gender: row.gender,
            region_id: row.region_id,
            status,
            initiation_age: row.init_age,
            cessation_age: row.cess_age,
            cessation_range,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{code_annual_indicators_for, DateRule};
    use proptest::prelude::*;

    fn record(id: &str, survey_year: Year, age: u32, status: SmokerStatus) -> SurveyRecord {
        SurveyRecord {
            respondent_id: id.into(),
            survey_year,
            age_at_survey: age,
            gender: 1,
            region_id: "A".into(),
            status,
            initiation_age: None,
            cessation_age: None,
            cessation_range: None,
        }
    }

    fn outcomes(rows: &[PanelObservation]) -> Vec<Option<f64>> {
        rows.iter().map(|r| r.outcome).collect()
    }

    fn no_year_floor() -> ReconstructionConfig {
        ReconstructionConfig {
            earliest_year: 1900,
            ..Default::default()
        }
    }

    #[test]
    fn former_smoker_point_cessation() {
        let mut r = record("f", 2017, 40, SmokerStatus::Former);
        r.initiation_age = Some(20);
        r.cessation_age = Some(30);
        let rows = reconstruct_history(&r, &no_year_floor()).unwrap();
        assert_eq!(rows.len(), 26);
        assert_eq!(rows[0].age, 15);
        for row in &rows {
            let expect = if (20..=30).contains(&row.age) { 1.0 } else { 0.0 };
            assert_eq!(row.outcome, Some(expect), "age {}", row.age);
        }
    }

    #[test]
    fn never_smoker_is_zero_throughout() {
        let rows = reconstruct_history(&record("n", 2017, 40, SmokerStatus::Never), &no_year_floor()).unwrap();
        assert!(rows.iter().all(|r| r.outcome == Some(0.0)));
    }

    #[test]
    fn cessation_range_is_censored() {
        let mut r = record("c", 2017, 40, SmokerStatus::Former);
        r.initiation_age = Some(20);
        r.cessation_range = Some((30, 35));
        let rows = reconstruct_history(&r, &no_year_floor()).unwrap();
        for row in &rows {
            let expect = match row.age {
                20..=30 => Some(1.0),
                31..=35 => None,
                _ => Some(0.0),
            };
            assert_eq!(row.outcome, expect, "age {}", row.age);
        }
    }

    #[test]
    fn year_floor_binds_before_age_floor() {
        let rows = reconstruct_history(&record("o", 1997, 60, SmokerStatus::Never), &Default::default()).unwrap();
        let years: Vec<Year> = rows.iter().map(|r| r.year).collect();
        assert_eq!(years, vec![1993, 1994, 1995, 1996, 1997]);
        assert_eq!(rows[0].age, 56);
    }

    #[test]
    fn history_cap_limits_span() {
        let cfg = ReconstructionConfig {
            history_cap_years: Some(5),
            ..Default::default()
        };
        let rows = reconstruct_history(&record("o", 2017, 60, SmokerStatus::Never), &cfg).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].year, 2013);
    }

    #[test]
    fn invalid_records() {
        let r = record("u", 2017, 40, SmokerStatus::Unknown);
        assert!(matches!(reconstruct_history(&r, &no_year_floor()), Err(Error::UnknownStatus(_))));
        let r = record("c", 2017, 40, SmokerStatus::Current);
        assert!(matches!(reconstruct_history(&r, &no_year_floor()), Err(Error::InconsistentAges { .. })));
        let mut r = record("f", 2017, 40, SmokerStatus::Former);
        r.initiation_age = Some(20);
        r.cessation_age = Some(30);
        r.cessation_range = Some((30, 32));
        assert!(matches!(reconstruct_history(&r, &no_year_floor()), Err(Error::InconsistentAges { .. })));
        let mut r = record("f", 2017, 40, SmokerStatus::Former);
        r.initiation_age = Some(25);
        r.cessation_age = Some(22);
        assert!(matches!(reconstruct_history(&r, &no_year_floor()), Err(Error::InconsistentAges { .. })));
    }

    fn policy() -> RegionTreatmentTable {
        code_annual_indicators_for(&["A".into(), "B".into()], &[], (1993, 2017), DateRule::CalendarYear).unwrap()
    }

    #[test]
    fn panel_concatenates_histories_and_counts_exclusions() {
        let cfg = ReconstructionConfig {
            history_cap_years: Some(10),
            ..Default::default()
        };
        let mut recs: Vec<SurveyRecord> = (0..3)
            .map(|i| record(&format!("r{i}"), 2012, 50, SmokerStatus::Never))
            .collect();
        recs.push(record("u", 2012, 50, SmokerStatus::Unknown));
        let (panel, report) = reconstruct_panel(&recs, &cfg, &policy()).unwrap();
        assert_eq!(panel.n_rows(), 30);
        assert_eq!(report.excluded_unknown_status, 1);
        assert_eq!(report.excluded_unknown_ids, vec!["u".to_string()]);
    }

    #[test]
    fn missing_policy_years_are_reported() {
        let mut r = record("x", 2012, 50, SmokerStatus::Never);
        r.region_id = "Z".into();
        assert!(matches!(
            reconstruct_panel(&[r], &Default::default(), &policy()),
            Err(Error::MissingPolicyYear { .. })
        ));
    }

    #[test]
    fn single_wave_composition_has_no_differences() {
        let mut recs = Vec::new();
        for i in 0..40u32 {
            let mut r = record(&format!("r{i}"), 2017, 16 + i * 2, SmokerStatus::Never);
            r.gender = (i % 2) as u8;
            if i % 3 == 0 {
                r.status = SmokerStatus::Current;
                r.initiation_age = Some(15);
            }
            recs.push(r);
        }
        let (panel, _) = reconstruct_panel(&recs, &Default::default(), &policy()).unwrap();
        let rep = composition_report(&recs, &panel);
        assert_eq!(rep.years.len(), 1);
        for g in &rep.years[0].groups {
            assert_eq!(g.share_original, g.share_panel, "{}", g.group);
            assert_eq!(g.smoking_original, g.smoking_panel, "{}", g.group);
            if let Some(d) = g.share_diff_pct {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn all_female_shares() {
        let recs: Vec<SurveyRecord> = (0..5)
            .map(|i| record(&format!("w{i}"), 2007, 30 + i, SmokerStatus::Never))
            .collect();
        let (panel, _) = reconstruct_panel(&recs, &Default::default(), &policy()).unwrap();
        let rep = composition_report(&recs, &panel);
        let women = &rep.years[0].groups[1];
        assert_eq!(women.share_original, Some(1.0));
        assert_eq!(women.share_panel, Some(1.0));
    }

    #[test]
    fn survey_csv_parses_ranges() {
        let text = "respondent_id,survey_year,age,gender,region_id,status,init_age,cess_age,cess_lo,cess_hi\n\
                    a,2017,40,1,ZH,former,20,,30,35\n\
                    b,2012,33,0,BE,current,18,,,\n";
        let recs = read_survey_csv(text.as_bytes(), "mem").unwrap();
        assert_eq!(recs[0].cessation_range, Some((30, 35)));
        assert_eq!(recs[1].status, SmokerStatus::Current);
        let bad = "respondent_id,survey_year,age,gender,region_id,status,init_age,cess_age,cess_lo,cess_hi\n\
                   a,2017,forty,1,ZH,never,,,,\n";
        assert!(matches!(read_survey_csv(bad.as_bytes(), "mem"), Err(Error::Parse { line: 2, .. })));
    }

    fn arb_record() -> impl Strategy<Value = SurveyRecord> {
        (15u32..90, 1995i32..2018, 0u8..3, 0u32..100, 0u32..100, any::<bool>()).prop_map(
            |(age, year, kind, a, b, ranged)| {
                let mut r = record("p", year, age, SmokerStatus::Never);
                let init = 10 + a % (age - 9);
                match kind {
                    0 => {}
                    1 => {
                        r.status = SmokerStatus::Current;
                        r.initiation_age = Some(init);
                    }
                    _ => {
                        r.status = SmokerStatus::Former;
                        r.initiation_age = Some(init);
                        // cessation strictly before the interview age
                        let stop = init + b % (age - init).max(1);
                        let stop = stop.min(age.saturating_sub(1)).max(init);
                        if ranged && stop < age - 1 {
                            r.cessation_range = Some((stop, stop + 1 + b % (age - 1 - stop)));
                        } else {
                            r.cessation_age = Some(stop);
                        }
                    }
                }
                r
            },
        )
    }

    proptest! {
        #[test]
        fn history_invariants(r in arb_record(), cap in proptest::option::of(1u32..30)) {
            prop_assume!(r.check().is_ok());
            let cfg = ReconstructionConfig { history_cap_years: cap, ..Default::default() };
            let rows = reconstruct_history(&r, &cfg).unwrap();
            let floor = (r.survey_year - (r.age_at_survey as Year - 15)).max(1993);
            for row in &rows {
                prop_assert!(row.year >= floor && row.year <= r.survey_year);
            }
            prop_assert_eq!(rows.len() as Year, (r.survey_year - r.start_year(&cfg) + 1).max(0));
            let ys = outcomes(&rows);
            match r.status {
                SmokerStatus::Current => {
                    prop_assert!(ys.windows(2).all(|w| w[0] <= w[1]));
                }
                SmokerStatus::Former if r.cessation_age.is_some() => {
                    prop_assert!(ys.iter().all(Option::is_some));
                    let seq: String = ys.iter().map(|y| if *y == Some(1.0) { '1' } else { '0' }).collect();
                    let trimmed = seq.trim_start_matches('0').trim_end_matches('0');
                    prop_assert!(!trimmed.contains('0'));
                }
                _ => {}
            }
            // cessation in the interview year itself still codes that year as smoking
            if r.cessation_range.is_none() && r.cessation_age != Some(r.age_at_survey) {
                let last = ys.last().copied().flatten();
                prop_assert_eq!(last == Some(1.0), r.status == SmokerStatus::Current);
            }
        }
    }
}
