//! Dated regional policy adoptions coded into annual indicators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Year;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    BillboardBan,
    SalesBan,
    SmokingBan,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::BillboardBan, PolicyKind::SalesBan, PolicyKind::SmokingBan];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::BillboardBan => "billboard_ban",
            PolicyKind::SalesBan => "sales_ban",
            PolicyKind::SmokingBan => "smoking_ban",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "billboard_ban" | "billboard" => Ok(PolicyKind::BillboardBan),
            "sales_ban" | "sales" => Ok(PolicyKind::SalesBan),
            "smoking_ban" | "smoking" => Ok(PolicyKind::SmokingBan),
            _ => Err(Error::UnknownPolicyKind(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyEvent {
    pub region_id: String,
    pub kind: PolicyKind,
    pub effective_date: NaiveDate,
}

pub fn parse_date(value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value.trim(), "%Y-%m-%d").map_err(|e| Error::DateParse {
        value: value.to_owned(),
        reason: e.to_string(),
    })
}

/// How an effective date maps to the first treated calendar year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateRule {
    /// The calendar year containing the effective date is treated.
    #[default]
    CalendarYear,
    /// The year counts only if the policy took effect before July 1;
    /// otherwise treatment starts the following year.
    MidYear,
}

impl DateRule {
    pub fn first_year(self, date: NaiveDate) -> Year {
        match self {
            DateRule::CalendarYear => date.year(),
            DateRule::MidYear if date.month() < 7 => date.year(),
            DateRule::MidYear => date.year() + 1,
        }
    }
}

impl FromStr for DateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "calendar_year" => Ok(DateRule::CalendarYear),
            "mid_year" => Ok(DateRule::MidYear),
            other => Err(Error::InvalidConfig(format!("unknown date rule {other:?}"))),
        }
    }
}

/// Annual indicators of one region in one year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyIndicators {
    pub billboard: bool,
    pub sales: bool,
    pub smoking: bool,
}

impl PolicyIndicators {
    pub fn get(&self, kind: PolicyKind) -> bool {
        match kind {
            PolicyKind::BillboardBan => self.billboard,
            PolicyKind::SalesBan => self.sales,
            PolicyKind::SmokingBan => self.smoking,
        }
    }
}

/// Region × year policy indicators, stored as first coded years per kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionTreatmentTable {
    year_range: (Year, Year),
    first_years: BTreeMap<String, [Option<Year>; 3]>,
}

impl RegionTreatmentTable {
    pub fn year_range(&self) -> (Year, Year) {
        self.year_range
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.first_years.keys().map(String::as_str)
    }

    /// First coded year of a policy in a region (may lie outside the range).
    pub fn first_year(&self, region: &str, kind: PolicyKind) -> Option<Year> {
        self.first_years.get(region).and_then(|s| s[kind.slot()])
    }

    /// Indicators for `(region, year)`; `None` when the pair is not covered.
    pub fn indicators(&self, region: &str, year: Year) -> Option<PolicyIndicators> {
        if year < self.year_range.0 || year > self.year_range.1 {
            return None;
        }
        let slots = self.first_years.get(region)?;
        let on = |k: PolicyKind| slots[k.slot()].is_some_and(|g| year >= g);
        Some(PolicyIndicators {
            billboard: on(PolicyKind::BillboardBan),
            sales: on(PolicyKind::SalesBan),
            smoking: on(PolicyKind::SmokingBan),
        })
    }

    /// All rows in (region, year) order.
    pub fn rows(&self) -> Vec<(String, Year, PolicyIndicators)> {
        let mut out = Vec::new();
        for region in self.first_years.keys() {
            for year in self.year_range.0..=self.year_range.1 {
                out.push((region.clone(), year, self.indicators(region, year).expect("covered")));
            }
        }
        out
    }

    /// Rebuilds a table from explicit annual rows, checking that each
    /// indicator is absorbing and that every region covers the full range.
    pub fn from_rows(rows: &[(String, Year, PolicyIndicators)]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyPanel)?;
        let mut lo = first.1;
        let mut hi = first.1;
        let mut by_region: BTreeMap<String, BTreeMap<Year, PolicyIndicators>> = BTreeMap::new();
        for (region, year, ind) in rows {
            lo = lo.min(*year);
            hi = hi.max(*year);
            if by_region.entry(region.clone()).or_default().insert(*year, *ind).is_some() {
                return Err(Error::DuplicateKey {
                    unit: region.clone(),
                    year: *year,
                });
            }
        }
        let mut first_years = BTreeMap::new();
        for (region, years) in by_region {
            let mut slots = [None; 3];
            for year in lo..=hi {
                let ind = years.get(&year).ok_or_else(|| Error::MissingPolicyYear {
                    region: region.clone(),
                    year,
                })?;
                for kind in PolicyKind::ALL {
                    match (slots[kind.slot()], ind.get(kind)) {
                        (None, true) => slots[kind.slot()] = Some(year),
                        (Some(_), false) => {
                            return Err(Error::NonAbsorbing {
                                unit: format!("{region}/{kind}"),
                                year,
                            })
                        }
                        _ => {}
                    }
                }
            }
            first_years.insert(region, slots);
        }
        Ok(Self {
            year_range: (lo, hi),
            first_years,
        })
    }
}

/// Codes events into annual indicators for the regions that appear in them.
pub fn code_annual_indicators(
    events: &[PolicyEvent],
    year_range: (Year, Year),
    rule: DateRule,
) -> Result<RegionTreatmentTable> {
    code_annual_indicators_for(&[], events, year_range, rule)
}

/// Like [`code_annual_indicators`], additionally listing regions that may
/// have no event at all (they are coded 0 throughout).
pub fn code_annual_indicators_for(
    regions: &[String],
    events: &[PolicyEvent],
    year_range: (Year, Year),
    rule: DateRule,
) -> Result<RegionTreatmentTable> {
    if year_range.0 > year_range.1 {
        return Err(Error::InvalidConfig(format!(
            "empty year range {}..{}",
            year_range.0, year_range.1
        )));
    }
    let mut first_years: BTreeMap<String, [Option<Year>; 3]> =
        regions.iter().map(|r| (r.clone(), [None; 3])).collect();
    for ev in events {
        let slots = first_years.entry(ev.region_id.clone()).or_insert([None; 3]);
        let slot = &mut slots[ev.kind.slot()];
        if slot.is_some() {
            return Err(Error::DuplicateEvent {
                region: ev.region_id.clone(),
                kind: ev.kind.to_string(),
            });
        }
        *slot = Some(rule.first_year(ev.effective_date));
    }
    Ok(RegionTreatmentTable {
        year_range,
        first_years,
    })
}

/// Number of regions with the policy in force, per year of the range.
pub fn adoption_curve(table: &RegionTreatmentTable, kind: PolicyKind) -> Vec<(Year, usize)> {
    (table.year_range.0..=table.year_range.1)
        .map(|year| {
            let n = table
                .regions()
                .filter(|r| table.indicators(r, year).is_some_and(|i| i.get(kind)))
                .count();
            (year, n)
        })
        .collect()
}

/// Regions and events from a `region_id,policy_kind,effective_date` CSV.
/// Rows with an empty date declare a region without that policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicySchedule {
    pub regions: Vec<String>,
    pub events: Vec<PolicyEvent>,
}

impl PolicySchedule {
    pub fn code(&self, year_range: (Year, Year), rule: DateRule) -> Result<RegionTreatmentTable> {
        code_annual_indicators_for(&self.regions, &self.events, year_range, rule)
    }
}

#[derive(Deserialize)]
struct EventRow {
    region_id: String,
    policy_kind: String,
    effective_date: String,
}

pub fn read_policy_events<R: Read>(reader: R, source: &str) -> Result<PolicySchedule> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut regions = BTreeSet::new();
    let mut events = Vec::new();
    for (i, row) in rdr.deserialize::<EventRow>().enumerate() {
        let line = i + 2;
        let wrap = |e: Error| Error::Parse {
            path: source.to_owned(),
            line,
            reason: e.to_string(),
        };
        let row = row.map_err(|e| wrap(e.into()))?;
        let kind: PolicyKind = row.policy_kind.parse().map_err(wrap)?;
        regions.insert(row.region_id.clone());
        if row.effective_date.is_empty() {
            continue;
        }
        let effective_date = parse_date(&row.effective_date).map_err(wrap)?;
        events.push(PolicyEvent {
            region_id: row.region_id,
            kind,
            effective_date,
        });
    }
    Ok(PolicySchedule {
        regions: regions.into_iter().collect(),
        events,
    })
}

pub fn write_policy_table<W: Write>(table: &RegionTreatmentTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["region_id", "year", "billboard", "sales", "smoking"])?;
    for (region, year, ind) in table.rows() {
        w.write_record([
            region,
            year.to_string(),
            (ind.billboard as u8).to_string(),
            (ind.sales as u8).to_string(),
            (ind.smoking as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct TableRow {
    region_id: String,
    year: Year,
    billboard: u8,
    sales: u8,
    smoking: u8,
}

pub fn read_policy_table<R: Read>(reader: R, source: &str) -> Result<RegionTreatmentTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<TableRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: source.to_owned(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        rows.push((
            row.region_id,
            row.year,
            PolicyIndicators {
                billboard: row.billboard == 1,
                sales: row.sales == 1,
                smoking: row.smoking == 1,
            },
        ));
    }
    RegionTreatmentTable::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(region: &str, kind: PolicyKind, date: &str) -> PolicyEvent {
        PolicyEvent {
            region_id: region.into(),
            kind,
            effective_date: parse_date(date).unwrap(),
        }
    }

    #[test]
    fn february_ban_counts_in_its_year() {
        let t = code_annual_indicators(
            &[event("BS", PolicyKind::BillboardBan, "1997-02-06")],
            (1993, 2017),
            DateRule::CalendarYear,
        )
        .unwrap();
        assert_eq!(t.first_year("BS", PolicyKind::BillboardBan), Some(1997));
        assert!(!t.indicators("BS", 1996).unwrap().billboard);
        assert!(t.indicators("BS", 1997).unwrap().billboard);
    }

    #[test]
    fn july_ban_under_both_rules() {
        let ev = [event("ZH", PolicyKind::BillboardBan, "2008-07-01")];
        let cal = code_annual_indicators(&ev, (1993, 2017), DateRule::CalendarYear).unwrap();
        assert!(!cal.indicators("ZH", 2007).unwrap().billboard);
        assert!(cal.indicators("ZH", 2008).unwrap().billboard);
        let mid = code_annual_indicators(&ev, (1993, 2017), DateRule::MidYear).unwrap();
        assert_eq!(mid.first_year("ZH", PolicyKind::BillboardBan), Some(2009));
    }

    #[test]
    fn region_without_event_stays_untreated() {
        let t = code_annual_indicators_for(
            &["SZ".to_string()],
            &[event("SZ", PolicyKind::SmokingBan, "2010-05-01")],
            (1993, 2017),
            DateRule::CalendarYear,
        )
        .unwrap();
        assert!((1993..=2017).all(|y| !t.indicators("SZ", y).unwrap().billboard));
        assert_eq!(t.indicators("XX", 2000), None);
        assert_eq!(t.indicators("SZ", 2018), None);
    }

    #[test]
    fn single_event_curve_is_a_step() {
        let t = code_annual_indicators(
            &[event("A", PolicyKind::SalesBan, "2005-03-01")],
            (2000, 2010),
            DateRule::CalendarYear,
        )
        .unwrap();
        let curve = adoption_curve(&t, PolicyKind::SalesBan);
        for (year, n) in curve {
            assert_eq!(n, usize::from(year >= 2005));
        }
    }

    #[test]
    fn duplicate_and_bad_dates_are_errors() {
        let ev = [
            event("A", PolicyKind::SalesBan, "2005-03-01"),
            event("A", PolicyKind::SalesBan, "2006-03-01"),
        ];
        assert!(matches!(
            code_annual_indicators(&ev, (2000, 2010), DateRule::CalendarYear),
            Err(Error::DuplicateEvent { .. })
        ));
        assert!(matches!(parse_date("2005-13-01"), Err(Error::DateParse { .. })));
    }

    #[test]
    fn table_csv_round_trip() {
        let t = code_annual_indicators(
            &[
                event("A", PolicyKind::SalesBan, "2005-03-01"),
                event("B", PolicyKind::BillboardBan, "2003-09-01"),
            ],
            (2000, 2010),
            DateRule::CalendarYear,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_policy_table(&t, &mut buf).unwrap();
        let back = read_policy_table(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.rows(), t.rows());
    }

    proptest::proptest! {
        #[test]
        fn mid_year_never_earlier(days in proptest::collection::vec(0i64..9000, 1..20)) {
            let base = parse_date("1993-01-01").unwrap();
            let events: Vec<PolicyEvent> = days.iter().enumerate().map(|(i, d)| PolicyEvent {
                region_id: format!("r{i}"),
                kind: PolicyKind::BillboardBan,
                effective_date: base + chrono::Duration::days(*d),
            }).collect();
            let cal = code_annual_indicators(&events, (1993, 2020), DateRule::CalendarYear).unwrap();
            let mid = code_annual_indicators(&events, (1993, 2020), DateRule::MidYear).unwrap();
            for r in cal.regions() {
                let a = cal.first_year(r, PolicyKind::BillboardBan).unwrap();
                let b = mid.first_year(r, PolicyKind::BillboardBan).unwrap();
                proptest::prop_assert!(b >= a);
                let mut prev = false;
                for y in 1993..=2020 {
                    let on = cal.indicators(r, y).unwrap().billboard;
                    proptest::prop_assert!(on || !prev);
                    prev = on;
                }
            }
            let curve = adoption_curve(&cal, PolicyKind::BillboardBan);
            proptest::prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }
}
