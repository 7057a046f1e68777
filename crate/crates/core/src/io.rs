//! Long-format panel CSV and cohort index JSON.
//!
//! Header: `unit_id,region_id,year,outcome,treated,age,gender,first_treated`
//! followed by one column per extra covariate. An empty `outcome` is a
//! missing outcome; an empty `first_treated` derives the cohort from the
//! `treated` column. `first_treated` is optional on input.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::panel::{build_cohort_index, CohortPanel, OutcomeKind, PanelBuilder, RowInput, Year};

const FIXED_COLUMNS: [&str; 7] = ["unit_id", "region_id", "year", "outcome", "treated", "age", "gender"];
pub const FIRST_TREATED_COLUMN: &str = "first_treated";

pub fn write_panel_csv<W: Write>(panel: &CohortPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.push(FIRST_TREATED_COLUMN);
    header.extend(panel.covariate_names().iter().map(String::as_str));
    w.write_record(&header)?;
    let n_extra = panel.covariate_names().len();
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for u in 0..panel.n_units() {
        let g = panel.first_treated(u).map(|g| g.to_string()).unwrap_or_default();
        for r in panel.rows(u) {
            record.clear();
            record.push(panel.unit_id(u).to_owned());
            record.push(panel.region_id(r).to_owned());
            record.push(panel.year(r).to_string());
            record.push(panel.outcome(r).map(|y| y.to_string()).unwrap_or_default());
            record.push(u8::from(panel.treated(r)).to_string());
            record.push(panel.age(r).to_string());
            record.push(panel.gender(r).to_string());
            record.push(g.clone());
            for j in 0..n_extra {
                record.push(panel.value(r, crate::panel::Covariate::Extra(j)).to_string());
            }
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(value: &str, column: &str, source: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::Parse {
        path: source.to_owned(),
        line,
        reason: format!("column {column}: {value:?}: {e}"),
    })
}

/// Reads and validates a panel CSV. `source` is used in diagnostics.
pub fn read_panel_csv<R: Read>(reader: R, kind: OutcomeKind, source: &str) -> Result<CohortPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut pos = [0usize; 7];
    for (k, name) in FIXED_COLUMNS.iter().enumerate() {
        pos[k] = headers.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
            path: source.to_owned(),
            line: 1,
            reason: format!("missing column {name}"),
        })?;
    }
    let cohort_pos = headers.iter().position(|h| h == FIRST_TREATED_COLUMN);
    let extra: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !FIXED_COLUMNS.contains(h) && *h != FIRST_TREATED_COLUMN)
        .map(|(i, h)| (i, h.to_owned()))
        .collect();
    let mut builder = PanelBuilder::new(extra.iter().map(|(_, n)| n.clone()).collect());
    let mut covs = vec![0.0; extra.len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: source.to_owned(),
            line,
            reason: e.to_string(),
        })?;
        let field = |k: usize| rec.get(pos[k]).unwrap_or("");
        let outcome = match field(3) {
            "" => None,
            v => Some(parse_field::<f64>(v, "outcome", source, line)?),
        };
        let treated = match field(4) {
            "0" => false,
            "1" => true,
            v => {
                return Err(Error::Parse {
                    path: source.to_owned(),
                    line,
                    reason: format!("column treated: expected 0 or 1, got {v:?}"),
                })
            }
        };
        let gender: u8 = parse_field(field(6), "gender", source, line)?;
        if gender > 1 {
            return Err(Error::Parse {
                path: source.to_owned(),
                line,
                reason: format!("column gender: expected 0 or 1, got {gender}"),
            });
        }
        let cohort = match cohort_pos.and_then(|p| rec.get(p)).unwrap_or("") {
            "" => None,
            v => Some(parse_field::<Year>(v, FIRST_TREATED_COLUMN, source, line)?),
        };
        for (c, (p, name)) in covs.iter_mut().zip(&extra) {
            *c = parse_field(rec.get(*p).unwrap_or(""), name, source, line)?;
        }
        builder.push(RowInput {
            unit: field(0),
            region: field(1),
            year: parse_field(field(2), "year", source, line)?,
            outcome,
            treated,
            age: parse_field(field(5), "age", source, line)?,
            gender,
            cohort,
            covariates: &covs,
        });
    }
    builder.finish(kind)
}

pub fn write_cohort_index_json<W: Write>(panel: &CohortPanel, writer: W) -> Result<()> {
    let export = build_cohort_index(panel).export(panel);
    serde_json::to_writer_pretty(writer, &export)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "unit_id,region_id,year,outcome,treated,age,gender,sales_ban\n\
                        a,ZH,2006,1,0,30,1,0\n\
                        a,ZH,2007,,1,31,1,1\n\
                        b,BE,2006,0,0,40,0,0\n\
                        b,BE,2007,0,0,41,0,0\n";

    #[test]
    fn round_trip() {
        let panel = read_panel_csv(TEXT.as_bytes(), OutcomeKind::Binary, "mem").unwrap();
        assert_eq!(panel.first_treated(0), Some(2007));
        assert_eq!(panel.outcome(1), None);
        let mut buf = Vec::new();
        write_panel_csv(&panel, &mut buf).unwrap();
        let again = read_panel_csv(buf.as_slice(), OutcomeKind::Binary, "mem").unwrap();
        assert_eq!(panel, again);
        let mut buf2 = Vec::new();
        write_panel_csv(&again, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn explicit_cohort_survives_late_entry() {
        let text = "unit_id,region_id,year,outcome,treated,age,gender,first_treated\n\
                    a,ZH,2009,1,1,30,1,2008\n\
                    b,BE,2006,0,0,37,0,\n\
                    b,BE,2009,0,0,40,0,\n";
        let panel = read_panel_csv(text.as_bytes(), OutcomeKind::Binary, "mem").unwrap();
        assert_eq!(panel.first_treated(0), Some(2008));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "unit_id,region_id,year,outcome,treated,age,gender\na,ZH,2006,1,2,30,1\n";
        assert!(matches!(
            read_panel_csv(text.as_bytes(), OutcomeKind::Binary, "mem"),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "unit_id,region_id,year,outcome,treated,age,gender\na,ZH,2006,0.5,0,30,1\n";
        assert!(matches!(
            read_panel_csv(text.as_bytes(), OutcomeKind::Binary, "mem"),
            Err(Error::NonBinaryOutcome { .. })
        ));
    }
}
