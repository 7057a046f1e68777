//! Row predicates for subgroup estimation, e.g. `gender=1`, `age>=25`,
//! `region_id!=ZH` or `sales_ban=0`.

use anyhow::{bail, Result};
use causal_panel::panel::Covariate;
use causal_panel::CohortPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            Op::Eq => ord == Equal,
            Op::Ne => ord != Equal,
            Op::Lt => ord == Less,
            Op::Le => ord != Greater,
            Op::Gt => ord == Greater,
            Op::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Field {
    Region,
    Year,
    Numeric(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowFilter {
    field: Field,
    op: Op,
    value: String,
}

const OPERATORS: [(&str, Op); 7] = [
    ("==", Op::Eq),
    ("!=", Op::Ne),
    (">=", Op::Ge),
    ("<=", Op::Le),
    ("=", Op::Eq),
    (">", Op::Gt),
    ("<", Op::Lt),
];

impl std::str::FromStr for RowFilter {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((at, token, op)) = OPERATORS
            .iter()
            .filter_map(|(tok, op)| s.find(tok).map(|i| (i, *tok, *op)))
            .min_by_key(|(i, tok, _)| (*i, std::cmp::Reverse(tok.len())))
        else {
            bail!("filter {s:?} has no comparison operator");
        };
        let name = s[..at].trim();
        let value = s[at + token.len()..].trim();
        if name.is_empty() || value.is_empty() {
            bail!("filter {s:?} needs a field and a value");
        }
        let field = match name {
            "region_id" | "region" => Field::Region,
            "year" => Field::Year,
            other => Field::Numeric(other.to_owned()),
        };
        if field != Field::Region && value.parse::<f64>().is_err() {
            bail!("filter {s:?}: {value:?} is not a number");
        }
        Ok(Self {
            field,
            op,
            value: value.to_owned(),
        })
    }
}

enum Bound {
    Region(String),
    Year(f64),
    Covariate(Covariate, f64),
}

/// Keeps the rows of `panel` satisfying every filter.
pub fn apply(panel: &CohortPanel, filters: &[RowFilter]) -> Result<CohortPanel> {
    if filters.is_empty() {
        return Ok(panel.clone());
    }
    let bound: Vec<(Bound, Op)> = filters
        .iter()
        .map(|f| {
            let b = match &f.field {
                Field::Region => Bound::Region(f.value.clone()),
                Field::Year => Bound::Year(f.value.parse()?),
                Field::Numeric(name) => Bound::Covariate(panel.covariate(name)?, f.value.parse()?),
            };
            Ok((b, f.op))
        })
        .collect::<Result<_>>()?;
    let filtered = panel.filter_rows(|p, r| {
        bound.iter().all(|(b, op)| {
            let ord = match b {
                Bound::Region(v) => p.region_id(r).cmp(v.as_str()),
                Bound::Year(v) => f64::from(p.year(r)).total_cmp(v),
                Bound::Covariate(c, v) => p.value(r, *c).total_cmp(v),
            };
            op.holds(ord)
        })
    })?;
    Ok(filtered)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_operators() {
        let f: RowFilter = "age>=25".parse().unwrap();
        assert_eq!(f.op, Op::Ge);
        assert_eq!(f.field, Field::Numeric("age".into()));
        let f: RowFilter = "region_id != ZH".parse().unwrap();
        assert_eq!((f.op, f.value.as_str()), (Op::Ne, "ZH"));
        let f: RowFilter = "gender=1".parse().unwrap();
        assert_eq!(f.op, Op::Eq);
        assert!("age".parse::<RowFilter>().is_err());
        assert!("age>=old".parse::<RowFilter>().is_err());
    }

    #[test]
    fn keeps_matching_rows() {
        let text = "unit_id,region_id,year,outcome,treated,age,gender\n\
                    a,ZH,2006,1,0,30,1\na,ZH,2007,1,1,31,1\n\
                    b,BE,2006,0,0,40,0\nb,BE,2007,0,0,41,0\n";
        let panel = causal_panel::io::read_panel_csv(text.as_bytes(), causal_panel::OutcomeKind::Binary, "mem").unwrap();
        let women = apply(&panel, &["gender=1".parse().unwrap()]).unwrap();
        assert_eq!(women.n_rows(), 2);
        let late = apply(&panel, &["year>2006".parse().unwrap(), "region=BE".parse().unwrap()]).unwrap();
        assert_eq!(late.n_rows(), 1);
        assert!(apply(&panel, &["height>1".parse().unwrap()]).is_err());
    }
}
