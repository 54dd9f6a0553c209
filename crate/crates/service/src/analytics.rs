//! Submission summaries: a cross-tabulation of questionnaire answers by
//! country, laid out like a usage table with an overall column, the five most
//! common countries and an "other" column.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::questionnaire::{country_name, AgeBand, LastContact, Questionnaire, Symptom};

/// Number of countries given their own column.
pub const TOP_COUNTRIES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub count: u64,
    /// Percentage of the column total at one decimal, `None` for an empty column.
    pub percent: Option<f64>,
    /// `percent` as text ("62.0"), or "-" when undefined.
    pub display: String,
}

impl Cell {
    pub fn new(count: u64, total: u64) -> Self {
        let tenths = percent_tenths(count, total);
        Self {
            count,
            percent: tenths.map(|t| t as f64 / 10.0),
            display: tenths.map_or_else(|| "-".into(), |t| format!("{}.{}", t / 10, t % 10)),
        }
    }
}

/// `100 · count / total` in tenths of a percent, rounded half up, in exact
/// integer arithmetic.
pub fn percent_tenths(count: u64, total: u64) -> Option<u64> {
    (total > 0).then(|| (2000 * count + total) / (2 * total))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    /// "overall", an ISO alpha-2 code, or "other".
    pub key: String,
    pub label: String,
    /// Column size, with its share of all submissions. The overall column's
    /// share is "-" by convention.
    pub total: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub group: &'static str,
    pub key: &'static str,
    pub label: &'static str,
    /// One cell per column.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub total: u64,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl Summary {
    pub fn row(&self, key: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn column_index(&self, key: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.key == key)
    }

    pub fn render_markdown(&self) -> String {
        let mut s = String::from("| | |");
        for c in &self.columns {
            let _ = write!(s, " {} No. | {} % |", c.label, c.label);
        }
        s.push_str("\n|---|---|");
        for _ in &self.columns {
            s.push_str("---|---|");
        }
        s.push_str("\n| Total | |");
        for c in &self.columns {
            let _ = write!(s, " {} | {} |", c.total.count, c.total.display);
        }
        let mut last_group = "";
        for r in &self.rows {
            let group = if r.group == last_group { "" } else { group_label(r.group) };
            last_group = r.group;
            let _ = write!(s, "\n| {group} | {} |", r.label);
            for c in &r.cells {
                let _ = write!(s, " {} | {} |", c.count, c.display);
            }
        }
        s.push('\n');
        s
    }
}

fn group_label(group: &str) -> &'static str {
    match group {
        "age_band" => "Age (years)",
        "symptoms" => "Symptoms",
        _ => "Last sexual contact",
    }
}

/// Aggregates questionnaires into the summary table. Symptoms are
/// multi-select, so their column percentages can sum past 100.
pub fn summarize(
    entries: &[Questionnaire],
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
) -> Summary {
    let mut by_country: BTreeMap<&str, u64> = BTreeMap::new();
    for q in entries {
        *by_country.entry(q.country.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, u64)> = by_country.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let top: Vec<&str> = ranked.iter().take(TOP_COUNTRIES).map(|&(c, _)| c).collect();
    let column_of = |q: &Questionnaire| top.iter().position(|&c| c == q.country).map_or(top.len() + 1, |i| i + 1);

    let ncol = top.len() + 2;
    let mut totals = vec![0u64; ncol];
    let mut age = vec![vec![0u64; ncol]; AgeBand::ALL.len()];
    let mut symptoms = vec![vec![0u64; ncol]; Symptom::ALL.len()];
    let mut contact = vec![vec![0u64; ncol]; LastContact::ALL.len()];
    for q in entries {
        for col in [0, column_of(q)] {
            totals[col] += 1;
            age[AgeBand::ALL.iter().position(|&a| a == q.age_band).unwrap()][col] += 1;
            contact[LastContact::ALL.iter().position(|&c| c == q.last_contact).unwrap()][col] += 1;
            let distinct: BTreeSet<_> = q.symptoms.iter().collect();
            for s in distinct {
                symptoms[Symptom::ALL.iter().position(|x| x == s).unwrap()][col] += 1;
            }
        }
    }
    let total = totals[0];

    let mut columns = vec![Column {
        key: "overall".into(),
        label: "Overall".into(),
        total: Cell {
            count: total,
            percent: None,
            display: "-".into(),
        },
    }];
    for (i, &code) in top.iter().enumerate() {
        columns.push(Column {
            key: code.to_string(),
            label: country_name(code),
            total: Cell::new(totals[i + 1], total),
        });
    }
    columns.push(Column {
        key: "other".into(),
        label: "Other".into(),
        total: Cell::new(totals[ncol - 1], total),
    });

    let cells = |counts: &[u64]| counts.iter().zip(&totals).map(|(&c, &t)| Cell::new(c, t)).collect();
    let mut rows = Vec::new();
    for (i, &a) in AgeBand::ALL.iter().enumerate() {
        rows.push(Row { group: "age_band", key: a.token(), label: a.label(), cells: cells(&age[i]) });
    }
    for (i, &s) in Symptom::ALL.iter().enumerate() {
        rows.push(Row { group: "symptoms", key: s.token(), label: s.label(), cells: cells(&symptoms[i]) });
    }
    for (i, &c) in LastContact::ALL.iter().enumerate() {
        rows.push(Row { group: "last_contact", key: c.token(), label: c.label(), cells: cells(&contact[i]) });
    }
    Summary { from, to, total, columns, rows }
}

/// Marginal counts for one country, used to build synthetic logs.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryMarginals {
    pub country: String,
    pub total: u64,
    /// In [`AgeBand::ALL`] order.
    pub age: [u64; 3],
    /// In [`Symptom::ALL`] order; the last entry is the exclusive "none/other".
    pub symptoms: [u64; 4],
    /// In [`LastContact::ALL`] order.
    pub contact: [u64; 4],
}

/// Builds questionnaires whose per-country tallies equal the given marginals.
///
/// The first `none_other` respondents report nothing else. The three specific
/// symptoms are dealt cyclically over the rest, which covers everyone exactly
/// when their counts sum to at least the number of respondents. Returns `None`
/// when the marginals cannot be realised.
pub fn synthesize(marginals: &[CountryMarginals]) -> Option<Vec<Questionnaire>> {
    let mut out = Vec::new();
    for m in marginals {
        let n = m.total as usize;
        if m.age.iter().sum::<u64>() != m.total || m.contact.iter().sum::<u64>() != m.total {
            return None;
        }
        let none = m.symptoms[3] as usize;
        let rest = n.checked_sub(none)?;
        let specific = &m.symptoms[..3];
        if specific.iter().any(|&s| s as usize > rest) || (specific.iter().sum::<u64>() as usize) < rest {
            return None;
        }
        if rest == 0 && specific.iter().any(|&s| s > 0) {
            return None;
        }
        let expand = |counts: &[u64]| -> Vec<usize> {
            counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i, c as usize)).collect()
        };
        let ages = expand(&m.age);
        let contacts = expand(&m.contact);
        let mut sets = vec![BTreeSet::new(); n];
        for set in sets.iter_mut().take(none) {
            set.insert(Symptom::NoneOther);
        }
        let mut cursor = 0;
        for (j, &count) in specific.iter().enumerate() {
            for _ in 0..count {
                sets[none + cursor % rest].insert(Symptom::ALL[j]);
                cursor += 1;
            }
        }
        for (i, symptoms) in sets.into_iter().enumerate() {
            out.push(Questionnaire {
                age_band: AgeBand::ALL[ages[i]],
                country: m.country.clone(),
                symptoms,
                last_contact: LastContact::ALL[contacts[(i + n / 2) % n]],
            });
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(percent_tenths(4, 64), Some(63)); // 6.25
        assert_eq!(percent_tenths(1, 8), Some(125)); // 12.5 exactly
        assert_eq!(percent_tenths(1, 3), Some(333));
        assert_eq!(percent_tenths(2, 3), Some(667));
        assert_eq!(percent_tenths(0, 0), None);
        assert_eq!(Cell::new(0, 0).display, "-");
        assert_eq!(Cell::new(271, 437).display, "62.0");
    }

    #[test]
    fn empty_window() {
        let s = summarize(&[], None, None);
        assert_eq!(s.total, 0);
        assert_eq!(s.columns.len(), 2);
        for r in &s.rows {
            assert!(r.cells.iter().all(|c| c.count == 0 && c.display == "-"));
        }
    }

    #[test]
    fn synthesize_rejects_impossible_marginals() {
        let m = CountryMarginals {
            country: "US".into(),
            total: 3,
            age: [1, 1, 1],
            symptoms: [1, 0, 0, 1],
            contact: [3, 0, 0, 0],
        };
        // Two respondents need a specific symptom but only one is available.
        assert!(synthesize(&[m]).is_none());
    }
}
