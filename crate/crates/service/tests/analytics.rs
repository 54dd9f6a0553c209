mod common;

use std::collections::BTreeMap;

use chrono::{Duration, TimeZone, Utc};
use common::*;
use lesion_triage_core::DiseaseClass;
use lesion_triage_service::analytics::{summarize, synthesize, CountryMarginals, Summary};
use lesion_triage_service::questionnaire::{AgeBand, LastContact, Symptom};
use lesion_triage_service::{router, start, Questionnaire};
use proptest::prelude::*;

/// Published usage counts: (country, total, ages, symptoms, contact).
fn published_marginals() -> Vec<CountryMarginals> {
    let rows: [(&str, u64, [u64; 3], [u64; 4], [u64; 4]); 5] = [
        ("US", 271, [176, 87, 8], [84, 70, 81, 149], [169, 70, 27, 5]),
        ("SG", 64, [37, 23, 4], [26, 12, 8, 38], [30, 27, 4, 3]),
        ("CA", 41, [26, 14, 1], [11, 10, 9, 24], [20, 14, 6, 1]),
        ("GB", 40, [25, 13, 2], [11, 11, 10, 21], [21, 10, 8, 1]),
        ("VN", 21, [13, 7, 1], [8, 7, 6, 10], [8, 8, 4, 1]),
    ];
    rows.iter()
        .map(|&(c, total, age, symptoms, contact)| CountryMarginals { country: c.into(), total, age, symptoms, contact })
        .collect()
}

/// Published percentages per row key, columns Overall, US, SG, CA, GB, VN.
fn published_percentages() -> Vec<(&'static str, [f64; 6])> {
    vec![
        ("18-30", [63.4, 64.9, 57.8, 63.4, 62.5, 61.9]),
        ("31-50", [33.0, 32.1, 35.9, 34.1, 32.5, 33.3]),
        ("over50", [3.7, 3.0, 6.3, 2.4, 5.0, 4.8]),
        ("penile_pain", [32.0, 31.0, 40.6, 26.8, 27.5, 38.1]),
        ("penile_discharge", [25.2, 25.8, 18.8, 24.4, 27.5, 33.3]),
        ("pain_burning_urination", [26.1, 29.9, 12.5, 22.0, 25.0, 28.6]),
        ("none_other", [55.4, 55.0, 59.4, 58.5, 52.5, 47.6]),
        ("under1mo", [56.8, 62.4, 46.9, 48.8, 52.5, 38.1]),
        ("1to3mo", [29.5, 25.8, 42.2, 34.1, 25.0, 38.1]),
        ("over3mo", [11.2, 10.0, 6.3, 14.6, 20.0, 19.0]),
        ("never", [2.5, 1.8, 4.7, 2.4, 2.5, 4.8]),
    ]
}

fn check_published(s: &Summary) {
    assert_eq!(s.total, 437);
    let keys: Vec<_> = s.columns.iter().map(|c| c.key.as_str()).collect();
    assert_eq!(keys, ["overall", "US", "SG", "CA", "GB", "VN", "other"]);
    let shares = [62.0, 14.6, 9.4, 9.2, 4.8];
    for (i, want) in shares.iter().enumerate() {
        assert!((s.columns[i + 1].total.percent.unwrap() - want).abs() <= 0.05);
    }
    assert_eq!(s.columns[0].total.display, "-");
    assert_eq!(s.columns[6].total.count, 0);
    for (key, want) in published_percentages() {
        let row = s.row(key).unwrap();
        for (col, &w) in want.iter().enumerate() {
            let got = row.cells[col].percent.unwrap();
            assert!((got - w).abs() <= 0.05, "{key} col {col}: {got} vs {w}");
        }
    }
}

#[test]
fn published_counts_reproduce_published_percentages() {
    let log = synthesize(&published_marginals()).unwrap();
    assert_eq!(log.len(), 437);
    check_published(&summarize(&log, None, None));
}

#[tokio::test]
async fn summary_endpoint_over_a_window() {
    let dir = tempfile::tempdir().unwrap();
    let state = start(config(dir.path(), 0), fixed(DiseaseClass::NonDiseased)).unwrap();
    let store = state.store.clone();
    let sha = store.put_image(&png_bytes(0), "png").unwrap().sha256;
    let log = synthesize(&published_marginals()).unwrap();
    let t0 = Utc.with_ymd_and_hms(2023, 7, 1, 0, 0, 0).unwrap();
    for (i, q) in log.iter().enumerate() {
        // Spread over July to October; one stray submission falls outside.
        let at = t0 + Duration::minutes(i as i64 * 400);
        store.insert_submission(&format!("s{i:04}"), &sha, q, at).unwrap();
    }
    let late = Utc.with_ymd_and_hms(2023, 12, 5, 0, 0, 0).unwrap();
    store.insert_submission("late", &sha, &log[0], late).unwrap();
    let app = router(state);

    let (s, v) = get(&app, "/v1/analytics/summary?from=2023-07-01&to=2023-10-31").await;
    assert_eq!(s, 200);
    let summary_total = v["total"].as_u64().unwrap();
    assert_eq!(summary_total, 437);
    assert_eq!(v["columns"][1]["total"]["display"], "62.0");
    let check = summarize(&log, None, None);
    assert_eq!(v["rows"], serde_json::to_value(&check.rows).unwrap());

    let (_, all) = get(&app, "/v1/analytics/summary").await;
    assert_eq!(all["total"], 438);

    let (s, empty) = get(&app, "/v1/analytics/summary?from=2022-01-01T00:00:00Z&to=2022-02-01T00:00:00Z").await;
    assert_eq!(s, 200);
    assert_eq!(empty["total"], 0);
    for row in empty["rows"].as_array().unwrap() {
        for cell in row["cells"].as_array().unwrap() {
            assert_eq!(cell["display"], "-");
            assert_eq!(cell["count"], 0);
        }
    }

    let (s, b) = get(&app, "/v1/analytics/summary?from=2023-10-01&to=2023-07-01").await;
    assert_eq!((s.as_u16(), b["error"].as_str().unwrap()), (400, "InvalidRange"));
    let (s, _) = get(&app, "/v1/analytics/summary?from=yesterday").await;
    assert_eq!(s, 400);
}

fn questionnaire_strategy() -> impl Strategy<Value = Questionnaire> {
    let countries = prop::sample::select(vec!["US", "SG", "CA", "GB", "VN", "DE", "FR", "IN", "NG", "BR"]);
    (0..3usize, countries, prop::collection::btree_set(0..3usize, 0..=3), 0..4usize).prop_map(|(a, c, s, l)| {
        let symptoms = if s.is_empty() {
            [Symptom::NoneOther].into()
        } else {
            s.into_iter().map(|i| Symptom::ALL[i]).collect()
        };
        Questionnaire { age_band: AgeBand::ALL[a], country: c.into(), symptoms, last_contact: LastContact::ALL[l] }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn summary_equals_brute_force_tally(log in prop::collection::vec(questionnaire_strategy(), 0..120)) {
        let s = summarize(&log, None, None);
        let n = log.len() as u64;
        prop_assert_eq!(s.total, n);

        // Independent country ranking: count, then sort by (-count, code).
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for q in &log { *counts.entry(&q.country).or_default() += 1; }
        let mut ranked: Vec<_> = counts.iter().map(|(k, v)| (*k, *v)).collect();
        ranked.sort_by_key(|&(k, v)| (std::cmp::Reverse(v), k));
        let top: Vec<&str> = ranked.iter().take(5).map(|x| x.0).collect();
        let keys: Vec<&str> = s.columns[1..s.columns.len() - 1].iter().map(|c| c.key.as_str()).collect();
        prop_assert_eq!(&keys, &top);

        let in_col = |q: &Questionnaire, col: usize| -> bool {
            match col {
                0 => true,
                c if c <= top.len() => q.country == top[c - 1],
                _ => !top.contains(&q.country.as_str()),
            }
        };
        for (ci, col) in s.columns.iter().enumerate() {
            let members: Vec<&Questionnaire> = log.iter().filter(|q| in_col(q, ci)).collect();
            prop_assert_eq!(col.total.count, members.len() as u64);
            let m = members.len() as f64;
            for row in &s.rows {
                let count = members.iter().filter(|q| match row.group {
                    "age_band" => q.age_band.token() == row.key,
                    "last_contact" => q.last_contact.token() == row.key,
                    _ => q.symptoms.iter().any(|x| x.token() == row.key),
                }).count() as u64;
                let cell = &row.cells[ci];
                prop_assert_eq!(cell.count, count);
                match cell.percent {
                    None => prop_assert_eq!(m, 0.0),
                    Some(p) => prop_assert!((p - 100.0 * count as f64 / m).abs() <= 0.05 + 1e-9),
                }
            }
            // Conservation: single-choice groups sum to the column; symptoms stay within it.
            for group in ["age_band", "last_contact"] {
                let sum: u64 = s.rows.iter().filter(|r| r.group == group).map(|r| r.cells[ci].count).sum();
                prop_assert_eq!(sum, col.total.count);
            }
            for r in s.rows.iter().filter(|r| r.group == "symptoms") {
                prop_assert!(r.cells[ci].count <= col.total.count);
            }
        }
        let country_sum: u64 = s.columns[1..].iter().map(|c| c.total.count).sum();
        prop_assert_eq!(country_sum, n);
    }
}

#[test]
fn markdown_rendering_has_every_row() {
    let s = summarize(&synthesize(&published_marginals()).unwrap(), None, None);
    let md = s.render_markdown();
    assert!(md.contains("| Total | | 437 | - | 271 | 62.0 |"));
    assert!(md.contains("| Symptoms | Penile pain | 140 | 32.0 |"));
    assert_eq!(md.lines().count(), 3 + s.rows.len());
}
