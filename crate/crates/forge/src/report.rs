//! Plain-text tables for run summaries, eval reports and drift checks.

use std::fmt::Write;

use forge_core::eval::{Alarm, EvalReport};

use crate::pipeline::Summary;

fn rule(widths: &[usize]) -> String {
    widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
}

/// Left-aligned first column, right-aligned rest.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[0]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = String::new();
    let head: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    writeln!(out, "{}", fmt_row(&head)).unwrap();
    writeln!(out, "{}", rule(&widths)).unwrap();
    for r in rows {
        writeln!(out, "{}", fmt_row(r)).unwrap();
    }
    out
}

pub fn summary_table(s: &Summary) -> String {
    let rows: Vec<Vec<String>> = s
        .stages
        .iter()
        .map(|r| {
            vec![
                r.stage.clone(),
                r.input.to_string(),
                r.output.to_string(),
                r.rejected.to_string(),
                r.quarantined.to_string(),
                r.reasons.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    let mut out = table(&["stage", "input", "output", "rejected", "quarantined", "reasons"], &rows);
    writeln!(out, "\nfinal records: {}", s.final_count).unwrap();
    writeln!(out, "quarantined:   {}", s.quarantined).unwrap();
    writeln!(out, "checksum:      {}", s.checksum).unwrap();
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

pub fn eval_table(r: &EvalReport) -> String {
    let mut rows: Vec<Vec<String>> = r.per_category_recall.iter().map(|(k, v)| vec![format!("category {k}"), pct(Some(*v))]).collect();
    rows.push(vec!["average_k".into(), pct(r.average_k)]);
    rows.extend(r.per_subset_recall.iter().map(|(k, v)| vec![format!("subset {k}"), pct(Some(*v))]));
    rows.push(vec!["weighted_overall".into(), pct(r.weighted_overall)]);
    rows.push(vec!["false_positive_rate".into(), pct(r.false_positive_rate)]);
    rows.push(vec!["unparseable_rate".into(), pct(r.unparseable_rate)]);
    table(&["metric", "%"], &rows)
}

pub fn drift_table(alarms: &[Alarm], threshold: f64) -> String {
    if alarms.is_empty() {
        return format!("no metric moved the wrong way by more than {threshold} points\n");
    }
    let rows: Vec<Vec<String>> = alarms
        .iter()
        .map(|a| vec![a.metric.clone(), format!("{:.2}", a.baseline), format!("{:.2}", a.current), format!("{:+.2}", a.delta)])
        .collect();
    table(&["metric", "baseline", "current", "delta"], &rows)
}
