//! Strategy × turn comparison tables.

use std::collections::BTreeSet;
use std::fmt::Write;

use copyspec::metrics::{aggregate_records, MetricsRecord, AGGREGATE_ID};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("no baseline records; speedup needs a baseline run")]
    MissingBaseline,
    #[error("no per-turn records to report")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub strategy: String,
    pub turn: usize,
    pub sim_tps: f64,
    pub pct_copied: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub speedup: f64,
}

/// Distinct corpus names among `records`.
pub fn corpora(records: &[MetricsRecord]) -> BTreeSet<String> {
    records.iter().map(|r| r.corpus.clone()).collect()
}

/// One row per (strategy, turn), averaged over transcripts. Speedup is the
/// ratio of mean sim_tps to the baseline's on the same turn.
pub fn build(records: &[MetricsRecord]) -> Result<Vec<Row>, ReportError> {
    let per_turn: Vec<MetricsRecord> = records.iter().filter(|r| !r.is_aggregate()).cloned().collect();
    if per_turn.is_empty() {
        return Err(ReportError::Empty);
    }
    let overall: Vec<MetricsRecord> = aggregate_records(&per_turn)
        .into_iter()
        .filter(|r| r.category == AGGREGATE_ID)
        .collect();
    let baseline = |turn: usize| {
        overall
            .iter()
            .find(|r| r.strategy == "baseline" && r.turn == turn)
            .map(|r| r.sim_tps)
    };
    overall
        .iter()
        .map(|r| {
            let base = baseline(r.turn).ok_or(ReportError::MissingBaseline)?;
            Ok(Row {
                strategy: r.strategy.clone(),
                turn: r.turn,
                sim_tps: r.sim_tps,
                pct_copied: r.pct_copied,
                tau1: r.tau1,
                tau2: r.tau2,
                speedup: if base > 0.0 { r.sim_tps / base } else { f64::NAN },
            })
        })
        .collect()
}

const HEADERS: [&str; 7] = [
    "strategy",
    "turn",
    "sim_tps",
    "pct_copied",
    "tau1",
    "tau2",
    "speedup",
];

fn cells(r: &Row) -> [String; 7] {
    [
        r.strategy.clone(),
        r.turn.to_string(),
        format!("{:.4}", r.sim_tps),
        format!("{:.4}", r.pct_copied),
        format!("{:.3}", r.tau1),
        format!("{:.3}", r.tau2),
        format!("{:.3}", r.speedup),
    ]
}

pub fn plain(rows: &[Row]) -> String {
    let body: Vec<[String; 7]> = rows.iter().map(cells).collect();
    let mut widths = HEADERS.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[String]| {
        let padded: Vec<String> = cols.iter().zip(widths).map(|(c, w)| format!("{c:>w$}")).collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).unwrap();
    };
    line(&HEADERS.map(String::from));
    for row in &body {
        line(row);
    }
    out
}

pub fn markdown(rows: &[Row]) -> String {
    let mut out = format!("| {} |\n", HEADERS.join(" | "));
    writeln!(out, "|{}", "---|".repeat(HEADERS.len())).unwrap();
    for r in rows {
        writeln!(out, "| {} |", cells(r).join(" | ")).unwrap();
    }
    out
}
