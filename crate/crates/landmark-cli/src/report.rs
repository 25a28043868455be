//! Aligned text tables for people and tab-separated records for tools.
//!
//! Every number is printed with a fixed number of decimals so outputs of
//! two runs can be diffed directly.

use std::fmt::Write as _;

use landmark::config::RunConfig;
use landmark::experiment::MetricsTable;

pub const DECIMALS: usize = 4;

pub fn fixed(v: f64) -> String {
    format!("{v:.DECIMALS$}")
}

/// Header lines embedding the resolved configuration.
pub fn config_comment(config: &RunConfig) -> String {
    config.to_text().lines().map(|l| format!("# {l}\n")).collect()
}

/// One line per configuration: R@K and mR@K for each K.
pub fn recall_table(rows: &[(String, &MetricsTable)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}", "model");
    for k in &first.ks {
        let _ = write!(out, " {:>8}", format!("R@{k}"));
    }
    for k in &first.ks {
        let _ = write!(out, " {:>8}", format!("mR@{k}"));
    }
    out.push('\n');
    for (name, m) in rows {
        let _ = write!(out, "{name:<width$}");
        for v in m.recall.iter().chain(&m.mean_recall) {
            let _ = write!(out, " {:>8}", fixed(*v));
        }
        out.push('\n');
    }
    out
}

/// Top-N Recall@K, one line per (model, N).
pub fn topn_table(rows: &[(String, &MetricsTable)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$} {:>4}", "model", "N");
    for k in &first.ks {
        let _ = write!(out, " {:>8}", format!("R@{k}"));
    }
    out.push('\n');
    for (name, m) in rows {
        for (n, row) in m.ns.iter().zip(&m.topn) {
            let _ = write!(out, "{name:<width$} {n:>4}");
            for v in row {
                let _ = write!(out, " {:>8}", fixed(*v));
            }
            out.push('\n');
        }
    }
    out
}

/// Tab-separated records `model metric n k value`.
pub fn records(rows: &[(String, &MetricsTable)]) -> String {
    let mut out = String::from("model\tmetric\tn\tk\tvalue\n");
    for (name, m) in rows {
        for (i, k) in m.ks.iter().enumerate() {
            let _ = writeln!(out, "{name}\tR\t-\t{k}\t{}", fixed(m.recall[i]));
            let _ = writeln!(out, "{name}\tmR\t-\t{k}\t{}", fixed(m.mean_recall[i]));
            for (n, row) in m.ns.iter().zip(&m.topn) {
                let _ = writeln!(out, "{name}\tTopN\t{n}\t{k}\t{}", fixed(row[i]));
            }
        }
    }
    out
}
