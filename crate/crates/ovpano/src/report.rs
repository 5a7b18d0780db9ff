//! Text reports: a key-value summary, a per-class table and the ablation table.

use ovpano_core::metrics::{PQReport, Summary, SUMMARY_COLUMNS};

use crate::kv::{self, KvDoc};

pub const REPORT_FILE: &str = "report.txt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const ABLATION_FILE: &str = "ablation.txt";

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// `split.column = value` lines in percent, after `split.scenes`.
pub fn push_summary(doc: &mut KvDoc, split: &str, scenes: usize, s: &Summary) {
    doc.push(&format!("{split}.scenes"), scenes);
    for (name, v) in SUMMARY_COLUMNS.iter().zip(s.columns()) {
        doc.push(&format!("{split}.{name}"), pct(v));
    }
}

pub const METRICS_HEADER: &str = "split\tclass\tPQ\tSQ\tRQ\tIoU\n";

/// One row per class present in the split, then `all`, `novel` and `base` rows.
/// Values are fractions written at full precision.
pub fn metrics_rows(split: &str, r: &PQReport) -> String {
    let mut out = String::new();
    let f = kv::float;
    for (name, c) in r.class_names.iter().zip(&r.classes) {
        if !c.present() && c.gt_points == 0 {
            continue;
        }
        out.push_str(&format!("{split}\t{name}\t{}\t{}\t{}\t{}\n", f(c.pq()), f(c.sq()), f(c.rq()), f(c.iou())));
    }
    let s = r.summary();
    out.push_str(&format!("{split}\tall\t{}\t{}\t{}\t{}\n", f(s.pq), f(s.sq), f(s.rq), f(s.miou)));
    out.push_str(&format!("{split}\tnovel\t{}\t-\t-\t-\n", f(s.pq_novel)));
    out.push_str(&format!("{split}\tbase\t{}\t-\t-\t-\n", f(s.pq_base)));
    out
}

/// Fixed-width table with one row per ablation step, values in percent.
pub fn ablation_table(rows: &[(String, Summary)]) -> String {
    let mut out = format!("{:<10}", "row");
    for c in SUMMARY_COLUMNS {
        out.push_str(&format!("{c:>9}"));
    }
    out.push('\n');
    for (name, s) in rows {
        out.push_str(&format!("{name:<10}"));
        for v in s.columns() {
            out.push_str(&format!("{:>9}", pct(v)));
        }
        out.push('\n');
    }
    out
}

/// Reads back [`ablation_table`] output as `(row, columns in percent)`.
pub fn parse_ablation_table(text: &str) -> Option<Vec<(String, Vec<f64>)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            let name = it.next()?.to_string();
            let vals: Option<Vec<f64>> = it.map(|x| x.parse().ok()).collect();
            vals.filter(|v| v.len() == SUMMARY_COLUMNS.len()).map(|v| (name, v))
        })
        .collect()
}
