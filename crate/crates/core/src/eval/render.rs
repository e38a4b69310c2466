use std::fmt::Write;

use super::{ConfusionMatrix, MetricsReport, ReferenceTable, OTHER_COLUMN};

const RUN_ROW: &str = "This run (macro)";

/// Precision/Recall/F1 table at four decimals. Reference rows, when given,
/// come first, followed by this run's macro row and its per-class rows.
pub fn render_results(report: &MetricsReport, reference: Option<&ReferenceTable>) -> String {
    let mut rows: Vec<(String, f64, f64, f64)> = Vec::new();
    if let Some(table) = reference {
        rows.extend(table.rows.iter().map(|r| (r.method.clone(), r.precision, r.recall, r.f1)));
    }
    let reference_rows = rows.len();
    rows.push((RUN_ROW.to_string(), report.macro_precision, report.macro_recall, report.macro_f1));
    rows.extend(
        report
            .per_class
            .iter()
            .map(|c| (format!("  {} (n={})", c.label, c.support), c.precision, c.recall, c.f1)),
    );

    let name_width = rows.iter().map(|r| r.0.chars().count()).chain(["Methods".len()]).max().unwrap_or(0);
    let mut out = String::new();
    if let Some(table) = reference {
        writeln!(out, "{}", table.caption).unwrap();
    }
    writeln!(out, "{:<name_width$}  {:>9}  {:>6}  {:>6}", "Methods", "Precision", "Recall", "F1").unwrap();
    writeln!(out, "{}  {}  {}  {}", "-".repeat(name_width), "-".repeat(9), "-".repeat(6), "-".repeat(6)).unwrap();
    for (i, (name, p, r, f)) in rows.iter().enumerate() {
        if i == reference_rows && reference_rows > 0 {
            writeln!(out, "{}", "-".repeat(name_width + 29)).unwrap();
        }
        writeln!(out, "{name:<name_width$}  {p:>9.4}  {r:>6.4}  {f:>6.4}").unwrap();
    }
    out
}

/// Gold rows by predicted columns (plus OTHER): each cell shows the count
/// and its share of the gold row.
pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    let corner = "gold \\ pred";
    let mut headers: Vec<&str> = cm.labels.iter().map(String::as_str).collect();
    headers.push(OTHER_COLUMN);

    let cells: Vec<Vec<String>> = cm
        .counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&count| {
                    let pct = if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
                    format!("{count} ({pct:.1}%)")
                })
                .collect()
        })
        .collect();

    let first_width = cm.labels.iter().map(|l| l.chars().count()).chain([corner.len()]).max().unwrap_or(0);
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(j, h)| cells.iter().map(|r| r[j].chars().count()).chain([h.chars().count()]).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    let mut line = format!("{corner:<first_width$}");
    for (h, w) in headers.iter().zip(&widths) {
        write!(line, "  {h:>w$}").unwrap();
    }
    writeln!(out, "{line}").unwrap();
    for (label, row) in cm.labels.iter().zip(&cells) {
        let mut line = format!("{label:<first_width$}");
        for (cell, w) in row.iter().zip(&widths) {
            write!(line, "  {cell:>w$}").unwrap();
        }
        writeln!(out, "{line}").unwrap();
    }
    out
}
