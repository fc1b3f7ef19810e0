//! Deterministic delimited-table rendering for the report artifacts.

use std::fmt::Display;

/// Renders a labeled matrix as CSV: header row of column labels, one row per
/// row label. `None` cells render empty.
pub fn matrix_csv<T: Display>(
    corner: &str,
    col_labels: &[String],
    row_labels: &[String],
    cell: impl Fn(usize, usize) -> Option<T>,
) -> String {
    let mut out = String::new();
    out.push_str(corner);
    for label in col_labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (r, row_label) in row_labels.iter().enumerate() {
        out.push_str(row_label);
        for c in 0..col_labels.len() {
            out.push(',');
            if let Some(value) = cell(r, c) {
                out.push_str(&value.to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Renders rows of (label, value) pairs as `key: value` lines.
pub fn kv_lines(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (key, value) in pairs {
        out.push_str(key);
        out.push_str(": ");
        out.push_str(value);
        out.push('\n');
    }
    out
}
