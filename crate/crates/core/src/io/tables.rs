//! CSV forms of results tables and rank summaries.
//!
//! Numbers are written in Rust's shortest round-trip form, so a table read
//! back holds the exact values written; failed cells are `NaN`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::bundle::csv_err;
use crate::error::{Error, Result};
use crate::stats::{RankSummary, ResultsTable};

/// Leading columns that label rows rather than hold method scores.
pub const KEY_COLUMNS: [&str; 3] = ["subject", "n_t", "partition"];

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        v.to_string()
    }
}

/// Writes `keys` (one row of labels per table row) followed by the method
/// columns.
pub fn results_csv(table: &ResultsTable, key_names: &[&str], keys: &[Vec<String>]) -> Result<Vec<u8>> {
    if keys.len() != table.n_rows() {
        return Err(Error::invalid("one key row per table row is required"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = key_names.iter().copied().chain(table.methods.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (i, k) in keys.iter().enumerate() {
        let row: Vec<String> = k
            .iter()
            .cloned()
            .chain(table.values.row(i).iter().map(|&v| fmt_f64(v)))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn parse_results_csv(bytes: &[u8]) -> Result<ResultsTable> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(csv_err)?.clone();
    let cols: Vec<usize> = (0..header.len())
        .filter(|&j| !KEY_COLUMNS.contains(&&header[j]))
        .collect();
    let methods: Vec<String> = cols.iter().map(|&j| header[j].to_string()).collect();
    let mut vals = Vec::new();
    let mut n = 0;
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for &j in &cols {
            let cell = rec.get(j).ok_or_else(|| Error::invalid(format!("row {row} is short")))?;
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("row {row}, column `{}`: `{cell}` is not a number", &header[j])))?;
            vals.push(v);
        }
        n += 1;
    }
    ResultsTable::new(methods.clone(), DMatrix::from_row_slice(n, methods.len(), &vals))
}

pub fn read_results_csv(path: &Path) -> Result<ResultsTable> {
    let bytes = fs::read(path)?;
    parse_results_csv(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// One row per method in rank order: average rank, then the adjusted p
/// against every method (columns in input order).
pub fn rank_summary_csv(s: &RankSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string(), "avg_rank".to_string()];
    header.extend(s.methods.iter().map(|m| format!("p_vs_{m}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in s.order() {
        let mut row = vec![s.methods[i].clone(), fmt_f64(s.avg_ranks[i])];
        row.extend((0..s.methods.len()).map(|j| fmt_f64(s.adjusted_p[(i, j)])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Statistic, p-value and the non-significance groups, one group per line.
pub fn friedman_text(s: &RankSummary, alpha: f64) -> String {
    let mut out = String::new();
    out.push_str(&format!("statistic {}\n", fmt_f64(s.statistic)));
    out.push_str(&format!("p_value {}\n", fmt_f64(s.p_value)));
    out.push_str(&format!("n_rows {}\n", s.n_rows));
    out.push_str(&format!("n_dropped {}\n", s.n_dropped));
    out.push_str(&format!("alpha {alpha}\n"));
    let order: Vec<&str> = s.order().into_iter().map(|i| s.methods[i].as_str()).collect();
    out.push_str(&format!("order {}\n", order.join(" ")));
    out
}

/// CD-diagram input: each line lists the methods of one group of
/// statistically indistinguishable, rank-adjacent methods.
pub fn groups_text(s: &RankSummary, alpha: f64) -> String {
    let mut out = String::new();
    for g in s.groups(alpha) {
        let names: Vec<&str> = g.iter().map(|&i| s.methods[i].as_str()).collect();
        out.push_str(&names.join(" "));
        out.push('\n');
    }
    out
}

pub fn frequency_csv(methods: &[String], counts: &DMatrix<u32>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("method".to_string()).chain(methods.iter().cloned()).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (i, m) in methods.iter().enumerate() {
        let row: Vec<String> = std::iter::once(m.clone())
            .chain(counts.row(i).iter().map(u32::to_string))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}
