use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use super::{BenchError, Result};
use crate::transfer::{ReportRow, REPORT_HEADER};

/// Serializes rows under the fixed header (LF line endings).
pub fn write_report(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(REPORT_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| BenchError::Schema(format!("flushing report: {e}")))
}

/// Parses a report, rejecting anything but the exact header and
/// well-formed rows.
pub fn parse_report(bytes: &[u8], origin: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = r.headers().map_err(|e| BenchError::Schema(format!("{origin}: {e}")))?.iter().map(str::to_string).collect();
    if header.join(",") != REPORT_HEADER {
        return Err(BenchError::Schema(format!("{origin}: header {:?}, expected {REPORT_HEADER:?}", header.join(","))));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| BenchError::Schema(format!("{origin}: row {}: {e}", i + 1))))
        .collect()
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| BenchError::io(path, e))?;
    parse_report(&bytes, &path.display().to_string())
}

fn sort_key(r: &ReportRow) -> (String, String, usize, usize) {
    (r.task.clone(), r.mode.clone(), r.n_t, r.seeds)
}

/// Concatenates reports and sorts by `(task, mode, n_t)`; a repeated
/// `(task, mode, n_t, seeds)` key is an error.
pub fn merge_reports(reports: Vec<Vec<ReportRow>>) -> Result<Vec<ReportRow>> {
    let mut rows: Vec<ReportRow> = reports.into_iter().flatten().collect();
    let mut seen = BTreeSet::new();
    for r in &rows {
        if !seen.insert(sort_key(r)) {
            return Err(BenchError::Schema(format!(
                "duplicate row for task {}, mode {}, n_t {}, seeds {}",
                r.task, r.mode, r.n_t, r.seeds
            )));
        }
    }
    rows.sort_by_key(sort_key);
    Ok(rows)
}

/// One table line per row: errors in percent as `mean ± std`.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::from("| Task | Mode | N_t | Seeds | Relative L2 error (%) | Seconds |\n|---|---|---:|---:|---:|---:|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {:.2} ± {:.2} | {:.1} |\n",
            r.task,
            r.mode,
            r.n_t,
            r.seeds,
            100.0 * r.mean_rel_l2,
            100.0 * r.std_rel_l2,
            r.seconds
        ));
    }
    out
}
