//! CSV, report and certificate writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::run::{Row, RunOutput};
use crate::CliError;

pub const CSV_HEADER: &str = "task,N,t,value_re,value_im,error_bound,certified,r_max,nu_max";

pub fn csv_line(row: &Row) -> String {
    let n = row.n_particles.map_or_else(|| "inf".to_string(), |n| n.to_string());
    format!(
        "{},{n},{},{:e},{:e},{:e},{},{},{}",
        row.task, row.t, row.value.re, row.value.im, row.error_bound, row.certified, row.r_max, row.nu_max
    )
}

pub fn csv(rows: &[Row]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for row in rows {
        s.push_str(&csv_line(row));
        s.push('\n');
    }
    s
}

/// Plain-text summary: the header lines, any notes, then an aligned table.
pub fn report(header: &[String], out: &RunOutput) -> String {
    let mut s = String::new();
    for line in header {
        let _ = writeln!(s, "{line}");
    }
    if !out.notes.is_empty() {
        s.push('\n');
        for note in &out.notes {
            let _ = writeln!(s, "{note}");
        }
    }
    let _ = writeln!(s, "\n{:<28} {:>5} {:>10} {:>24} {:>24} {:>12} {:>9}", "task", "N", "t", "Re", "Im", "bound", "certified");
    for row in &out.rows {
        let n = row.n_particles.map_or_else(|| "inf".to_string(), |n| n.to_string());
        let _ = writeln!(
            s,
            "{:<28} {:>5} {:>10.4} {:>24.16e} {:>24.16e} {:>12.3e} {:>9}",
            row.task, n, row.t, row.value.re, row.value.im, row.error_bound, row.certified
        );
    }
    let certified = out.rows.iter().filter(|r| r.certified).count();
    let _ = writeln!(s, "\n{} rows, {certified} certified", out.rows.len());
    if let Some(f) = &out.failure {
        let _ = writeln!(s, "FAILED: {f}");
    }
    s
}

pub fn write_artifacts(dir: &Path, header: &[String], out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), csv(&out.rows))?;
    fs::write(dir.join("report.txt"), report(header, out))?;
    if !out.certificates.is_empty() {
        let json = serde_json::to_string_pretty(&out.certificates).map_err(|e| CliError::Numeric(e.to_string()))?;
        fs::write(dir.join("certificate.json"), json + "\n")?;
    }
    Ok(())
}
