//! Dataset and report file formats.
//!
//! Datasets are plain comma-separated numeric files, one subject per row.
//! An optional first row holds the grid nodes; it is treated as a header
//! exactly when its values are strictly increasing and lie in `[0, 1]`.
//! Reports are versioned JSON documents wrapping a [`RankReport`].

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Grid, SampleMatrix};
use crate::rank::RankReport;

/// Current report schema version.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn parse_row(line: &str, row_1b: usize) -> Result<Vec<f64>> {
    line.split(',')
        .enumerate()
        .map(|(col, cell)| {
            let trimmed = cell.trim();
            let value: f64 = trimmed.parse().map_err(|_| {
                Error::Data(format!(
                    "row {row_1b}, column {}: cannot parse '{trimmed}' as a number",
                    col + 1
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "row {row_1b}, column {}: non-finite value '{trimmed}'",
                    col + 1
                )));
            }
            Ok(value)
        })
        .collect()
}

fn looks_like_grid(row: &[f64]) -> bool {
    row.iter().all(|&t| (0.0..=1.0).contains(&t))
        && row.windows(2).all(|w| w[0] < w[1])
}

/// Parse a dataset from CSV text.
pub fn parse_dataset(text: &str) -> Result<SampleMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line, idx + 1)?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Data(format!(
                    "row {}: expected {w} columns, found {}",
                    idx + 1,
                    row.len()
                )));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::Data("empty dataset".into()))?;

    let grid = if rows.len() > 1 && looks_like_grid(&rows[0]) {
        let header = rows.remove(0);
        Grid::new(header)?
    } else {
        Grid::regular(width)?
    };

    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 data rows, found {}",
            rows.len()
        )));
    }
    let n = rows.len();
    let data = DMatrix::from_fn(n, width, |i, j| rows[i][j]);
    SampleMatrix::new(data, grid)
}

/// Load a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<SampleMatrix> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Data(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    parse_dataset(&text)
}

/// Render a dataset as CSV, optionally with the grid nodes as a header row.
pub fn format_dataset(sample: &SampleMatrix, with_grid_header: bool) -> String {
    let mut out = String::new();
    if with_grid_header {
        let header: Vec<String> = sample.grid().nodes().iter().map(|t| t.to_string()).collect();
        out.push_str(&header.join(","));
        out.push('\n');
    }
    for i in 0..sample.n() {
        let row: Vec<String> = (0..sample.grid_len())
            .map(|j| sample.data()[(i, j)].to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Write a dataset file (grid header included).
pub fn save_dataset(sample: &SampleMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), format_dataset(sample, true))?;
    Ok(())
}

/// A rank report with run metadata, as serialized to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    /// Wall-clock duration of the run in seconds. Excluded from
    /// reproducibility comparisons.
    pub wall_clock_secs: f64,
    pub report: RankReport,
}

impl ReportFile {
    pub fn new(report: RankReport, seed: u64, wall_clock_secs: f64) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            wall_clock_secs,
            report,
        }
    }
}

pub fn write_report(report: &ReportFile, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
    fs::write(path.as_ref(), json)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReportFile> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        Error::Data(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("malformed report: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_headerless_file_with_default_grid() {
        let sm = parse_dataset("1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(sm.n(), 3);
        assert_eq!(sm.grid_len(), 2);
        assert_relative_eq!(sm.grid().nodes()[0], 1.0 / 3.0);
        assert_relative_eq!(sm.grid().nodes()[1], 2.0 / 3.0);
    }

    #[test]
    fn detects_grid_header() {
        let sm = parse_dataset("0.1,0.5,0.9\n1,2,3\n4,5,6\n").unwrap();
        assert_eq!(sm.n(), 2);
        assert_eq!(sm.grid().nodes(), &[0.1, 0.5, 0.9]);
    }

    #[test]
    fn first_row_outside_unit_interval_is_data() {
        let sm = parse_dataset("1,2\n0.1,0.2\n3,4\n").unwrap();
        assert_eq!(sm.n(), 3);
    }

    #[test]
    fn reports_parse_errors_with_location() {
        let err = parse_dataset("1,2\n3,abc\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("column 2"), "{msg}");

        let err = parse_dataset("1,2\n3,NaN\n").unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");

        let err = parse_dataset("1,2\n3\n").unwrap_err();
        assert!(err.to_string().contains("expected 2 columns"), "{err}");
    }

    #[test]
    fn dataset_round_trip() {
        let sm = parse_dataset("0.25,0.5,0.75\n1.5,-2,3e-4\n-0.125,7,0.1\n").unwrap();
        let text = format_dataset(&sm, true);
        let back = parse_dataset(&text).unwrap();
        assert_eq!(sm.data(), back.data());
        assert_eq!(sm.grid(), back.grid());
    }

    #[test]
    fn report_file_round_trip() {
        use crate::bootstrap::BootstrapConfig;
        use crate::rank::PerRankRecord;
        let report = RankReport {
            per_q: vec![PerRankRecord {
                q: 1,
                statistic: 0.5,
                p_value: Some(0.2),
                tested: true,
            }],
            r_hat: Some(1),
            global_null_rejected: false,
            alpha: 0.05,
            d: 1,
            scree: vec![],
            t0: 1.25,
            config: BootstrapConfig::new(1),
            warnings: vec!["example".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let file = ReportFile::new(report, 7, 1.5);
        write_report(&file, &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(file, back);
    }
}
