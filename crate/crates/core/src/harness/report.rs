//! Report serialization.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::SweepReport;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn to_json(report: &SweepReport) -> Result<String, HarnessError> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// `out.csv` becomes `out.summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.summary.csv"))
}

/// Writes `report` and returns every file written.
///
/// CSV output is one row per (precision, iteration) plus a per-precision
/// summary file next to it.
pub fn emit_report(
    report: &SweepReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let path = path.as_ref();
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| HarnessError::Io { path: p, source }
    };
    match format {
        ReportFormat::Json => {
            let mut text = to_json(report)?;
            text.push('\n');
            fs::write(path, text).map_err(io_err(path))?;
            Ok(vec![path.to_path_buf()])
        }
        ReportFormat::Csv => {
            let mut rows = csv::Writer::from_path(path)?;
            rows.write_record(["precision", "iteration", "loss", "cum_modeled_time_s"])?;
            for e in &report.entries {
                for (i, (loss, t)) in e.loss_trace.iter().zip(&e.cum_modeled_time_s).enumerate() {
                    rows.write_record([e.precision.to_string(), (i + 1).to_string(), loss.to_string(), t.to_string()])?;
                }
            }
            rows.flush().map_err(io_err(path))?;

            let summary = summary_path(path);
            let mut w = csv::Writer::from_path(&summary)?;
            w.write_record([
                "precision",
                "iterations",
                "converged",
                "final_loss",
                "runtime_per_iter_s",
                "traffic_bits",
                "speedup_vs_32",
            ])?;
            for e in &report.entries {
                w.write_record([
                    e.precision.to_string(),
                    e.iterations.to_string(),
                    e.converged.to_string(),
                    e.final_loss.to_string(),
                    e.runtime_per_iter_s.to_string(),
                    e.traffic_bits.to_string(),
                    e.speedup_vs_32.to_string(),
                ])?;
            }
            w.flush().map_err(io_err(&summary))?;
            Ok(vec![path.to_path_buf(), summary])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::{sweep, DatasetSource, InitCenters, SweepConfig};
    use crate::perfmodel::HwParams;

    fn report() -> SweepReport {
        let cfg = SweepConfig {
            precisions: "4,8,32".parse().unwrap(),
            k: 2,
            max_iters: 20,
            tol: 1e-6,
            init: InitCenters::Seeded(5),
            hw: HwParams::default(),
            dataset: DatasetSource::Blobs { n: 200, d: 3, k: 2, seed: 9, spread: 0.5 },
            duplicate: 1,
        };
        sweep(&cfg).unwrap().0
    }

    #[test]
    fn json_roundtrip() {
        let r = report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        emit_report(&r, ReportFormat::Json, &path).unwrap();
        let back: SweepReport = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.schema, "biskm-report/1");
    }

    #[test]
    fn csv_row_count() {
        let r = report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let written = emit_report(&r, ReportFormat::Csv, &path).unwrap();
        assert_eq!(written[1], dir.path().join("r.summary.csv"));
        let body = fs::read_to_string(&path).unwrap();
        let total: usize = r.entries.iter().map(|e| e.iterations).sum();
        assert_eq!(body.lines().count(), total + 1);
        assert!(body.starts_with("precision,iteration,loss,cum_modeled_time_s\n"));
        let summary = fs::read_to_string(&written[1]).unwrap();
        assert_eq!(summary.lines().count(), r.entries.len() + 1);
    }

    #[test]
    fn unwritable_path() {
        let r = report();
        let err = emit_report(&r, ReportFormat::Json, "/nonexistent-dir/x/r.json").unwrap_err();
        assert!(matches!(err, HarnessError::Io { .. }));
        assert!(emit_report(&r, ReportFormat::Csv, "/nonexistent-dir/x/r.csv").is_err());
    }
}
