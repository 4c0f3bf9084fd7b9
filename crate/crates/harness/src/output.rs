//! Artifact writers and the shipped JSON schemas.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use helmdd_core::krylov::SolveReport;
use serde::Serialize;

pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");
pub const SCALING_RECORD_SCHEMA: &str = include_str!("../schemas/scaling_record.schema.json");
pub const SWEEP_SCHEMA: &str = include_str!("../schemas/sweep.schema.json");
pub const FIELD_HEADER_SCHEMA: &str = include_str!("../schemas/field_header.schema.json");
pub const PARTITION_SCHEMA: &str = include_str!("../schemas/partition.schema.json");
pub const SUMMARY_SCHEMA: &str = include_str!("../schemas/summary.schema.json");

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for v in values {
        serde_json::to_writer(&mut f, v)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

/// One row per (right-hand side, iteration) with the backward-error estimate.
pub fn write_convergence_csv(path: &Path, report: &SolveReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["rhs_id", "iteration", "backward_error"])?;
    for (rhs, hist) in report.history.iter().enumerate() {
        for (it, be) in hist.iter().enumerate() {
            w.write_record([rhs.to_string(), it.to_string(), format!("{be:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
