//! File output: atomic writes, CSV assembly, and the shared float/label
//! formatting that keeps `estimate` and `sweep` rows byte-comparable.

use std::path::{Path, PathBuf};

use adex_core::model::OutcomeMeasure;
use adex_core::stats::Estimate;
use serde::Serialize;

use crate::error::CliError;

// ---------------------------------------------------------------------------
// Atomic writes
// ---------------------------------------------------------------------------

/// Write `bytes` to `path` atomically: the content lands in a temp file in
/// the same directory, then a rename swaps it in. Readers never observe a
/// partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let directory = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = directory {
        std::fs::create_dir_all(dir).map_err(|e| {
            CliError::Internal(format!("cannot create {}: {e}", dir.display()))
        })?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp: PathBuf = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::Internal(format!("cannot move output into {}: {e}", path.display()))
    })
}

/// Serialize as pretty JSON with a trailing newline and write atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Internal(format!("cannot serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// Shortest representation that parses back to the same float; the one
/// float format used in every CSV this binary writes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Stable, comma-free label for a measure (commas would force CSV quoting).
pub fn measure_label(measure: &OutcomeMeasure) -> String {
    match measure {
        OutcomeMeasure::Discernment(w) => {
            format!("discernment[{}|{}]", fmt_f64(w.w_false), fmt_f64(w.w_true))
        }
        OutcomeMeasure::FalseAny => "false_any".into(),
        OutcomeMeasure::FalseTimeline => "false_timeline".into(),
        OutcomeMeasure::FalseMessenger => "false_messenger".into(),
        OutcomeMeasure::TrueAny => "true_any".into(),
        OutcomeMeasure::TrueTimeline => "true_timeline".into(),
        OutcomeMeasure::TrueMessenger => "true_messenger".into(),
    }
}

/// The estimate fields every table row carries, in column order.
pub fn estimate_cells(estimate: &Estimate) -> [String; 7] {
    [
        fmt_f64(estimate.value),
        fmt_f64(estimate.std_error),
        fmt_f64(estimate.ci_lower),
        fmt_f64(estimate.ci_upper),
        fmt_f64(estimate.z),
        fmt_f64(estimate.p_two_sided),
        estimate.n.to_string(),
    ]
}

pub const ESTIMATE_CELL_HEADERS: [&str; 7] =
    ["estimate", "std_error", "ci_lower", "ci_upper", "z", "p_value", "n"];

/// Assemble a CSV from a header and rows, using the csv crate's quoting
/// rules (deterministic for fixed input).
pub fn build_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(header)
        .and_then(|()| rows.iter().try_for_each(|row| writer.write_record(row)))
        .map_err(|e| CliError::Internal(format!("csv assembly: {e}")))?;
    writer
        .into_inner()
        .map_err(|e| CliError::Internal(format!("csv assembly: {e}")))
}
