//! Atomic file output and the per-round CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use fedweight_core::protocol::ExperimentResult;

use crate::error::CliError;

pub const CSV_COLUMNS: [&str; 11] = [
    "round",
    "t_step",
    "strategy",
    "global_loss",
    "accuracy",
    "rho_wt",
    "rho_wstar",
    "alpha_min",
    "alpha_max",
    "alpha_entropy",
    "selected_count",
];

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let io = |e: std::io::Error| CliError::io(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per executed round; `round` counts from 1.
pub fn curve_csv(result: &ExperimentResult) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::internal(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(err)?;
    let strategy = result.config.strategy.to_string();
    for r in &result.records {
        w.write_record([
            (r.round + 1).to_string(),
            r.t_step.to_string(),
            strategy.clone(),
            r.global_loss.to_string(),
            opt(r.accuracy),
            opt(r.rho_wt),
            opt(r.rho_wstar),
            r.alpha.min().to_string(),
            r.alpha.max().to_string(),
            r.alpha.entropy().to_string(),
            r.selected.len().to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::internal(e.to_string()))
}
