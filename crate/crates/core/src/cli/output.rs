//! CSV and JSON writers. Undefined values are written as empty fields.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::CliError;
use crate::metrics::RunSummary;

pub const BLOCKS_HEADER: [&str; 6] = ["block_id", "height", "created_at", "median_ms", "coverage", "on_main_chain"];
pub const ROLLING_HEADER: [&str; 2] = ["window_start_block", "mean_median_ms"];
pub const HISTOGRAM_HEADER: [&str; 2] = ["bin_start_ms", "count"];
pub const CHAIN_HEADER: [&str; 6] = ["id", "parent", "height", "miner", "created_at", "on_main_chain"];
pub const SWEEP_HEADER: [&str; 4] = ["P", "K", "seed", "mean_median_ms"];
pub const SWEEP_SUMMARY_HEADER: [&str; 6] = ["P", "K", "seeds", "mean_median_ms", "std_ms", "undefined_cells"];

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write summary.json, blocks.csv, rolling.csv, histogram.csv and chain.csv.
pub fn write_run(dir: &Path, summary: &RunSummary) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join("summary.json"), summary)?;
    write_csv(
        &dir.join("blocks.csv"),
        &BLOCKS_HEADER,
        summary.blocks.iter().map(|r| {
            vec![
                r.block_id.0.to_string(),
                r.height.to_string(),
                r.created_at.as_millis().to_string(),
                opt(r.median_ms),
                r.coverage.to_string(),
                r.on_main_chain.to_string(),
            ]
        }),
    )?;
    // Series index i holds block i + 1; genesis is not in the series.
    write_csv(
        &dir.join("rolling.csv"),
        &ROLLING_HEADER,
        summary
            .rolling
            .iter()
            .map(|w| vec![(w.start + 1).to_string(), opt(w.mean)]),
    )?;
    write_csv(
        &dir.join("histogram.csv"),
        &HISTOGRAM_HEADER,
        summary
            .histogram
            .iter()
            .map(|b| vec![b.start_ms.to_string(), b.count.to_string()]),
    )?;
    write_csv(
        &dir.join("chain.csv"),
        &CHAIN_HEADER,
        summary.blocks.iter().map(|r| {
            vec![
                r.block_id.0.to_string(),
                opt(r.parent.map(|p| p.0)),
                r.height.to_string(),
                opt(r.miner.map(|m| m.0)),
                r.created_at.as_millis().to_string(),
                r.on_main_chain.to_string(),
            ]
        }),
    )
}
