//! File output and text tables.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tpet_core::evolution::mean_std;
use tpet_core::metrics::MetricsReport;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    tpet_core::events::write_jsonl(&mut buf, items).map_err(|e| io_err(path, e))?;
    write_atomic(path, &buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub controller: String,
    pub att: Stat,
    pub aql: Stat,
    pub awt: Stat,
    pub per_seed: Vec<MetricsReport>,
}

impl MetricsRow {
    pub fn new(controller: impl Into<String>, per_seed: Vec<MetricsReport>) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| Stat::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Self {
            controller: controller.into(),
            att: col(|m| m.att),
            aql: col(|m| m.aql),
            awt: col(|m| m.awt),
            per_seed,
        }
    }
}

fn cell(s: Stat) -> String {
    format!("{:.2} ± {:.2}", s.mean, s.std)
}

/// Aligned table: one row per controller, mean ± std per metric.
pub fn metrics_table(rows: &[MetricsRow], seeds: &[u64]) -> String {
    let header = ["Controller", "ATT (s)", "AQL (veh)", "AWT (s)"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| [r.controller.clone(), cell(r.att), cell(r.aql), cell(r.awt)])
        .collect();
    let mut width = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: [&str; 4]| {
        let mut s = format!("{:<w$}", cells[0], w = width[0]);
        for (c, w) in cells[1..].iter().zip(&width[1..]) {
            s.push_str(&format!("  {c:>w$}", w = *w));
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&line(width.map(|w| "-".repeat(w)).each_ref().map(|s| s.as_str())));
    for row in &body {
        out.push_str(&line(row.each_ref().map(|s| s.as_str())));
    }
    let listed = seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
    if seeds.len() == 1 {
        out.push_str(&format!("seed {listed} (single seed: std reported as 0)\n"));
    } else {
        out.push_str(&format!("mean ± population std over seeds {listed}\n"));
    }
    out
}
