use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    VehicleEnter,
    VehicleExit,
    VehicleStop,
    VehicleGo,
    PhaseSwitch,
    PhaseSwitchDeferred,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub kind: EventKind,
    pub t: u64,
    /// Vehicle id (`v<n>`) or intersection id.
    pub id: String,
    pub detail: String,
}

pub fn write_jsonl<T: Serialize>(mut out: impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON-lines; blank lines are skipped. Errors carry the 1-based line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(input: impl BufRead) -> Result<Vec<T>, (usize, String)> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (n + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (n + 1, e.to_string()))?);
    }
    Ok(out)
}
