//! Trace CSV files: one row per gap evaluation.

use std::path::Path;

use otwb::hpd::TraceRow;

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for r in rows {
        w.serialize(r).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<TraceRow>, _>>()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    if rows.windows(2).any(|w| w[1].iter <= w[0].iter) {
        return Err(format!("{}: iteration column is not strictly increasing", path.display()));
    }
    Ok(rows)
}
