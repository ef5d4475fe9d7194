//! `bench`: every (instance, method) pair under a common iteration budget.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::methods::{self, Flags, Method};

/// One CSV row. Failed runs keep their row with `status = "error"` and the message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub method: String,
    pub status: String,
    pub gap: Option<f64>,
    pub value: Option<f64>,
    pub iterations: Option<usize>,
    pub inner_total: Option<usize>,
    pub wall_s: Option<f64>,
    pub error: String,
}

pub fn run_bench(instances: &[PathBuf], methods: &[(String, Method)], flags: &Flags) -> Vec<BenchRow> {
    let mut rows = Vec::with_capacity(instances.len() * methods.len());
    for path in instances {
        let loaded = otwb::instances::load_instance(path);
        for (name, method) in methods {
            let empty = |status: &str, error: String| BenchRow {
                instance: path.display().to_string(),
                method: name.clone(),
                status: status.to_string(),
                gap: None,
                value: None,
                iterations: None,
                inner_total: None,
                wall_s: None,
                error,
            };
            let inst = match &loaded {
                Ok(i) => i,
                Err(e) => {
                    rows.push(empty("error", e.to_string()));
                    continue;
                }
            };
            match methods::run(name, *method, flags, inst, false) {
                Ok(out) => {
                    let r = out.report;
                    rows.push(BenchRow {
                        status: if r.certified { "certified" } else { "uncertified" }.to_string(),
                        gap: Some(r.gap_rounded),
                        value: Some(r.value),
                        iterations: Some(r.iterations),
                        inner_total: Some(r.inner_total),
                        wall_s: Some(r.wall_s),
                        ..empty("", String::new())
                    });
                }
                Err(e) => rows.push(empty("error", e.to_string())),
            }
        }
    }
    rows
}

pub fn write_rows(path: Option<&Path>, rows: &[BenchRow]) -> Result<(), String> {
    let sink: Box<dyn std::io::Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| format!("{}: {e}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}
