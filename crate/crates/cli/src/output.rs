//! CSV and JSON emission.
//!
//! Run CSV columns, in order:
//! `t, phase, u_1..u_m, y_1..y_p, wini_1..wini_{q·L_ini}, stage_cost,
//! iterations, lambda_effective`. Warm-up rows leave the `wini_*`,
//! `iterations` and `lambda_effective` fields empty.
//!
//! Sweep CSV columns: `lambda, mean, std, completed, failed`.
//!
//! Floats use the shortest representation that reads back exactly.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::experiment::{RunRecord, SweepRow};

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn run_header(rec: &RunRecord) -> Vec<String> {
    let (m, p) = (rec.dims.m, rec.dims.p);
    let mut h = vec!["t".to_string(), "phase".to_string()];
    h.extend((1..=m).map(|i| format!("u_{i}")));
    h.extend((1..=p).map(|i| format!("y_{i}")));
    h.extend((1..=rec.dims.q() * rec.l_ini).map(|i| format!("wini_{i}")));
    h.extend(["stage_cost", "iterations", "lambda_effective"].map(String::from));
    h
}

pub fn write_run_csv<W: Write>(rec: &RunRecord, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(run_header(rec)).map_err(csv_err)?;
    let n_ini = rec.dims.q() * rec.l_ini;
    for s in &rec.steps {
        let mut row = vec![s.t.to_string(), s.phase.name().to_string()];
        row.extend(s.u.iter().chain(s.y.iter()).map(|v| v.to_string()));
        match &s.w_ini {
            Some(w) => row.extend(w.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), n_ini)),
        }
        row.push(s.stage_cost.to_string());
        row.push(opt(s.iterations));
        row.push(opt(s.lambda_effective));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| csv_err(e.into()))?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["lambda", "mean", "std", "completed", "failed"])
        .map_err(csv_err)?;
    for r in rows {
        wtr.write_record([
            r.lambda.to_string(),
            opt(r.mean),
            opt(r.std),
            r.completed.to_string(),
            r.failed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| csv_err(e.into()))?;
    Ok(())
}

/// `run.csv` → `run.json`; a `.json` output gets `.summary.json`.
pub fn summary_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        out.with_extension("summary.json")
    } else {
        out.with_extension("json")
    }
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| HarnessError::io(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| HarnessError::io(path, e))
}
