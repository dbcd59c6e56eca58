//! Results emission. `results.json` is the source of truth; the CSV files
//! mirror it.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::experiment::{MetricReport, Prediction};

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

pub fn results_json(reports: &[MetricReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)? + "\n")
}

/// Writes `results.json`, `results.csv` and `timings.csv` into `dir`.
pub fn write_results(dir: &Path, reports: &[MetricReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("results.json");
    fs::write(&json, results_json(reports)?).map_err(|e| Error::io(&json, e))?;
    write_csv(&dir.join("results.csv"), reports)?;
    #[derive(Serialize)]
    struct Timing<'a> {
        protocol: &'a str,
        point: &'a str,
        method: &'a str,
        wall_time: f64,
    }
    let timings: Vec<Timing> = reports
        .iter()
        .map(|r| Timing {
            protocol: &r.protocol,
            point: &r.point,
            method: &r.method,
            wall_time: r.wall_time,
        })
        .collect();
    write_csv(&dir.join("timings.csv"), &timings)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_csv(path, predictions)
}

pub fn read_results(path: &Path) -> Result<Vec<MetricReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
