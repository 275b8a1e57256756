//! On-disk formats owned by the CLI: label, prediction-curve and event-log
//! CSVs, plus small helpers shared by the subcommands. Phases are 1-based in
//! every file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use eaf_core::engine::{CurveRow, EventRow};
use eaf_core::sim::LabelRow;
use eaf_core::telemetry::{read_telemetry, write_telemetry_header, write_telemetry_row, TelemetrySample};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub t: f64,
    pub phase: usize,
    pub collapse: u8,
    pub valid: u8,
    pub a1: f64,
    pub cf: f64,
    pub a3: f64,
}

impl From<&LabelRow> for LabelRecord {
    fn from(r: &LabelRow) -> Self {
        Self {
            t: r.t,
            phase: r.phase + 1,
            collapse: r.collapse.into(),
            valid: r.valid.into(),
            a1: r.a1,
            cf: r.cf,
            a3: r.a3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub t: f64,
    pub phase: usize,
    pub cf: f64,
    pub a3: f64,
    pub alert: u8,
}

impl From<&CurveRow> for CurveRecord {
    fn from(r: &CurveRow) -> Self {
        Self { t: r.t, phase: r.phase + 1, cf: r.cf, a3: r.a3, alert: r.alert.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub phase: usize,
    pub source: String,
    pub velocity: f64,
    pub ia: f64,
    pub e2: f64,
    pub pressure: f64,
}

impl From<&EventRow> for EventRecord {
    fn from(r: &EventRow) -> Self {
        Self {
            t: r.t,
            phase: r.phase + 1,
            source: r.source.to_string(),
            velocity: r.velocity,
            ia: r.ia,
            e2: r.e2,
            pressure: r.pressure,
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn open_input(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io { context: path.display().to_string(), source: e.into() };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a headed CSV. Row errors name the file line (the header is line 1).
pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>, CliError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open_input(path)?);
    let found = r
        .headers()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(CliError::input(format!(
            "{}: line 1: expected header `{}`",
            path.display(),
            header.join(",")
        )));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CliError::input(format!("{}: line {}: {e}", path.display(), i + 2))))
        .collect()
}

pub const LABEL_HEADER: [&str; 7] = ["t", "phase", "collapse", "valid", "a1", "cf", "a3"];
pub const CURVE_HEADER: [&str; 5] = ["t", "phase", "cf", "a3", "alert"];
pub const EVENT_HEADER: [&str; 7] = ["t", "phase", "source", "velocity", "ia", "e2", "pressure"];

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>, CliError> {
    let rows: Vec<LabelRecord> = read_csv(path, &LABEL_HEADER)?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| !(1..=3).contains(&r.phase)) {
        return Err(CliError::input(format!("{}: line {}: phase {} is not 1-3", path.display(), i + 2, r.phase)));
    }
    Ok(rows)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRecord>, CliError> {
    let rows: Vec<CurveRecord> = read_csv(path, &CURVE_HEADER)?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| !(1..=3).contains(&r.phase)) {
        return Err(CliError::input(format!("{}: line {}: phase {} is not 1-3", path.display(), i + 2, r.phase)));
    }
    Ok(rows)
}

pub fn load_telemetry(path: &Path) -> Result<Vec<TelemetrySample>, CliError> {
    read_telemetry(open_input(path)?, None).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn save_telemetry(path: &Path, samples: &[TelemetrySample]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    write_telemetry_header(&mut w).map_err(io)?;
    for s in samples {
        write_telemetry_row(&mut w, s).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
