//! File formats: summary tables (CSV or JSON lines), per-trial JSON-lines
//! dumps and two-column spectrum dumps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::experiment::{ResultRow, TrialRecord, SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" | "jsonl" | "json-lines" => Ok(Format::JsonLines),
            other => Err(Error::Config(format!(
                "unknown format `{other}` (expected csv or jsonl)"
            ))),
        }
    }

    /// Guess from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") | Some("jsonl") => Format::JsonLines,
            _ => Format::Csv,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        Error::Io(e.to_string())
    } else {
        Error::Parse(e.to_string())
    }
}

pub fn write_csv<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    write_table(w, rows)
}

/// Any flat serializable record as CSV with a header row.
pub fn write_table<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a summary table, rejecting rows written with another column layout.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize::<ResultRow>() {
        let row = row.map_err(csv_err)?;
        check_schema(row.schema_version)?;
        out.push(row);
    }
    Ok(out)
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_rows<W: Write>(w: W, rows: &[ResultRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(w, rows),
        Format::JsonLines => write_jsonl(w, rows),
    }
}

pub fn read_rows<R: Read>(r: R, format: Format) -> Result<Vec<ResultRow>> {
    let rows = match format {
        Format::Csv => read_csv(r)?,
        Format::JsonLines => read_jsonl(BufReader::new(r))?,
    };
    for row in &rows {
        check_schema(row.schema_version)?;
    }
    Ok(rows)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn save_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_table(create(path)?, rows)
}

pub fn save_rows(path: &Path, rows: &[ResultRow], format: Format) -> Result<()> {
    write_rows(create(path)?, rows, format)
}

pub fn load_rows(path: &Path) -> Result<Vec<ResultRow>> {
    read_rows(open(path)?, Format::from_path(path))
}

pub fn save_trials(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_jsonl(create(path)?, records)
}

pub fn load_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    read_jsonl(BufReader::new(open(path)?))
}

/// `parameter value` per line, preceded by a `#` header naming the columns.
pub fn write_spectrum<W: Write>(mut w: W, points: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "# parameter pseudospectrum")?;
    for (x, y) in points {
        writeln!(w, "{x} {y}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrum<R: BufRead>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) => out.push((x, y)),
            _ => {
                return Err(Error::Parse(format!(
                    "spectrum line {}: expected two numbers",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn save_spectrum(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    write_spectrum(create(path)?, points)
}

pub fn load_spectrum(path: &Path) -> Result<Vec<(f64, f64)>> {
    read_spectrum(BufReader::new(open(path)?))
}
