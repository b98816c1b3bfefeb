//! Artifact files: labelled matrix CSVs, JSON documents and run manifests.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fips_core::{Error, Result};
use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, StageSeeds};

pub const MANIFEST_VERSION: u32 = 1;

/// A country × product (or target × feature) table with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledMatrix<T> {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Array2<T>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { path: path.into(), line, msg: format!("{other:?}") },
    }
}

/// Header `<corner>,<cols…>`, then one row per label.
pub fn write_matrix<T: Display>(path: &Path, corner: &str, rows: &[String], cols: &[String], values: &Array2<T>) -> Result<()> {
    if values.dim() != (rows.len(), cols.len()) {
        return Err(Error::Shape(format!("{:?} values for {}×{} labels", values.dim(), rows.len(), cols.len())));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = std::iter::once(corner.to_string()).chain(cols.iter().cloned());
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for (label, row) in rows.iter().zip(values.rows()) {
        let record = std::iter::once(label.clone()).chain(row.iter().map(|v| v.to_string()));
        w.write_record(record).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// A plain table with a header row.
pub fn write_table<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<T: FromStr>(path: &Path) -> Result<LabelledMatrix<T>>
where
    T::Err: Display,
{
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_error(path, e))?;
    let cols: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    let mut flat = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        if rec.len() != cols.len() + 1 {
            return Err(Error::Parse { path: path.into(), line, msg: format!("{} fields, expected {}", rec.len(), cols.len() + 1) });
        }
        rows.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v = field.parse::<T>().map_err(|e| Error::Parse { path: path.into(), line, msg: format!("{field:?}: {e}") })?;
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((rows.len(), cols.len()), flat).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(LabelledMatrix { rows, cols, values })
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Inputs read and outputs written by one command.
#[derive(Debug, Default)]
pub struct Ledger {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ledger {
    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    pub fn output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    command: &'a str,
    tool_version: &'a str,
    config: &'a RunConfig,
    seeds: StageSeeds,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Paths inside `out` are recorded relative to it so that an output tree
/// can be moved without invalidating its manifests.
fn digest(path: &Path, out: &Path) -> Result<FileDigest> {
    let shown = path.strip_prefix(out).unwrap_or(path);
    Ok(FileDigest { path: shown.to_string_lossy().replace('\\', "/"), sha256: sha256_file(path)? })
}

pub fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, ledger: &Ledger) -> Result<PathBuf> {
    let m = Manifest {
        manifest_version: MANIFEST_VERSION,
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seeds: cfg.seeds(),
        inputs: ledger.inputs.iter().map(|p| digest(p, out)).collect::<Result<_>>()?,
        outputs: ledger.outputs.iter().map(|p| digest(p, out)).collect::<Result<_>>()?,
    };
    let path = out.join(format!("{command}.manifest.json"));
    write_json(&path, &m)?;
    Ok(path)
}
