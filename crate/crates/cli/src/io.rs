//! CSV and JSON file handling with line-numbered error messages.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;

/// A rectangular table with a header row.
#[derive(Debug, Clone)]
pub struct Table<T> {
    pub header: Vec<String>,
    pub rows: Vec<Vec<T>>,
}

impl Table<f64> {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let (n, p) = (self.rows.len(), self.header.len());
        DMatrix::from_fn(n, p, |i, j| self.rows[i][j])
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("{}: cannot open", path.display()))
}

fn header(rdr: &mut csv::Reader<fs::File>, path: &Path) -> Result<Vec<String>> {
    let h: Vec<String> = rdr
        .headers()
        .with_context(|| format!("{}: line 1: cannot read header", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        bail!("{}: line 1: empty header", path.display());
    }
    let mut seen = HashSet::new();
    for name in &h {
        if !seen.insert(name) {
            bail!("{}: line 1: duplicate column name {name:?}", path.display());
        }
    }
    Ok(h)
}

/// Reads a numeric table. Every cell must parse; `NA` is rejected.
pub fn read_table<T, F>(path: &Path, what: &str, parse: F) -> Result<Table<T>>
where
    F: Fn(&str) -> Option<T>,
{
    let mut rdr = reader(path)?;
    let header = header(&mut rdr, path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            bail!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                rec.len()
            );
        }
        let mut row = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            match parse(field) {
                Some(v) => row.push(v),
                None => bail!(
                    "{}: line {line}, column {} ({}): cannot parse {field:?} as {what}",
                    path.display(),
                    c + 1,
                    header[c]
                ),
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(Table { header, rows })
}

pub fn read_numeric(path: &Path) -> Result<Table<f64>> {
    read_table(path, "a finite number", |s| {
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    })
}

pub fn read_counts(path: &Path) -> Result<Table<u64>> {
    read_table(path, "a nonnegative integer", |s| s.parse::<u64>().ok())
}

/// Rows of string fields keyed by the header.
pub fn read_records(path: &Path) -> Result<(Vec<String>, Vec<(u64, Vec<String>)>)> {
    let mut rdr = reader(path)?;
    let header = header(&mut rdr, path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            bail!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                rec.len()
            );
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

pub fn write_csv<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("{}: cannot create", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Header row plus rows of displayable cells.
pub fn write_matrix<T: ToString>(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<T>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("{}: cannot create", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(ToString::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("{}: cannot write", path.display()))
}

pub fn out_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("{}: cannot create output directory", dir.display()))?;
    Ok(dir.to_path_buf())
}
