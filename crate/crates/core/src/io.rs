//! CSV and manifest readers/writers for matrices, slice logs, event logs and
//! simulation traces.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, SystemMatrix};
use crate::slice::{EventRecord, Slice};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("{other:?}")),
        }
    } else {
        Error::parse(path, e)
    }
}

/// Writes the rows of `records` with a serde-derived header.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header-only files still need the column names, which serde cannot
/// produce from an empty slice.
fn write_header_if_empty(path: &Path, is_empty: bool, header: &[&str]) -> Result<bool> {
    if is_empty {
        let mut w = writer(path)?;
        w.write_record(header).map_err(|e| csv_err(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(is_empty)
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = reader(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::parse(path, format!("record {}: {e}", i + 1))))
        .collect()
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Nonzero entries as `row,col,value`.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["row", "col", "value"])
        .map_err(|e| csv_err(path, e))?;
    for i in 0..m.rows() {
        for (j, &v) in m.row(i).iter().enumerate() {
            if v != 0.0 {
                w.write_record([i.to_string(), j.to_string(), fmt17(v)])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct Entry {
    row: usize,
    col: usize,
    value: f64,
}

pub fn read_matrix_csv(path: &Path, rows: usize, cols: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(rows, cols);
    for e in read_records::<Entry>(path)? {
        if e.row >= rows || e.col >= cols {
            return Err(Error::parse(
                path,
                format!("entry ({},{}) outside {rows}x{cols}", e.row, e.col),
            ));
        }
        m[(e.row, e.col)] = e.value;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub k: usize,
    pub p: String,
    pub b: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub n: usize,
    pub s: usize,
    pub order: Vec<ManifestEntry>,
}

/// One `p_KKKKK.csv`/`b_KKKKK.csv` pair per step plus `manifest.json`.
pub fn write_sequence(dir: &Path, seq: &[SystemMatrix]) -> Result<()> {
    create_dir(dir)?;
    let (n, s) = seq.first().map_or((0, 0), |m| (m.n(), m.s()));
    let mut order = Vec::with_capacity(seq.len());
    for (k, m) in seq.iter().enumerate() {
        if m.n() != n || m.s() != s {
            return Err(Error::DimensionMismatch(format!(
                "step {k} is {}x{} with {} anchors, expected {n}x{n} with {s}",
                m.n(),
                m.n(),
                m.s()
            )));
        }
        let entry = ManifestEntry {
            k,
            p: format!("p_{k:05}.csv"),
            b: format!("b_{k:05}.csv"),
        };
        write_matrix_csv(&dir.join(&entry.p), m.p())?;
        write_matrix_csv(&dir.join(&entry.b), m.b())?;
        order.push(entry);
    }
    let manifest = SequenceManifest { n, s, order };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::parse(dir.join("manifest.json"), e))?;
    write_text(&dir.join("manifest.json"), &(json + "\n"))
}

pub fn read_sequence(dir: &Path) -> Result<Vec<SystemMatrix>> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SequenceManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    manifest
        .order
        .iter()
        .map(|e| {
            let p = read_matrix_csv(&dir.join(&e.p), manifest.n, manifest.n)?;
            let b = read_matrix_csv(&dir.join(&e.b), manifest.n, manifest.s)?;
            SystemMatrix::from_blocks(p, b)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceLogRow {
    pub slice_index: usize,
    pub start_k: usize,
    pub end_k: usize,
    pub length: usize,
    pub norm: f64,
    pub bound: f64,
}

impl From<&Slice> for SliceLogRow {
    fn from(s: &Slice) -> Self {
        Self {
            slice_index: s.index,
            start_k: s.start_k,
            end_k: s.end_k,
            length: s.length,
            norm: s.norm,
            bound: s.bound,
        }
    }
}

const SLICE_HEADER: [&str; 6] = ["slice_index", "start_k", "end_k", "length", "norm", "bound"];

pub fn write_slice_log(path: &Path, slices: &[Slice]) -> Result<()> {
    let rows: Vec<SliceLogRow> = slices.iter().map(SliceLogRow::from).collect();
    if write_header_if_empty(path, rows.is_empty(), &SLICE_HEADER)? {
        return Ok(());
    }
    write_records(path, &rows)
}

pub fn read_slice_log(path: &Path) -> Result<Vec<SliceLogRow>> {
    let rows: Vec<SliceLogRow> = read_records(path)?;
    if let Some(bad) = rows.iter().find(|r| r.length == 0) {
        return Err(Error::parse(
            path,
            format!("slice {} has length 0", bad.slice_index),
        ));
    }
    Ok(rows)
}

pub fn write_event_log(path: &Path, events: &[EventRecord]) -> Result<()> {
    if write_header_if_empty(
        path,
        events.is_empty(),
        &["k", "event", "row", "row_sum_after"],
    )? {
        return Ok(());
    }
    write_records(path, events)
}

/// Writes an arbitrary table; used for the per-step series.
pub fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
