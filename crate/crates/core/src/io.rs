//! File formats: stimulus and series CSV, the FMRB1 voxel grid with its JSON
//! sidecar, truth masks, per-voxel results and q-value tables.
//!
//! Every CSV writer accepts an optional comment that is emitted as a leading
//! `# ...` line; every reader skips such lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{StimulusGrid, StimulusRun};
use crate::error::{Error, Result};

pub const FMRB1_MAGIC: &[u8; 6] = b"FMRB1\0";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn write_comment(w: &mut impl Write, comment: Option<&str>, path: &Path) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => format_err(path, e),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

/// Stimulus CSV: a header of type names, then one row of 0/1 values per time
/// point. A blank line starts a new run.
pub fn read_stimulus_csv(path: &Path, resolution_s: f64) -> Result<StimulusGrid> {
    let reader = open(path)?;
    let mut names: Option<Vec<String>> = None;
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut current: Option<Vec<Vec<u8>>> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if let Some(run) = current.take() {
                runs.push(run);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(header) = &names else {
            names = Some(fields.iter().map(|s| s.to_string()).collect());
            continue;
        };
        if fields.len() != header.len() {
            return Err(format_err(
                path,
                format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    header.len(),
                    fields.len()
                ),
            ));
        }
        let run = current.get_or_insert_with(|| vec![Vec::new(); header.len()]);
        for (j, f) in fields.iter().enumerate() {
            let v = match *f {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(format_err(
                        path,
                        format!(
                            "line {}: stimulus value {other:?} is not 0 or 1",
                            lineno + 1
                        ),
                    ))
                }
            };
            run[j].push(v);
        }
    }
    if let Some(run) = current.take() {
        runs.push(run);
    }
    let names = names.ok_or_else(|| format_err(path, "missing header"))?;
    if runs.is_empty() {
        return Err(format_err(path, "no stimulus rows"));
    }
    let runs = runs
        .into_iter()
        .map(StimulusRun::new)
        .collect::<Result<Vec<_>>>()?;
    StimulusGrid::new(names, runs, resolution_s)
}

pub fn write_stimulus_csv(path: &Path, grid: &StimulusGrid, comment: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write_comment(&mut w, comment, path)?;
    writeln!(w, "{}", grid.names().join(",")).map_err(io)?;
    for (r, run) in grid.runs().iter().enumerate() {
        if r > 0 {
            writeln!(w).map_err(io)?;
        }
        for i in 0..run.len() {
            let row: Vec<&str> = run
                .trains()
                .iter()
                .map(|t| if t[i] == 1 { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Series CSV: a header naming each column, one column per voxel.
pub fn read_series_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv_reader(path)?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if names.is_empty() || names.iter().all(|s| s.is_empty()) {
        return Err(format_err(path, "missing header"));
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                format_err(path, format!("row {}: {field:?} is not a number", row + 1))
            })?;
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    Ok((names, columns))
}

pub fn write_series_csv(
    path: &Path,
    names: &[String],
    columns: &[Vec<f64>],
    comment: Option<&str>,
) -> Result<()> {
    if names.len() != columns.len() {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            found: columns.len(),
        });
    }
    let len = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidDimension(
            "series columns differ in length".into(),
        ));
    }
    let mut w = create(path)?;
    write_comment(&mut w, comment, path)?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(names).map_err(|e| csv_err(path, e))?;
    for i in 0..len {
        wtr.write_record(columns.iter().map(|c| format!("{}", c[i])))
            .map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// In-memory FMRB1 grid: `data[voxel * nt + t]`, voxels with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub nt: usize,
    pub data: Vec<f32>,
}

impl VoxelGrid {
    pub fn from_series(dims: [usize; 3], series: &[Vec<f64>]) -> Result<Self> {
        let nvox: usize = dims.iter().product();
        if series.len() != nvox {
            return Err(Error::DimensionMismatch {
                expected: nvox,
                found: series.len(),
            });
        }
        let nt = series.first().map_or(0, Vec::len);
        if series.iter().any(|s| s.len() != nt) {
            return Err(Error::InvalidDimension(
                "voxel series differ in length".into(),
            ));
        }
        Ok(VoxelGrid {
            dims,
            nt,
            data: series.iter().flatten().map(|&v| v as f32).collect(),
        })
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn series(&self, voxel: usize) -> Vec<f64> {
        self.data[voxel * self.nt..(voxel + 1) * self.nt]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }
}

pub fn write_fmrb1(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(FMRB1_MAGIC).map_err(io)?;
    for d in grid.dims.iter().chain(std::iter::once(&grid.nt)) {
        let d =
            u32::try_from(*d).map_err(|_| Error::InvalidDimension(format!("{d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes()).map_err(io)?;
    }
    for v in &grid.data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_fmrb1(path: &Path) -> Result<VoxelGrid> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 22 || &bytes[..6] != FMRB1_MAGIC {
        return Err(format_err(path, "not an FMRB1 file"));
    }
    let word = |k: usize| {
        let o = 6 + 4 * k;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let dims = [word(0), word(1), word(2)];
    let nt = word(3);
    let count = dims.iter().product::<usize>() * nt;
    if bytes.len() != 22 + 4 * count {
        return Err(format_err(
            path,
            format!("expected {} bytes, found {}", 22 + 4 * count, bytes.len()),
        ));
    }
    let data = bytes[22..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(VoxelGrid { dims, nt, data })
}

/// JSON metadata written next to an FMRB1 grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    /// Repetition time in seconds.
    pub tr: f64,
    pub stimulus: String,
    pub seed: u64,
    pub truth_mask: Option<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(path, e))?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| format_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub voxel: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub active: u8,
    pub scale: f64,
}

/// Per-voxel result record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub voxel: usize,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "p_K")]
    pub p_k: Option<f64>,
    #[serde(rename = "K_bc")]
    pub k_bc: Option<f64>,
    #[serde(rename = "p_Kbc")]
    pub p_kbc: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub bandwidth: Option<f64>,
    pub gamma0: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    /// 1 when the correlation band was shrunk to restore definiteness.
    pub shrinkage: u8,
    /// `ok`, `degenerate`, `white_fallback` or `failed:<reason>`.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QValueRow {
    pub voxel: usize,
    pub p: f64,
    pub q: f64,
    pub reject: u8,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T], comment: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    write_comment(&mut w, comment, path)?;
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv_reader(path)?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Voxel indices and one p-value column of a result CSV, looked up by header
/// name. Empty cells (failed voxels) are returned as `None`.
pub fn read_p_column(path: &Path, column: &str) -> Result<Vec<(usize, Option<f64>)>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, format!("missing column {name:?}")))
    };
    let vi = find("voxel")?;
    let pi = find(column)?;
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| format_err(path, format!("row {}: invalid {what}", row + 1));
        let voxel = record[vi].parse().map_err(|_| bad("voxel"))?;
        let p = match &record[pi] {
            "" => None,
            s => {
                let p: f64 = s.parse().map_err(|_| bad(column))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad(column));
                }
                Some(p)
            }
        };
        out.push((voxel, p));
    }
    Ok(out)
}
