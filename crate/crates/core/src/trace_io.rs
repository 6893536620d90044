//! On-disk layout of run artifacts: `metadata.json`, per-step `trace.csv`,
//! and an optional flat `states.bin`.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::flow::FlowTrace;

pub const METADATA_FILE: &str = "metadata.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const STATES_FILE: &str = "states.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub h: f64,
    pub nodes: usize,
    pub components: usize,
}

/// Byte layout of `states.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    pub file: String,
    pub dtype: String,
    pub order: String,
    /// `[states, nodes, components]`
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub scenario: String,
    pub job: String,
    pub grid: GridMeta,
    pub operator: String,
    pub integrand: String,
    pub boundary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub seed: u64,
    pub config_sha256: String,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub created_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<StateLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Data files written next to the metadata.
    #[serde(default)]
    pub files: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

pub type TraceResult<T> = std::result::Result<T, TraceError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TraceError + '_ {
    move |source| TraceError::Io { path: path.to_path_buf(), source }
}

/// Formats a float with the shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

/// Writes a CSV table with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> TraceResult<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> io::Result<()> {
        writeln!(out, "{}", header.join(","))?;
        for row in rows {
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

/// Reads a CSV table written by [`write_csv`].
pub fn read_csv(path: &Path) -> TraceResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| TraceError::Corrupt { path: path.into(), reason: "empty file".into() })?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(TraceError::Corrupt {
                path: path.into(),
                reason: format!("row {} has {} fields, header has {}", i + 1, row.len(), header.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Numeric column by name.
pub fn column(path: &Path, header: &[String], rows: &[Vec<String>], name: &str) -> TraceResult<Vec<f64>> {
    let idx = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| TraceError::Corrupt { path: path.into(), reason: format!("no column `{name}`") })?;
    rows.iter()
        .map(|r| {
            r[idx].parse::<f64>().map_err(|_| TraceError::Corrupt {
                path: path.into(),
                reason: format!("bad number `{}` in column `{name}`", r[idx]),
            })
        })
        .collect()
}

pub fn write_metadata(dir: &Path, meta: &Metadata) -> TraceResult<()> {
    let path = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn read_metadata(dir: &Path) -> TraceResult<Metadata> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| TraceError::Corrupt { path, reason: e.to_string() })
}

const TRACE_COLUMNS: [&str; 10] = [
    "step",
    "time",
    "energy",
    "mass",
    "euler_lagrange_residual",
    "normal_trace_residual",
    "fenchel_gap",
    "boundary_subgradient_residual",
    "iterations",
    "certificate_energy",
];

/// Writes `trace.csv` (and `states.bin` when asked); returns the state layout.
pub fn write_flow(dir: &Path, trace: &FlowTrace, with_states: bool) -> TraceResult<Option<StateLayout>> {
    let mut header: Vec<&str> = TRACE_COLUMNS.to_vec();
    header.extend(trace.diagnostics.keys().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..trace.times.len())
        .map(|k| {
            let c = &trace.certificates[k];
            let mut row = vec![
                k.to_string(),
                fmt_f64(trace.times[k]),
                fmt_f64(trace.energies[k]),
                fmt_f64(trace.mass[k]),
                fmt_f64(c.euler_lagrange_residual),
                fmt_f64(c.normal_trace_residual),
                fmt_f64(c.fenchel_gap),
                fmt_f64(c.boundary_subgradient_residual),
                trace.iterations[k].to_string(),
                fmt_f64(c.energy),
            ];
            row.extend(trace.diagnostics.values().map(|v| v.get(k).map_or("nan".into(), |x| fmt_f64(*x))));
            row
        })
        .collect();
    write_csv(&dir.join(TRACE_FILE), &header, &rows)?;
    if !with_states {
        return Ok(None);
    }
    let path = dir.join(STATES_FILE);
    let mut bytes = Vec::new();
    for s in &trace.states {
        for v in s.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&path, bytes).map_err(io_err(&path))?;
    let first = &trace.states[0];
    Ok(Some(StateLayout {
        file: STATES_FILE.into(),
        dtype: "f64-le".into(),
        order: "row-major".into(),
        shape: vec![trace.states.len(), first.grid().nodes(), first.m()],
    }))
}

/// Reads `states.bin` back as one flat vector per state.
pub fn read_states(dir: &Path, layout: &StateLayout) -> TraceResult<Vec<Vec<f64>>> {
    let path = dir.join(&layout.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let per = layout.shape.iter().skip(1).product::<usize>();
    let count = layout.shape.first().copied().unwrap_or(0);
    if bytes.len() != 8 * per * count {
        return Err(TraceError::Corrupt { path, reason: "size does not match the declared layout".into() });
    }
    Ok(bytes
        .chunks(8 * per)
        .map(|c| c.chunks(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        .collect())
}
