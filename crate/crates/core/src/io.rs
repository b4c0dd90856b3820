//! Output artifacts: headed CSV tables, JSON metadata sidecars and a raw
//! little-endian grid dump.
//!
//! CSV content is a pure function of the inputs so that identical runs give
//! byte-identical tables; everything run-specific (timestamp, thread count)
//! lives in the sidecar.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Column of a table: a short name, its unit and what it holds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Column {
    pub name: &'static str,
    pub unit: &'static str,
    pub definition: &'static str,
}

impl Column {
    pub const fn new(name: &'static str, unit: &'static str, definition: &'static str) -> Self {
        Self { name, unit, definition }
    }
}

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i32> for Cell {
    fn from(v: i32) -> Self {
        Cell::Int(v.into())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Shortest round-trip form of a float; `nan`/`inf` spelled out.
fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:e}")
    }
}

fn fmt_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// A table with a `name [unit]` header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    /// Appends a row; panics on a width mismatch, which is a programming error.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let head: Vec<String> = self.columns.iter().map(|c| fmt_text(&format!("{} [{}]", c.name, c.unit))).collect();
        let _ = writeln!(s, "{}", head.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Num(v) => fmt_num(*v),
                    Cell::Int(v) => v.to_string(),
                    Cell::Text(t) => fmt_text(t),
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Hex SHA-256 of a serializable value's canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Run metadata written next to every output table.
#[derive(Clone, Debug, Serialize)]
pub struct Sidecar {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub config_sha256: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub config: serde_json::Value,
    pub tables: Vec<TableMeta>,
    pub summary: serde_json::Value,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TableMeta {
    pub file: String,
    pub columns: Vec<Column>,
}

impl Sidecar {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub fn unix_time() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Magic bytes opening a grid dump.
pub const DUMP_MAGIC: &[u8; 8] = b"MCFLOWG1";

/// Fields on an `n1 × n2` grid, row-major with the second index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDump {
    pub n1: u32,
    pub n2: u32,
    pub t: f64,
    pub fields: Vec<Vec<f64>>,
}

impl GridDump {
    /// Layout: magic, `u32 n1`, `u32 n2`, `u32 nfields`, `f64 t`, then
    /// `nfields · n1 · n2` doubles, all little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let len = self.n1 as usize * self.n2 as usize;
        if self.fields.iter().any(|f| f.len() != len) {
            return Err(Error::InvalidParameter(format!("every field must have {len} values")));
        }
        let mut out = Vec::with_capacity(28 + 8 * len * self.fields.len());
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&self.n1.to_le_bytes());
        out.extend_from_slice(&self.n2.to_le_bytes());
        out.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        for v in self.fields.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidParameter(format!("grid dump: {m}"));
        if bytes.len() < 28 || &bytes[..8] != DUMP_MAGIC {
            return Err(bad("missing magic"));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (n1, n2, nf) = (u(8), u(12), u(16) as usize);
        let t = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let len = n1 as usize * n2 as usize;
        if bytes.len() != 28 + 8 * len * nf {
            return Err(bad("length does not match the header"));
        }
        let vals: Vec<f64> = bytes[28..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let fields = if len == 0 { vec![Vec::new(); nf] } else { vals.chunks(len).map(<[f64]>::to_vec).collect() };
        Ok(Self { n1, n2, t, fields })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
