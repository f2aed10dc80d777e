//! Result tables and their CSV and JSON renderings.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Map, Value};

#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// A single record from `(column, value)` pairs.
    pub fn record(pairs: Vec<(&str, Cell)>) -> Self {
        let (cols, row): (Vec<&str>, Vec<Cell>) = pairs.into_iter().unzip();
        let mut t = Table::new(&cols);
        t.push(row);
        t
    }
}

/// Six significant digits with a period separator; scientific notation
/// below 1e-4 and from 1e6 up.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if !(-4..6).contains(&exp) {
        return sci;
    }
    let rounded: f64 = sci.parse().unwrap();
    format!("{:.*}", (5 - exp) as usize, rounded)
}

fn csv_field(c: &Cell) -> String {
    match c {
        Cell::Num(v) => format_number(*v),
        Cell::Int(v) => v.to_string(),
        Cell::Text(s) => s.clone(),
        Cell::Bool(b) => b.to_string(),
        Cell::Missing => String::new(),
    }
}

fn json_value(c: &Cell) -> Value {
    match c {
        Cell::Num(v) if v.is_finite() => json!(v),
        Cell::Num(v) => json!(format_number(*v)),
        Cell::Int(v) => json!(v),
        Cell::Text(s) => json!(s),
        Cell::Bool(b) => json!(b),
        Cell::Missing => Value::Null,
    }
}

pub fn to_csv(table: &Table) -> Result<Vec<u8>, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.columns).map_err(|e| e.to_string())?;
    for row in &table.rows {
        w.write_record(row.iter().map(csv_field))
            .map_err(|e| e.to_string())?;
    }
    w.into_inner().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub parameters: Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub threads: Option<usize>,
    pub wall_time_s: f64,
}

pub fn to_json(table: &Table, manifest: &Manifest) -> Vec<u8> {
    let results: Vec<Value> = table
        .rows
        .iter()
        .map(|row| {
            Value::Object(
                table
                    .columns
                    .iter()
                    .cloned()
                    .zip(row.iter().map(json_value))
                    .collect::<Map<_, _>>(),
            )
        })
        .collect();
    let doc = json!({ "manifest": manifest, "results": results });
    let mut out = serde_json::to_vec_pretty(&doc).expect("JSON values serialize");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Write the result to `out` (or standard output). CSV output carries its
/// manifest in a `.manifest.json` sidecar, or on standard error when
/// printing to standard output.
pub fn emit(
    table: &Table,
    format: Format,
    out: Option<&str>,
    manifest: &Manifest,
) -> Result<(), String> {
    let body = match format {
        Format::Csv => to_csv(table)?,
        Format::Json => to_json(table, manifest),
    };
    let sidecar = || serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    match out {
        Some(path) => {
            std::fs::write(path, &body).map_err(|e| format!("cannot write {path}: {e}"))?;
            if format == Format::Csv {
                let side = format!("{path}.manifest.json");
                std::fs::write(&side, sidecar())
                    .map_err(|e| format!("cannot write {side}: {e}"))?;
            }
        }
        None => {
            std::io::stdout()
                .write_all(&body)
                .map_err(|e| format!("cannot write standard output: {e}"))?;
            if format == Format::Csv {
                let mut err = std::io::stderr();
                let _ = writeln!(
                    err,
                    "# manifest {}",
                    serde_json::to_string(manifest).expect("manifest serializes")
                );
            }
        }
    }
    Ok(())
}
