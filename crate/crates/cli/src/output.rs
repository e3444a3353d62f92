use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
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

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Column-major header plus rows, emitted as CSV or as `{"columns": [..], "rows": [[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::csv).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// Writes artifacts into the output directory and remembers what it wrote.
#[derive(Debug)]
pub struct OutputSink {
    pub dir: PathBuf,
    pub format: Format,
    written: Vec<String>,
}

impl OutputSink {
    pub fn create(dir: &Path, format: Format) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputSink { dir: dir.to_path_buf(), format, written: Vec::new() })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        log::info!("wrote {}", path.display());
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Writes `<stem>.csv` or `<stem>.json` depending on the format.
    pub fn write_table(&mut self, stem: &str, table: &Table) -> CliResult<PathBuf> {
        let name = format!("{stem}.{}", self.format.extension());
        match self.format {
            Format::Csv => self.write_text(&name, &table.to_csv()),
            Format::Json => self.write_json(&name, table),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_numbers() {
        let mut t = Table::new(["u", "name", "path_id"]);
        t.push(vec![0.5.into(), "a,b".into(), 3usize.into()]);
        assert_eq!(t.to_csv(), "u,name,path_id\n0.5,\"a,b\",3\n");
    }

    #[test]
    fn json_table_shape() {
        let mut t = Table::new(["x"]);
        t.push(vec![1.0.into()]);
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["columns"][0], "x");
        assert_eq!(v["rows"][0][0], 1.0);
    }
}
