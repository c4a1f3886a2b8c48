//! CSV datasets in and result tables out.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use modalreg::modal_lpr::Dataset;
use modalreg::varying_coeff::VCDataset;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Columns `x,y`.
    Scalar,
    /// Columns `u,x1,…,xp,y`; the intercept column is added on load.
    Vc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Scalar(Dataset),
    Vc(VCDataset),
}

/// Header and numeric rows of a CSV file; every cell must be a finite number.
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(CliError::Parse { line: 1, message: "missing header row".into() });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(CliError::Dimension { line, expected: header.len(), found: record.len() });
        }
        let mut row = Vec::with_capacity(record.len());
        for (cell, name) in record.iter().zip(&header) {
            let v: f64 = cell.parse().map_err(|_| CliError::Parse {
                line,
                message: format!("column {name:?}: {cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(CliError::NonFinite { line, column: name.clone() });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// The layout implied by a header: `x,y` or `u,…,y`.
pub fn detect_layout(header: &[String]) -> CliResult<Layout> {
    match header {
        [x, y] if x == "x" && y == "y" => Ok(Layout::Scalar),
        [u, .., y] if u == "u" && y == "y" && header.len() >= 3 => Ok(Layout::Vc),
        _ => Err(CliError::Parse {
            line: 1,
            message: format!("header {header:?} is neither `x,y` nor `u,x1,…,xp,y`"),
        }),
    }
}

pub fn parse_dataset(path: &Path, layout: Layout) -> CliResult<Parsed> {
    let (header, rows) = read_table(path)?;
    if detect_layout(&header)? != layout {
        let want = match layout {
            Layout::Scalar => "x,y",
            Layout::Vc => "u,x1,…,xp,y",
        };
        return Err(CliError::Parse { line: 1, message: format!("expected columns {want}, found {header:?}") });
    }
    build(layout, rows)
}

/// Reads a dataset whose layout is taken from its header.
pub fn parse_any(path: &Path) -> CliResult<Parsed> {
    let (header, rows) = read_table(path)?;
    build(detect_layout(&header)?, rows)
}

fn build(layout: Layout, rows: Vec<Vec<f64>>) -> CliResult<Parsed> {
    match layout {
        Layout::Scalar => {
            let (x, y) = rows.iter().map(|r| (r[0], r[1])).unzip();
            Ok(Parsed::Scalar(Dataset::new(x, y)?))
        }
        Layout::Vc => {
            let p = rows.first().map_or(0, |r| r.len() - 2);
            let u = rows.iter().map(|r| r[0]).collect();
            let x = rows.iter().map(|r| r[1..=p].to_vec()).collect();
            let y = rows.iter().map(|r| r[p + 1]).collect();
            Ok(Parsed::Vc(VCDataset::with_intercept(u, x, y)?))
        }
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// A result table written as CSV to a file or standard output.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    #[cfg(test)]
    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write_to<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Where results go: a file plus its JSON echo, or standard output.
pub struct Sink {
    pub output: Option<PathBuf>,
}

impl Sink {
    pub fn table(&self, table: &Table) -> CliResult<()> {
        match &self.output {
            Some(path) => {
                let file = File::create(path).map_err(|e| CliError::io(path, e))?;
                table.write_to(file).map_err(|e| CliError::io(path, e))
            }
            None => table.write_to(io::stdout().lock()).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
        }
    }

    pub fn json<T: Serialize>(&self, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
        match &self.output {
            Some(path) => std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e)),
            None => {
                println!("{text}");
                Ok(())
            }
        }
    }

    /// Writes the configuration echo next to the result (`<output>.json`), or to
    /// standard error when results go to standard output.
    pub fn echo<T: Serialize>(&self, command: &str, config: &T) -> CliResult<()> {
        let doc = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Usage(e.to_string()))?;
        match &self.output {
            Some(path) => {
                let mut echo = path.clone().into_os_string();
                echo.push(".json");
                let echo = PathBuf::from(echo);
                std::fs::write(&echo, text + "\n").map_err(|e| CliError::io(&echo, e))
            }
            None => {
                eprintln!("{text}");
                Ok(())
            }
        }
    }
}
