//! Atomic file output and reading CSVs back for plotting.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(tmp.display(), e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path.display(), e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
}

/// CSV text with `#` metadata lines, a header row and optional trailing comments.
pub struct CsvBuilder {
    text: String,
}

impl CsvBuilder {
    pub fn new(meta: &[String], columns: &[&str]) -> Self {
        let mut text = String::new();
        for line in meta {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
        text.push_str(&columns.join(","));
        text.push('\n');
        CsvBuilder { text }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn comment(&mut self, line: &str) {
        self.text.push_str("# ");
        self.text.push_str(line);
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Comment lines with the "# " prefix removed, in file order.
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Ok(Table::parse(&text))
    }

    pub fn parse(text: &str) -> Table {
        let mut comments = Vec::new();
        let mut columns = Vec::new();
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.trim_start().to_string());
            } else if columns.is_empty() {
                columns = line.split(',').map(str::to_string).collect();
            } else if !line.is_empty() {
                rows.push(line.split(',').map(str::to_string).collect());
            }
        }
        Table { comments, columns, rows }
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.get(i).map(String::as_str).unwrap_or("")).collect())
    }

    /// Numeric column; blank or unparsable cells become NaN.
    pub fn numbers(&self, name: &str) -> Vec<f64> {
        self.column(name)
            .unwrap_or_default()
            .into_iter()
            .map(|s| s.parse().unwrap_or(f64::NAN))
            .collect()
    }

    /// Value of a "key: value" comment line.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| c.strip_prefix(key).and_then(|r| r.strip_prefix(':')).map(str::trim))
    }
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Shortest round-trip form of a float, with an exponent for very large or small magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
