//! CSV results and the plain-text summary that accompanies them.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    /// Reals use 17 significant digits so that values round-trip exactly.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Table with a fixed header; rows must match it in length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row does not match header {:?}", self.header);
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn to_csv(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| e.into_error())
    }
}

/// Outcome of a subcommand before it is written out.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: Table,
    /// `key: value` lines for the summary, in order.
    pub facts: Vec<(String, String)>,
    /// Property failures; non-empty means exit status 4.
    pub failures: Vec<String>,
}

impl Report {
    pub fn new(table: Table) -> Self {
        Self { table, facts: Vec::new(), failures: Vec::new() }
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) {
        self.facts.push((key.to_string(), value.to_string()));
    }

    pub fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    pub fn summary(&self, name: &str, resolved_config: &str) -> String {
        let mut s = format!("subcommand: {name}\nrows: {}\n", self.table.rows.len());
        for (k, v) in &self.facts {
            s.push_str(&format!("{k}: {v}\n"));
        }
        if self.failures.is_empty() {
            s.push_str("status: ok\n");
        } else {
            s.push_str("status: property failure\n");
            for f in &self.failures {
                s.push_str(&format!("failed: {f}\n"));
            }
        }
        s.push_str("\n# resolved configuration\n");
        s.push_str(resolved_config);
        s
    }

    /// Write `<dir>/<name>.csv` and `<dir>/<name>.summary.txt`.
    pub fn write(&self, dir: &Path, name: &str, resolved_config: &str) -> io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{name}.csv"));
        let summary_path = dir.join(format!("{name}.summary.txt"));
        fs::write(&csv_path, self.table.to_csv()?)?;
        fs::write(&summary_path, self.summary(name, resolved_config))?;
        Ok((csv_path, summary_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_with_seventeen_digits() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = Cell::Real(v).render();
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
    }

    #[test]
    fn csv_uses_lf_and_fixed_header() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![1usize.into(), 0.5.into()]);
        let out = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(out, "a,b\n1,5.0000000000000000e-1\n");
    }

    #[test]
    #[should_panic]
    fn short_rows_are_a_bug() {
        Table::new(&["a", "b"]).push(vec![1usize.into()]);
    }
}
