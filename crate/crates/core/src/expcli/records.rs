//! Versioned CSV tables.
//!
//! Every file starts with a `# schema=v1` comment line followed by a header.
//! Floats are written with 17 significant digits so they parse back to the
//! same bits; absent values are empty fields.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hypergrad::RunRecord;

pub const SCHEMA_LINE: &str = "# schema=v1";

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A header plus string rows, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Table) {
        assert_eq!(self.columns, other.columns, "tables must share a header");
        self.rows.extend(other.rows);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Validation(format!("no column `{name}`")))
    }

    /// Column values parsed as floats; empty fields become `None`.
    pub fn floats(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                let s = r[i].trim();
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| Error::Validation(format!("`{s}` in column `{name}` is not a number")))
                }
            })
            .collect()
    }

    pub fn strings(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::io(path, e);
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(file, "{SCHEMA_LINE}").map_err(io)?;
        {
            let mut w = csv::WriterBuilder::new().from_writer(&mut file);
            let csv_err = |e: csv::Error| Error::io(path, e.into());
            w.write_record(&self.columns).map_err(csv_err)?;
            for row in &self.rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.flush().map_err(io)?;
        }
        file.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if text.lines().next() != Some(SCHEMA_LINE) {
            return Err(parse(1, format!("expected `{SCHEMA_LINE}`")));
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| parse(2, e.to_string()))?
            .iter()
            .map(String::from)
            .collect();
        let mut table = Table::new::<String>(columns);
        for rec in reader.records() {
            let rec = rec.map_err(|e| parse(e.position().map(|p| p.line() as usize).unwrap_or(0), e.to_string()))?;
            table.rows.push(rec.iter().map(String::from).collect());
        }
        Ok(table)
    }
}

pub const RECORD_COLUMNS: [&str; 12] = [
    "iteration",
    "train_loss",
    "val_loss",
    "test_loss",
    "train_accuracy",
    "val_accuracy",
    "test_accuracy",
    "fixed_point_residual",
    "hypergrad_norm",
    "diverged",
    "failed",
    "seed",
];

/// Rows for run records; wall-clock time is left out so reruns are
/// byte-identical.
pub fn records_table(records: &[RunRecord], seed: u64) -> Table {
    let mut t = Table::new(RECORD_COLUMNS);
    for r in records {
        t.push(vec![
            r.iteration.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.val_loss),
            fmt_opt(r.test_loss),
            fmt_opt(r.train_accuracy),
            fmt_opt(r.val_accuracy),
            fmt_opt(r.test_accuracy),
            fmt_f64(r.fixed_point_residual),
            fmt_f64(r.hypergrad_norm),
            r.diverged.to_string(),
            r.failed.to_string(),
            seed.to_string(),
        ]);
    }
    t
}

pub fn write_records(records: &[RunRecord], seed: u64, path: &Path) -> Result<()> {
    records_table(records, seed).write(path)
}

/// Mean and population standard deviation of `values` for each distinct
/// combination of `keys`, in order of first appearance.
pub fn summarize(table: &Table, keys: &[&str], values: &[&str]) -> Result<Table> {
    let key_idx: Vec<usize> = keys.iter().map(|k| table.column(k)).collect::<Result<_>>()?;
    let cols: Vec<Vec<Option<f64>>> = values.iter().map(|v| table.floats(v)).collect::<Result<_>>()?;
    let mut groups: Vec<(Vec<String>, Vec<usize>)> = Vec::new();
    for (r, row) in table.rows.iter().enumerate() {
        let key: Vec<String> = key_idx.iter().map(|&i| row[i].clone()).collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut header: Vec<String> = keys.iter().map(|k| k.to_string()).collect();
    header.push("n".into());
    for v in values {
        header.push(format!("mean_{v}"));
        header.push(format!("std_{v}"));
    }
    let mut out = Table::new::<String>(header);
    for (key, members) in groups {
        let mut row = key;
        row.push(members.len().to_string());
        for col in &cols {
            let xs: Vec<f64> = members.iter().filter_map(|&r| col[r]).collect();
            if xs.is_empty() {
                row.push(String::new());
                row.push(String::new());
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            row.push(fmt_f64(mean));
            row.push(fmt_f64(var.sqrt()));
        }
        out.push(row);
    }
    Ok(out)
}
