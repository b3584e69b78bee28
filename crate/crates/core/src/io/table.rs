//! Header-checked CSV tables with line-numbered field errors.

use std::fmt::Display;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Trim};

use crate::error::{Error, Result};

/// Shortest decimal form that parses back to the same `f64`.
#[inline]
pub fn format_float(x: f64) -> String {
    x.to_string()
}

pub(crate) fn csv_error(path: &Path, source: csv::Error) -> Error {
    match source.kind() {
        csv::ErrorKind::Io(_) => match source.into_kind() {
            csv::ErrorKind::Io(e) => Error::io(path, e),
            _ => unreachable!(),
        },
        _ => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
    }
}

pub(crate) struct Table {
    path: PathBuf,
    header: Vec<String>,
    reader: csv::Reader<File>,
}

impl Table {
    /// Opens `path`; its header must be `required` followed by a prefix of
    /// `optional`.
    pub(crate) fn open(path: &Path, required: &[&str], optional: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = ReaderBuilder::new().flexible(true).trim(Trim::All).from_reader(file);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let expected: Vec<&str> = required.iter().chain(optional).copied().collect();
        let fits = header.len() >= required.len()
            && header.len() <= expected.len()
            && header.iter().zip(&expected).all(|(a, b)| a == b);
        if !fits {
            return Err(Error::Header {
                path: path.to_path_buf(),
                found: header,
                expected: expected.iter().map(|s| s.to_string()).collect(),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            reader,
        })
    }

    /// Calls `f` on every data row after checking its arity.
    pub(crate) fn for_each(mut self, mut f: impl FnMut(&Row<'_>) -> Result<()>) -> Result<()> {
        let mut record = StringRecord::new();
        while self
            .reader
            .read_record(&mut record)
            .map_err(|e| csv_error(&self.path, e))?
        {
            let row = Row {
                path: &self.path,
                header: &self.header,
                line: record.position().map_or(0, |p| p.line()),
                record: &record,
            };
            if record.len() != self.header.len() {
                let column = self.header.get(record.len()).map_or("<extra>", String::as_str);
                return Err(row.error_at(
                    column,
                    format!("row has {} fields, expected {}", record.len(), self.header.len()),
                ));
            }
            f(&row)?;
        }
        Ok(())
    }
}

pub(crate) struct Row<'a> {
    path: &'a Path,
    header: &'a [String],
    record: &'a StringRecord,
    pub(crate) line: u64,
}

impl Row<'_> {
    fn error_at(&self, column: &str, message: impl Into<String>) -> Error {
        Error::Schema {
            path: self.path.to_path_buf(),
            line: self.line,
            column: column.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn has_column(&self, name: &str) -> bool {
        self.header.iter().any(|h| h == name)
    }

    pub(crate) fn error(&self, col: usize, message: impl Into<String>) -> Error {
        self.error_at(&self.header[col], message)
    }

    pub(crate) fn parse<T: FromStr>(&self, col: usize) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = &self.record[col];
        raw.parse()
            .map_err(|e| self.error(col, format!("cannot parse {raw:?}: {e}")))
    }

    pub(crate) fn finite(&self, col: usize) -> Result<f64> {
        let v: f64 = self.parse(col)?;
        if !v.is_finite() {
            return Err(self.error(col, format!("value {v} is not finite")));
        }
        Ok(v)
    }

    pub(crate) fn flag(&self, col: usize) -> Result<bool> {
        match &self.record[col] {
            "0" | "false" => Ok(false),
            "1" | "true" => Ok(true),
            raw => Err(self.error(col, format!("expected 0 or 1, found {raw:?}"))),
        }
    }
}

/// Writes `header` and `rows`, creating the parent directory if needed.
pub(crate) fn write_table<H, R>(path: &Path, header: &[H], rows: impl IntoIterator<Item = R>) -> Result<()>
where
    H: AsRef<str>,
    R: IntoIterator<Item = String>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(header.iter().map(AsRef::as_ref))
        .map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
