//! Minimal header-checked TSV reading shared by the table loaders.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct TsvReader<'a> {
    path: &'a Path,
    reader: csv::Reader<Box<dyn Read + 'a>>,
    /// Position of each required column in the file's header.
    index: Vec<usize>,
}

pub(crate) struct Row<'r> {
    path: &'r Path,
    line: u64,
    record: &'r csv::StringRecord,
    index: &'r [usize],
}

impl<'a> TsvReader<'a> {
    pub fn open(path: &'a Path, columns: &[&str], lenient: bool) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_reader(path, Box::new(file), columns, lenient)
    }

    pub fn from_reader(
        path: &'a Path,
        input: Box<dyn Read + 'a>,
        columns: &[&str],
        lenient: bool,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .quoting(false)
            .has_headers(true)
            .flexible(false)
            .from_reader(input);
        let header = reader.headers()?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if !lenient {
            if let Some(extra) = names.iter().find(|n| !columns.contains(n)) {
                return Err(Error::UnknownColumn {
                    path: path.to_path_buf(),
                    column: extra.to_string(),
                });
            }
        }
        let index = columns
            .iter()
            .map(|c| {
                names
                    .iter()
                    .position(|n| n == c)
                    .ok_or_else(|| Error::MissingHeader {
                        path: path.to_path_buf(),
                        column: c.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TsvReader {
            path,
            reader,
            index,
        })
    }

    /// Calls `f` on every data row. Blank lines are skipped by the csv reader.
    pub fn for_each(&mut self, mut f: impl FnMut(Row<'_>) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            let more = self.reader.read_record(&mut record).map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::parse(self.path, line, e.to_string())
            })?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(0, |p| p.line());
            f(Row {
                path: self.path,
                line,
                record: &record,
                index: &self.index,
            })?;
        }
    }
}

impl Row<'_> {
    pub fn line(&self) -> u64 {
        self.line
    }

    pub fn str(&self, col: usize) -> &str {
        self.record.get(self.index[col]).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, col: usize, name: &str) -> Result<T> {
        let raw = self.str(col).trim();
        raw.parse()
            .map_err(|_| self.error(format!("cannot parse {name} from `{raw}`")))
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, message)
    }
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    Ok(std::io::BufWriter::new(File::create(path)?))
}

pub(crate) fn write_header(out: &mut impl Write, columns: &[&str]) -> Result<()> {
    writeln!(out, "{}", columns.join("\t"))?;
    Ok(())
}
