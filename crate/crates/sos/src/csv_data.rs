//! Streaming CSV source. The file is re-read on every pass and only one
//! chunk of parsed rows is held at a time.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use sos_core::data::{Chunk, Dataset, DEFAULT_CHUNK_ROWS};
use sos_core::Error as CoreError;

use crate::error::{CliError, Result};

#[derive(Clone, Debug)]
pub struct CsvDataset {
    path: PathBuf,
    response: usize,
    covariates: Vec<usize>,
    names: Vec<String>,
    chunk_rows: usize,
}

fn reader(path: &Path) -> std::io::Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::with_capacity(1 << 20, file)))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let row = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        kind => CliError::Core(CoreError::Data {
            row: None,
            message: match row {
                Some(line) => format!("line {line}: {kind:?}"),
                None => format!("{kind:?}"),
            },
        }),
    }
}

impl CsvDataset {
    /// Validates the header against the requested columns.
    pub fn open(path: impl AsRef<Path>, response: &str, covariates: &[String]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut rdr = reader(&path).map_err(|e| CliError::io(&path, e))?;
        let header = rdr.headers().map_err(|e| csv_error(&path, e))?.clone();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::config(format!("column '{name}' not found in {}", path.display())))
        };
        let response_idx = find(response)?;
        let mut idx = Vec::with_capacity(covariates.len());
        for (k, c) in covariates.iter().enumerate() {
            if c == response || covariates[..k].contains(c) {
                return Err(CliError::config(format!("column '{c}' is listed more than once")));
            }
            idx.push(find(c)?);
        }
        Ok(CsvDataset {
            path,
            response: response_idx,
            covariates: idx,
            names: covariates.to_vec(),
            chunk_rows: DEFAULT_CHUNK_ROWS,
        })
    }

    pub fn with_chunk_rows(mut self, rows: usize) -> Self {
        self.chunk_rows = rows.max(1);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }
}

fn parse_cell(record: &csv::ByteRecord, col: usize, name: &str, row: usize, line: u64) -> sos_core::Result<f64> {
    let raw = record.get(col).unwrap_or(b"");
    std::str::from_utf8(raw)
        .ok()
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| CoreError::Data {
            row: Some(row),
            message: format!(
                "line {line}, column '{name}': cannot parse '{}' as a number",
                String::from_utf8_lossy(raw)
            ),
        })
}

impl Dataset for CsvDataset {
    fn covariates(&self) -> usize {
        self.covariates.len()
    }

    fn for_each_chunk(
        &self,
        visit: &mut dyn FnMut(Chunk<'_>) -> sos_core::Result<()>,
    ) -> sos_core::Result<()> {
        let io_err = |e: std::io::Error| CoreError::Data {
            row: None,
            message: format!("{}: {e}", self.path.display()),
        };
        let mut rdr = reader(&self.path).map_err(io_err)?;
        let header = rdr
            .byte_headers()
            .map_err(|e| CoreError::Data {
                row: None,
                message: e.to_string(),
            })?
            .clone();
        let col_name = |c: usize| String::from_utf8_lossy(&header[c]).into_owned();
        let names: Vec<String> = self.covariates.iter().map(|&c| col_name(c)).collect();
        let response_name = col_name(self.response);

        let p = self.covariates.len();
        let mut x = Vec::with_capacity(self.chunk_rows * p);
        let mut y = Vec::with_capacity(self.chunk_rows);
        let mut first_row = 0;
        let mut row = 0;
        let mut record = csv::ByteRecord::new();
        loop {
            let more = rdr.read_byte_record(&mut record).map_err(|e| CoreError::Data {
                row: Some(row),
                message: e.to_string(),
            })?;
            if more {
                let line = record.position().map_or(0, |p| p.line());
                for (&c, name) in self.covariates.iter().zip(&names) {
                    x.push(parse_cell(&record, c, name, row, line)?);
                }
                y.push(parse_cell(&record, self.response, &response_name, row, line)?);
                row += 1;
            }
            if y.len() == self.chunk_rows || (!more && !y.is_empty()) {
                visit(Chunk {
                    first_row,
                    p,
                    x: &x,
                    y: &y,
                })?;
                first_row = row;
                x.clear();
                y.clear();
            }
            if !more {
                return Ok(());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reads_selected_columns_in_chunks() {
        let f = write("a,y,b,c\n1,0,2,9\n3,1,4,9\n5,0,6,9\n");
        let d = CsvDataset::open(f.path(), "y", &names(&["b", "a"])).unwrap().with_chunk_rows(2);
        let mut seen = vec![];
        d.for_each_chunk(&mut |c| {
            seen.push((c.first_row, c.x.to_vec(), c.y.to_vec()));
            Ok(())
        })
        .unwrap();
        assert_eq!(
            seen,
            vec![(0, vec![2.0, 1.0, 4.0, 3.0], vec![0.0, 1.0]), (2, vec![6.0, 5.0], vec![0.0])]
        );
        assert_eq!(d.count_rows().unwrap(), 3);
    }

    #[test]
    fn header_validation() {
        let f = write("a,y\n1,0\n");
        assert!(matches!(CsvDataset::open(f.path(), "z", &[]), Err(CliError::Config(_))));
        assert!(matches!(CsvDataset::open(f.path(), "y", &names(&["q"])), Err(CliError::Config(_))));
        assert!(matches!(CsvDataset::open(f.path(), "y", &names(&["a", "a"])), Err(CliError::Config(_))));
        assert!(matches!(CsvDataset::open(f.path(), "y", &names(&["y"])), Err(CliError::Config(_))));
        assert!(matches!(CsvDataset::open("/nonexistent/x.csv", "y", &[]), Err(CliError::Io { .. })));
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        let f = write("a,y\n1,0\n2,1\nabc,0\n");
        let d = CsvDataset::open(f.path(), "y", &names(&["a"])).unwrap();
        let e = d.count_rows().unwrap_err();
        match e {
            CoreError::Data { row: Some(2), message } => {
                assert!(message.contains("line 4") && message.contains("'a'") && message.contains("abc"), "{message}")
            }
            other => panic!("{other:?}"),
        }
    }
}
