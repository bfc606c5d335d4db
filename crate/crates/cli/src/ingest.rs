//! CSV input with header `y,x1..xk,w1..wd`.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use pairdiff_core::{DataError, Dataset};

use crate::error::CliError;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("empty file")]
    Empty,
    #[error("malformed header `{found}`: expected `y,x1,...,xk,w1,...,wd` with k, d >= 1")]
    Header { found: String },
    #[error("row {row}: expected {expected} fields, found {got}")]
    RowLength { row: usize, expected: usize, got: usize },
    #[error("row {row}, column `{column}`: `{value}` is not a finite number")]
    Cell { row: usize, column: String, value: String },
    #[error("csv syntax: {0}")]
    Syntax(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Parses `(k, d)` from the header.
fn parse_header(fields: &[String]) -> Option<(usize, usize)> {
    if fields.first().map(String::as_str) != Some("y") {
        return None;
    }
    let rest = &fields[1..];
    let k = rest.iter().take_while(|f| f.starts_with('x')).count();
    let d = rest.len() - k;
    if k == 0 || d == 0 {
        return None;
    }
    let ok = rest[..k].iter().enumerate().all(|(i, f)| *f == format!("x{}", i + 1))
        && rest[k..].iter().enumerate().all(|(i, f)| *f == format!("w{}", i + 1));
    ok.then_some((k, d))
}

pub fn parse_csv<R: Read>(reader: R) -> Result<Dataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        None => return Err(IngestError::Empty),
        Some(r) => r.map_err(|e| IngestError::Syntax(e.to_string()))?.iter().map(str::to_owned).collect(),
    };
    let (k, d) = parse_header(&header).ok_or_else(|| IngestError::Header { found: header.join(",") })?;
    let width = 1 + k + d;
    let (mut y, mut x, mut w) = (Vec::new(), Vec::new(), Vec::new());
    let mut n = 0;
    for (r, record) in records.enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| IngestError::Syntax(e.to_string()))?;
        if record.len() != width {
            return Err(IngestError::RowLength { row, expected: width, got: record.len() });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| IngestError::Cell { row, column: header[c].clone(), value: cell.to_owned() })?;
            match c {
                0 => y.push(v),
                c if c <= k => x.push(v),
                _ => w.push(v),
            }
        }
        n += 1;
    }
    Ok(Dataset::from_parts(n, k, d, y, x, w)?)
}

pub fn ingest_csv(path: &Path) -> Result<Dataset, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(std::io::BufReader::new(file)).map_err(|source| CliError::Data { path: path.to_owned(), source })
}

pub fn write_csv<W: std::io::Write>(data: &Dataset, out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_owned()];
    header.extend((1..=data.k()).map(|i| format!("x{i}")));
    header.extend((1..=data.d()).map(|i| format!("w{i}")));
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let row: Vec<String> = std::iter::once(data.y(i)).chain(data.x(i).iter().copied()).chain(data.w(i).iter().copied()).map(|v| v.to_string()).collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
