//! CSV and epm1 matrix reading and writing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::{Error, Result};

const EPM1_MAGIC: &[u8; 4] = b"EPM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Epm1,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Read a matrix, sniffing the format from the first four bytes.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_matrix_with_header(path).map(|(m, _)| m)
}

/// Like [`read_matrix`], also returning CSV header names when a header row
/// was present.
pub fn read_matrix_with_header(
    path: impl AsRef<Path>,
) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut magic = [0u8; 4];
    let got = read_up_to(&mut file, &mut magic)?;
    if got == 4 && &magic == EPM1_MAGIC {
        let m = read_epm1_body(path, &mut file)?;
        return Ok((m, None));
    }
    drop(file);
    read_csv(path)
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn read_epm1_body(path: &Path, file: &mut File) -> Result<Array2<f64>> {
    let mut dims = [0u8; 16];
    if read_up_to(file, &mut dims)? != 16 {
        return Err(parse_err(path, 0, "truncated epm1 header"));
    }
    let rows = u64::from_le_bytes(dims[..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(dims[8..].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| parse_err(path, 0, "epm1 dimensions overflow"))?;
    let mut data = vec![0.0f64; count];
    let mut buf = vec![0u8; 8 * 4096];
    let mut idx = 0usize;
    while idx < count {
        let want = (count - idx).min(4096) * 8;
        let got = read_up_to(file, &mut buf[..want])?;
        if got % 8 != 0 || got == 0 {
            return Err(parse_err(
                path,
                0,
                format!("truncated epm1 payload at value offset {idx}"),
            ));
        }
        for chunk in buf[..got].chunks_exact(8) {
            data[idx] = f64::from_le_bytes(chunk.try_into().unwrap());
            idx += 1;
        }
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| parse_err(path, 0, format!("bad epm1 shape: {e}")))
}

fn read_csv(path: &Path) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<Vec<String>> = None;
    let mut data: Vec<f64> = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0usize;
    let mut saw_data_or_header = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if let Some(c) = cols {
            if cells.len() != c {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("ragged row: expected {c} cells, found {}", cells.len()),
                ));
            }
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(parse_err(path, line_no, "non-finite entry"));
                }
                cols.get_or_insert(values.len());
                data.extend_from_slice(&values);
                rows += 1;
                saw_data_or_header = true;
            }
            Err(_) => {
                if !saw_data_or_header {
                    // first content line may be a single header row
                    header = Some(cells.iter().map(|s| s.to_string()).collect());
                    cols.get_or_insert(cells.len());
                    saw_data_or_header = true;
                } else {
                    let bad = cells
                        .iter()
                        .find(|c| c.parse::<f64>().is_err())
                        .unwrap_or(&"");
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("non-numeric cell {bad:?}"),
                    ));
                }
            }
        }
    }
    let cols = cols.ok_or_else(|| parse_err(path, 0, "empty matrix file"))?;
    let matrix = Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| parse_err(path, 0, format!("bad shape: {e}")))?;
    Ok((matrix, header))
}

/// Write a matrix as CSV. Floats use the shortest representation that
/// parses back to the identical value.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    write_matrix_csv_with(path, m, &[], None)
}

/// CSV writing with `#` comment lines and an optional header row.
pub fn write_matrix_csv_with(
    path: impl AsRef<Path>,
    m: &Array2<f64>,
    comments: &[String],
    header: Option<&[String]>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    if let Some(names) = header {
        writeln!(w, "{}", names.join(","))?;
    }
    for row in m.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a vector as a one-column CSV.
pub fn write_vector_csv(path: impl AsRef<Path>, v: &Array1<f64>, comment: &str) -> Result<()> {
    let m = v.view().insert_axis(ndarray::Axis(1)).to_owned();
    write_matrix_csv_with(path, &m, &[comment.to_string()], None)
}

/// Write a matrix in the epm1 binary format (bit-exact).
pub fn write_matrix_epm1(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EPM1_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for row in m.rows() {
        for v in row.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
