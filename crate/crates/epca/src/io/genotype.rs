//! Genotype matrix ingestion: minor-allele counts in {0, 1, 2} with
//! missing entries, mean imputation, and removal of zero-variance markers.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;

use crate::covariance::DataBatch;
use crate::expfam::ExponentialFamily;
use crate::{Error, Result};

/// An ingested genotype matrix: no missing entries remain (mean-imputed)
/// and no zero-variance columns remain.
#[derive(Debug, Clone)]
pub struct GenotypeBatch {
    pub values: Array2<f64>,
    /// Marker names from the header row, aligned with retained columns.
    pub snp_ids: Option<Vec<String>>,
    /// Original indices of columns removed for zero variance.
    pub dropped_columns: Vec<usize>,
    /// Number of imputed cells.
    pub imputed: usize,
}

impl GenotypeBatch {
    /// View the genotypes as a binomial(2) data batch.
    pub fn to_batch(&self) -> Result<DataBatch> {
        DataBatch::new(self.values.clone(), ExponentialFamily::Binomial(2))
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA" || cell == "-1"
}

/// Read a genotype CSV (entries 0/1/2, missing as `NA`, empty, or `-1`),
/// impute missing entries with the column mean over observed samples, and
/// drop columns whose sample variance is at or below `drop_threshold`
/// (monomorphic markers included). A column with no observed entries at
/// all is an error naming the column.
pub fn ingest_genotypes(
    path: impl AsRef<Path>,
    drop_threshold: f64,
) -> Result<GenotypeBatch> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?);

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new(); // NaN marks missing
    let mut cols: Option<usize> = None;
    let mut saw_content = false;

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
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    message: format!("ragged row: expected {c} cells, found {}", cells.len()),
                });
            }
        }
        let mut parsed = Vec::with_capacity(cells.len());
        let mut ok = true;
        for cell in &cells {
            if is_missing(cell) {
                parsed.push(f64::NAN);
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v == 0.0 || v == 1.0 || v == 2.0 => parsed.push(v),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            cols.get_or_insert(parsed.len());
            rows.push(parsed);
            saw_content = true;
        } else if !saw_content {
            header = Some(cells.iter().map(|s| s.to_string()).collect());
            cols.get_or_insert(cells.len());
            saw_content = true;
        } else {
            let bad = cells
                .iter()
                .find(|c| !is_missing(c) && c.parse::<f64>().map(|v| v != 0.0 && v != 1.0 && v != 2.0).unwrap_or(true))
                .unwrap_or(&"");
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                message: format!("genotype entries must be 0, 1, 2, or NA; found {bad:?}"),
            });
        }
    }

    let p = cols.ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: "empty genotype file".into(),
    })?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: "no genotype rows".into(),
        });
    }

    // column means over observed entries, then impute
    let mut imputed = 0usize;
    let mut means = vec![0.0f64; p];
    for j in 0..p {
        let mut sum = 0.0;
        let mut count = 0usize;
        for row in &rows {
            if !row[j].is_nan() {
                sum += row[j];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::AllMissing { column: j });
        }
        means[j] = sum / count as f64;
    }
    for row in rows.iter_mut() {
        for j in 0..p {
            if row[j].is_nan() {
                row[j] = means[j];
                imputed += 1;
            }
        }
    }

    // drop zero-variance columns (covers monomorphic markers p̂ ∈ {0,1})
    let mut keep = Vec::with_capacity(p);
    let mut dropped = Vec::new();
    for j in 0..p {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n as f64;
        if var <= drop_threshold {
            dropped.push(j);
        } else {
            keep.push(j);
        }
    }

    let mut values = Array2::<f64>::zeros((n, keep.len()));
    for (i, row) in rows.iter().enumerate() {
        for (jj, &j) in keep.iter().enumerate() {
            values[[i, jj]] = row[j];
        }
    }
    let snp_ids = header.map(|h| keep.iter().map(|&j| h[j].clone()).collect());

    Ok(GenotypeBatch {
        values,
        snp_ids,
        dropped_columns: dropped,
        imputed,
    })
}
