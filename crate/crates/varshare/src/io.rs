//! File formats: CSV datasets, a compact binary container for datasets and
//! matrices, and JSON for generating parameters.
//!
//! * CSV datasets carry a header `y,x1,...,xp`; every following row holds the
//!   response and the `p` covariates of one observation. Parse failures report
//!   the offending line number.
//! * The binary container starts with the magic bytes `VSH1`, followed by a
//!   `u64` kind tag (`0` = dataset, `1` = matrix), `u64` row and column
//!   counts, and the payload as little-endian `f64`. Datasets store the
//!   response first, then the design matrix; matrices are stored
//!   column-major. Round trips are bitwise exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GroundTruth};

const MAGIC: [u8; 4] = *b"VSH1";
const KIND_DATASET: u64 = 0;
const KIND_MATRIX: u64 = 1;

// ---------------------------------------------------------------------------
// CSV datasets
// ---------------------------------------------------------------------------

/// Writes a dataset as CSV with header `y,x1,...,xp`.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header = String::from("y");
    for j in 1..=data.p() {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..data.n() {
        let mut line = format!("{}", data.y()[i]);
        for j in 0..data.p() {
            line.push_str(&format!(",{}", data.x()[(i, j)]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset from CSV, validating the `y,x1,...,xp` header. Errors
/// mention the 1-based line number of the offending row.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let headers = reader
        .headers()
        .map_err(|e| Error::format(format!("failed to read CSV header: {e}")))?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("y") {
        return Err(Error::format(
            "CSV header must start with 'y' (expected y,x1,...,xp)".to_string(),
        ));
    }
    let p = headers.len() - 1;
    if p == 0 {
        return Err(Error::format(
            "CSV header must list at least one covariate column x1".to_string(),
        ));
    }
    for j in 1..=p {
        let expect = format!("x{j}");
        if headers.get(j) != Some(expect.as_str()) {
            return Err(Error::format(format!(
                "CSV header column {} must be '{}', got '{}'",
                j + 1,
                expect,
                headers.get(j).unwrap_or("")
            )));
        }
    }

    let mut ys = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(format!("corrupt CSV record: {e}")))?;
        let line = record
            .position()
            .map(|pos| pos.line())
            .unwrap_or(ys.len() as u64 + 2);
        if record.len() != p + 1 {
            return Err(Error::format(format!(
                "line {}: expected {} fields, got {}",
                line,
                p + 1,
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(p + 1);
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(format!(
                    "line {}: field '{}' (column '{}') is not a number",
                    line,
                    field,
                    headers.get(j).unwrap_or("?")
                ))
            })?;
            row.push(v);
        }
        ys.push(row[0]);
        xs.extend_from_slice(&row[1..]);
    }
    if ys.is_empty() {
        return Err(Error::format("CSV contains a header but no data rows".to_string()));
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, p, &xs);
    Dataset::new(x, DVector::from_vec(ys))
}

// ---------------------------------------------------------------------------
// Binary container
// ---------------------------------------------------------------------------

fn write_header(w: &mut impl Write, kind: u64, rows: u64, cols: u64) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("binary container truncated in header".to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64_block(r: &mut impl Read, len: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format!("binary container truncated in {what}")))?;
    let mut out = Vec::with_capacity(len);
    for chunk in bytes.chunks_exact(8) {
        out.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(out)
}

fn write_f64_block(w: &mut impl Write, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn check_magic_and_kind(r: &mut impl Read, expected_kind: u64) -> Result<(u64, u64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("file too short for binary container magic".to_string()))?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic bytes {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let kind = read_u64(r)?;
    if kind != expected_kind {
        return Err(Error::format(format!(
            "container kind {} does not match expected kind {} ({})",
            kind,
            expected_kind,
            if expected_kind == KIND_DATASET {
                "dataset"
            } else {
                "matrix"
            }
        )));
    }
    let rows = read_u64(r)?;
    let cols = read_u64(r)?;
    Ok((rows, cols))
}

fn ensure_eof(r: &mut impl Read) -> Result<()> {
    let mut rest = [0u8; 1];
    match r.read(&mut rest)? {
        0 => Ok(()),
        _ => Err(Error::format(
            "binary container has trailing bytes after payload".to_string(),
        )),
    }
}

/// Writes a dataset to the binary container format.
pub fn write_dataset_bin(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_DATASET, data.n() as u64, data.p() as u64)?;
    write_f64_block(&mut w, data.y().iter().copied())?;
    // Column-major design matrix.
    write_f64_block(&mut w, data.x().iter().copied())?;
    w.flush()?;
    Ok(())
}

/// Reads a dataset from the binary container format.
pub fn read_dataset_bin(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let (rows, cols) = check_magic_and_kind(&mut r, KIND_DATASET)?;
    let (n, p) = (rows as usize, cols as usize);
    if n == 0 || p == 0 {
        return Err(Error::format(format!("degenerate dataset dims {n}x{p}")));
    }
    let y = read_f64_block(&mut r, n, "response block")?;
    let x = read_f64_block(&mut r, n * p, "design block")?;
    ensure_eof(&mut r)?;
    Dataset::new(
        DMatrix::from_column_slice(n, p, &x),
        DVector::from_vec(y),
    )
}

/// Writes a dense matrix (column-major payload) to the binary container.
pub fn write_matrix_bin(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_MATRIX, m.nrows() as u64, m.ncols() as u64)?;
    write_f64_block(&mut w, m.iter().copied())?;
    w.flush()?;
    Ok(())
}

/// Reads a dense matrix from the binary container.
pub fn read_matrix_bin(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let (rows, cols) = check_magic_and_kind(&mut r, KIND_MATRIX)?;
    let (nr, nc) = (rows as usize, cols as usize);
    if nr == 0 || nc == 0 {
        return Err(Error::format(format!("degenerate matrix dims {nr}x{nc}")));
    }
    let data = read_f64_block(&mut r, nr * nc, "matrix block")?;
    ensure_eof(&mut r)?;
    Ok(DMatrix::from_column_slice(nr, nc, &data))
}

/// Reads a dataset, choosing CSV for a `.csv` extension and the binary
/// container otherwise.
pub fn read_dataset_auto(path: &Path) -> Result<Dataset> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        read_dataset_csv(path)
    } else {
        read_dataset_bin(path)
    }
}

/// Writes a dataset, choosing CSV for a `.csv` extension and the binary
/// container otherwise.
pub fn write_dataset_auto(path: &Path, data: &Dataset) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        write_dataset_csv(path, data)
    } else {
        write_dataset_bin(path, data)
    }
}

// ---------------------------------------------------------------------------
// Ground-truth JSON
// ---------------------------------------------------------------------------

/// JSON schema for generating parameters: coefficients, noise level, and the
/// covariance stored as a list of rows.
#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthJson {
    beta: Vec<f64>,
    sigma: f64,
    sigma_mat: Vec<Vec<f64>>,
    sparsity: usize,
}

/// Writes generating parameters as pretty-printed JSON.
pub fn write_ground_truth_json(path: &Path, gt: &GroundTruth) -> Result<()> {
    let p = gt.p();
    let doc = GroundTruthJson {
        beta: gt.beta().iter().copied().collect(),
        sigma: gt.sigma(),
        sigma_mat: (0..p)
            .map(|i| (0..p).map(|j| gt.sigma_mat()[(i, j)]).collect())
            .collect(),
        sparsity: gt.sparsity(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)
        .map_err(|e| Error::format(format!("failed to serialize ground truth: {e}")))?;
    w.flush()?;
    Ok(())
}

/// Reads generating parameters from JSON, re-validating all invariants.
pub fn read_ground_truth_json(path: &Path) -> Result<GroundTruth> {
    let r = BufReader::new(File::open(path)?);
    let doc: GroundTruthJson = serde_json::from_reader(r)
        .map_err(|e| Error::format(format!("failed to parse ground truth JSON: {e}")))?;
    let p = doc.beta.len();
    if doc.sigma_mat.len() != p || doc.sigma_mat.iter().any(|row| row.len() != p) {
        return Err(Error::format(format!(
            "sigma_mat must be a {p}x{p} list of rows"
        )));
    }
    let mut cov = DMatrix::zeros(p, p);
    for (i, row) in doc.sigma_mat.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            cov[(i, j)] = *v;
        }
    }
    let gt = GroundTruth::new(DVector::from_vec(doc.beta), doc.sigma, cov)?;
    if gt.sparsity() != doc.sparsity {
        return Err(Error::format(format!(
            "stored sparsity {} disagrees with recomputed {}",
            doc.sparsity,
            gt.sparsity()
        )));
    }
    Ok(gt)
}
