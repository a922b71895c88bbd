//! CSV input and output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

/// Reads a numeric matrix. A first row that does not parse as numbers is
/// treated as a header and skipped.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("malformed CSV in {}", path.display()))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(values) => rows.push(values),
            Err(_) if line == 0 => continue,
            Err(_) => bail!("{}: non-numeric value on line {}", path.display(), line + 1),
        }
    }
    let Some(first) = rows.first() else {
        bail!("{}: no data rows", path.display());
    };
    let p = first.len();
    if let Some(i) = rows.iter().position(|r| r.len() != p) {
        bail!("{}: row {} has {} fields, expected {}", path.display(), i + 1, rows[i].len(), p);
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        bail!("{}: values must be finite", path.display());
    }
    Ok(DMatrix::from_row_iterator(rows.len(), p, rows.into_iter().flatten()))
}

/// Writes a matrix with a header `x1,…,xp`.
pub fn write_matrix(path: &Path, x: &DMatrix<f64>) -> Result<()> {
    let mut out = create(path)?;
    let header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes zero-based labels as one-based integers under a `label` header.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "label")?;
    for l in labels {
        writeln!(out, "{}", l + 1)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one-based labels written by [`write_labels`], returning them zero-based.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let x = read_matrix(path)?;
    if x.ncols() != 1 {
        bail!("{}: expected a single label column", path.display());
    }
    x.iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize - 1)
            } else {
                bail!("{}: labels must be positive integers, got {v}", path.display())
            }
        })
        .collect()
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}
