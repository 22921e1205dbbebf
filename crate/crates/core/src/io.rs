//! CSV ingestion and output. Data files have a header row, a `y` column
//! of 0/1 outcomes, and every other column is a numeric covariate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Name of the outcome column.
pub const OUTCOME: &str = "y";

/// Seventeen significant digits: parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(source: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.display().to_string(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| parse_err(path, 0, format!("cannot open: {e}")))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

fn parse_f64(path: &Path, line: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| {
        parse_err(
            path,
            line,
            format!("column '{column}': '{raw}' is not a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_err(
            path,
            line,
            format!("column '{column}': value '{raw}' is not finite"),
        ));
    }
    Ok(v)
}

/// Read a data file. `normalized` names the covariate whose coefficient is
/// fixed to one; by default the last covariate column.
pub fn read_dataset(path: &Path, normalized: Option<&str>) -> Result<Dataset> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    for (j, name) in header.iter().enumerate() {
        if name.is_empty() {
            return Err(parse_err(
                path,
                1,
                format!("column {} has an empty name", j + 1),
            ));
        }
        if header[..j].contains(name) {
            return Err(parse_err(path, 1, format!("duplicate column '{name}'")));
        }
    }
    let y_col = header
        .iter()
        .position(|h| h == OUTCOME)
        .ok_or_else(|| parse_err(path, 1, format!("missing required column '{OUTCOME}'")))?;
    let names: Vec<String> = header.iter().filter(|h| *h != OUTCOME).cloned().collect();
    let normalized_idx = match normalized {
        Some(name) => names.iter().position(|h| h == name).ok_or_else(|| {
            Error::Validation(format!(
                "normalized column '{name}' is not a covariate of {} (covariates: {})",
                path.display(),
                names.join(", ")
            ))
        })?,
        None => names.len().saturating_sub(1),
    };

    let mut rows = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(names.len());
        for (j, raw) in rec.iter().enumerate() {
            if j == y_col {
                let v = parse_f64(path, line, OUTCOME, raw)?;
                if v != 0.0 && v != 1.0 {
                    return Err(parse_err(
                        path,
                        line,
                        format!("column '{OUTCOME}' must be 0 or 1, got '{raw}'"),
                    ));
                }
                y.push(v == 1.0);
            } else {
                row.push(parse_f64(path, line, &header[j], raw)?);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Dataset::new(rows, y, names, normalized_idx)
}

/// Write a dataset in the ingestion format, columns in input order.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = create(path)?;
    let names = data.original_column_names();
    writeln!(out, "{OUTCOME},{}", names.join(","))?;
    for (x, &y) in data.rows().iter().zip(data.y()) {
        let vals: Vec<String> = data.to_original(x).into_iter().map(fmt_num).collect();
        writeln!(out, "{},{}", u8::from(y), vals.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path)
        .map_err(|e| Error::Validation(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

/// Prediction points from a CSV whose header lists the data's covariates
/// in any order. Points are returned in the data's input column order.
pub fn read_points(path: &Path, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let names = data.original_column_names();
    let mut position = Vec::with_capacity(names.len());
    for name in &names {
        position.push(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse_err(path, 1, format!("missing covariate column '{name}'")))?,
        );
    }
    if let Some(extra) = header.iter().find(|h| !names.contains(h)) {
        return Err(parse_err(
            path,
            1,
            format!("'{extra}' is not a covariate of the data"),
        ));
    }
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let mut p = Vec::with_capacity(names.len());
        for (name, &j) in names.iter().zip(&position) {
            p.push(parse_f64(path, line, name, &rec[j])?);
        }
        points.push(p);
    }
    Ok(points)
}

/// Points written as `a,b;c,d` (input column order).
pub fn parse_inline_points(text: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut points = Vec::new();
    for (k, chunk) in text.split(';').enumerate() {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let p = chunk
            .split(',')
            .map(|v| {
                let v = v.trim();
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "prediction point {}: '{v}' is not a number",
                            k + 1
                        ))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if p.len() != dim {
            return Err(Error::Validation(format!(
                "prediction point {} has {} coordinates, data has {dim} covariates",
                k + 1,
                p.len()
            )));
        }
        points.push(p);
    }
    Ok(points)
}
