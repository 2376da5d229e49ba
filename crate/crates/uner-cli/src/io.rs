//! CSV ingestion and emission.
//!
//! Unit data schema: `area_id,y,x1,...,xq`; rows may arrive grouped or
//! interleaved, areas keep first-appearance order. Population schema:
//! `area_id,N,xbar1,...,xbarq`. All numeric output uses Rust's shortest
//! round-trip `f64` formatting, which is locale independent and parses
//! back to the identical value.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use uner::prediction::AreaPopulation;
use uner::{AreaData, FinitePopulationSpec, UnitDataset};

use crate::failure::{CliResult, Failure};

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    line: u64,
    column: &str,
) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| {
        Failure::Io(format!("line {line}, column `{column}`: cannot parse `{raw}`: {e}"))
    })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Read grouped unit-level data. With `intercept` a constant-one column is
/// prepended to the covariates.
pub fn read_unit_csv(path: &Path, intercept: bool) -> CliResult<UnitDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 || &headers[0] != "area_id" || &headers[1] != "y" {
        return Err(Failure::Io(format!(
            "{}: expected header `area_id,y,x1,...`, got `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let q_file = headers.len() - 2;
    let covariate_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut ys: Vec<Vec<f64>> = Vec::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();

    for record in rdr.records() {
        let record = record.map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        if record.len() != headers.len() {
            return Err(Failure::Io(format!(
                "line {line}: expected {} fields, got {}",
                headers.len(),
                record.len()
            )));
        }
        let area_id = record[0].to_string();
        if area_id.is_empty() {
            return Err(Failure::Io(format!("line {line}, column `area_id`: empty")));
        }
        let y: f64 = parse_field(&record[1], line, "y")?;
        let slot = *index.entry(area_id.clone()).or_insert_with(|| {
            order.push(area_id.clone());
            ys.push(Vec::new());
            xs.push(Vec::new());
            order.len() - 1
        });
        ys[slot].push(y);
        if intercept {
            xs[slot].push(1.0);
        }
        for (k, name) in covariate_names.iter().enumerate() {
            let v: f64 = parse_field(&record[2 + k], line, name)?;
            xs[slot].push(v);
        }
    }

    if order.is_empty() {
        return Err(Failure::Io(format!("{}: no data rows", path.display())));
    }
    let q = q_file + usize::from(intercept);
    let mut areas = Vec::with_capacity(order.len());
    for (slot, area_id) in order.into_iter().enumerate() {
        let n_i = ys[slot].len();
        let x = DMatrix::from_row_slice(n_i, q, &xs[slot]);
        areas.push(AreaData::new(area_id, std::mem::take(&mut ys[slot]), x)?);
    }
    Ok(UnitDataset::new(areas)?)
}

/// Read the per-area population sizes and covariate means.
pub fn read_population_csv(path: &Path, intercept: bool) -> CliResult<FinitePopulationSpec> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 || &headers[0] != "area_id" || &headers[1] != "N" {
        return Err(Failure::Io(format!(
            "{}: expected header `area_id,N,xbar1,...`, got `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut areas = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        if record.len() != headers.len() {
            return Err(Failure::Io(format!(
                "line {line}: expected {} fields, got {}",
                headers.len(),
                record.len()
            )));
        }
        let area_id = record[0].to_string();
        let n: usize = parse_field(&record[1], line, "N")?;
        let mut xbar = Vec::with_capacity(names.len() + usize::from(intercept));
        if intercept {
            xbar.push(1.0);
        }
        for (k, name) in names.iter().enumerate() {
            xbar.push(parse_field::<f64>(&record[2 + k], line, name)?);
        }
        areas.push(AreaPopulation {
            area_id,
            population_size: n,
            x_population_mean: DVector::from_vec(xbar),
        });
    }
    if areas.is_empty() {
        return Err(Failure::Io(format!("{}: no data rows", path.display())));
    }
    Ok(FinitePopulationSpec::new(areas))
}

/// Shortest round-trip decimal formatting for all numeric output.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write one CSV file (header plus string rows).
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write a generated dataset in the unit-data schema (without the
/// intercept column; pass `--intercept` when reading it back).
pub fn write_unit_csv(path: &Path, data: &UnitDataset, skip_intercept: bool) -> CliResult<()> {
    let q = data.q();
    let first_col = usize::from(skip_intercept);
    let mut header: Vec<String> = vec!["area_id".into(), "y".into()];
    for k in first_col..q {
        header.push(format!("x{}", k - first_col + 1));
    }
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    wtr.write_record(&header)?;
    for area in data.areas() {
        for j in 0..area.n_units() {
            let mut row: Vec<String> = vec![area.area_id().to_string(), fmt_f64(area.y()[j])];
            for k in first_col..q {
                row.push(fmt_f64(area.x()[(j, k)]));
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
