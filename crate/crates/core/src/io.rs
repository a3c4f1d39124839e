//! CSV exchange formats: states (`node,value`), observations
//! (`sensor_id,value`, optionally prefixed by `observation_id`) and dense
//! matrices (one row per line, header `c0,c1,…`).
//!
//! Readers report the 1-based line of the offending record.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{PbdwError, Result};
use crate::sensing::{MeasurementSystem, Observation};

fn csv_error(e: csv::Error) -> PbdwError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PbdwError::Io(io),
        kind => PbdwError::Parse { line, message: format!("{kind:?}") },
    }
}

fn write_err(e: csv::Error) -> PbdwError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PbdwError::Io(io),
        kind => PbdwError::Numerical(format!("csv writer: {kind:?}")),
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
    let raw = rec.get(i).ok_or_else(|| PbdwError::Parse { line, message: format!("missing field {name}") })?;
    raw.trim().parse().map_err(|_| PbdwError::Parse { line, message: format!("invalid {name}: {raw:?}") })
}

fn expect_header(rdr: &mut csv::Reader<impl Read>, options: &[&[&str]]) -> Result<usize> {
    let header = rdr.headers().map_err(csv_error)?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    options.iter().position(|o| *o == names.as_slice()).ok_or_else(|| PbdwError::Parse {
        line: 1,
        message: format!("unexpected header {names:?}, expected one of {options:?}"),
    })
}

pub fn write_state(out: impl Write, u: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "value"]).map_err(write_err)?;
    for (i, v) in u.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:e}")]).map_err(write_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a state; nodes must be listed in order `0..dim`.
pub fn read_state(input: impl Read, dim: usize) -> Result<DVector<f64>> {
    let mut rdr = csv::Reader::from_reader(input);
    expect_header(&mut rdr, &[&["node", "value"]])?;
    let mut values = Vec::with_capacity(dim);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let node: usize = parse_field(&rec, 0, "node")?;
        if node != values.len() {
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            return Err(PbdwError::Parse { line, message: format!("expected node {}, found {node}", values.len()) });
        }
        values.push(parse_field(&rec, 1, "value")?);
    }
    if values.len() != dim {
        return Err(PbdwError::DimensionMismatch { context: "state file", expected: dim, found: values.len() });
    }
    Ok(DVector::from_vec(values))
}

/// Writes raw sensor values of several observations.
pub fn write_observations(out: impl Write, observations: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let with_id = observations.len() != 1;
    if with_id {
        w.write_record(["observation_id", "sensor_id", "value"]).map_err(write_err)?;
    } else {
        w.write_record(["sensor_id", "value"]).map_err(write_err)?;
    }
    for (k, raw) in observations.iter().enumerate() {
        for (i, v) in raw.iter().enumerate() {
            let mut rec = Vec::with_capacity(3);
            if with_id {
                rec.push(k.to_string());
            }
            rec.push(i.to_string());
            rec.push(format!("{v:e}"));
            w.write_record(&rec).map_err(write_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads raw sensor values grouped by observation. Sensor ids of every
/// observation must run `0..m`.
pub fn read_raw_observations(input: impl Read, m: usize) -> Result<Vec<DVector<f64>>> {
    let mut rdr = csv::Reader::from_reader(input);
    let with_id = expect_header(&mut rdr, &[&["sensor_id", "value"], &["observation_id", "sensor_id", "value"]])? == 1;
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let off = usize::from(with_id);
        let obs: usize = if with_id { parse_field(&rec, 0, "observation_id")? } else { 0 };
        let sensor: usize = parse_field(&rec, off, "sensor_id")?;
        let value: f64 = parse_field(&rec, off + 1, "value")?;
        if obs == groups.len() {
            groups.push(Vec::with_capacity(m));
        } else if obs + 1 != groups.len() {
            return Err(PbdwError::Parse { line, message: format!("observation ids must be consecutive, found {obs}") });
        }
        let g = groups.last_mut().expect("pushed above");
        if sensor != g.len() {
            return Err(PbdwError::Parse { line, message: format!("expected sensor {}, found {sensor}", g.len()) });
        }
        g.push(value);
    }
    groups
        .into_iter()
        .map(|g| {
            if g.len() == m {
                Ok(DVector::from_vec(g))
            } else {
                Err(PbdwError::DimensionMismatch { context: "observation file", expected: m, found: g.len() })
            }
        })
        .collect()
}

/// Reads and validates observations against a measurement system.
pub fn ingest_observations(input: impl Read, system: &MeasurementSystem, noise_level: f64) -> Result<Vec<Observation>> {
    read_raw_observations(input, system.m())?
        .into_iter()
        .map(|raw| system.observation_from_raw(raw, noise_level))
        .collect()
}

pub fn write_matrix(out: impl Write, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..m.ncols()).map(|j| format!("c{j}"))).map_err(write_err)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(write_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(input: impl Read) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_reader(input);
    let ncols = rdr.headers().map_err(csv_error)?.len();
    let mut data = Vec::new();
    let mut nrows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        for j in 0..ncols {
            data.push(parse_field::<f64>(&rec, j, "matrix entry")?);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}
