//! CSV outputs: per-run traces and σ-sweep tables.

use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 7] =
    ["iteration", "elapsed_ms", "elbo_estimate", "var_total", "var_mean_block", "var_scale_block", "gamma"];

pub const SWEEP_HEADER: [&str; 5] = ["sigma", "estimator", "var_total", "var_mean_block", "var_scale_block"];

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub elapsed_ms: u64,
    pub elbo_estimate: f64,
    pub var_total: f64,
    pub var_mean_block: f64,
    pub var_scale_block: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration {
                return Err(Error::InvalidArgument(format!(
                    "trace iterations must increase ({} after {})",
                    row.iteration, last.iteration
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_writer<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACE_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.iteration.to_string(),
                r.elapsed_ms.to_string(),
                fmt(r.elbo_estimate),
                fmt(r.var_total),
                fmt(r.var_mean_block),
                fmt(r.var_scale_block),
                fmt(r.gamma),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        check_header(rdr.headers()?, &TRACE_HEADER)?;
        let mut trace = RunTrace::default();
        for rec in rdr.records() {
            let rec = rec?;
            trace.push(TraceRow {
                iteration: field(&rec, 0)?,
                elapsed_ms: field(&rec, 1)?,
                elbo_estimate: field(&rec, 2)?,
                var_total: field(&rec, 3)?,
                var_mean_block: field(&rec, 4)?,
                var_scale_block: field(&rec, 5)?,
                gamma: field(&rec, 6)?,
            })?;
        }
        Ok(trace)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub estimator: String,
    pub var_total: f64,
    pub var_mean_block: f64,
    pub var_scale_block: f64,
}

pub fn write_sweep(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(SWEEP_HEADER)?;
    for r in rows {
        out.write_record([
            fmt(r.sigma),
            r.estimator.clone(),
            fmt(r.var_total),
            fmt(r.var_mean_block),
            fmt(r.var_scale_block),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(rdr.headers()?, &SWEEP_HEADER)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SweepRow {
                sigma: field(&rec, 0)?,
                estimator: rec.get(1).unwrap_or_default().to_string(),
                var_total: field(&rec, 2)?,
                var_mean_block: field(&rec, 3)?,
                var_scale_block: field(&rec, 4)?,
            })
        })
        .collect()
}

/// Shortest representation that parses back to the same value.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Data(format!("unexpected header {:?}, expected {expected:?}", found)));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Data(format!("missing column {i}")))?;
    raw.parse().map_err(|_| Error::Data(format!("cannot parse {raw:?} in column {i}")))
}
