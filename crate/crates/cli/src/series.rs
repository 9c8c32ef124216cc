//! Versioned time-series CSV.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use cuspflow::diagnostics::TimeSeriesRecord;

pub const VERSION_LINE: &str = "# cuspflow-timeseries v1";

const SCALARS: [&str; 17] = [
    "t",
    "dt",
    "newton_iters",
    "area",
    "rbar",
    "rho",
    "sup_r_minus_rho",
    "inf_r",
    "sup_r",
    "sup_h",
    "sup_grad_f",
    "gauss_bonnet",
    "res_area",
    "res_curvature",
    "res_trace",
    "res_h",
    "shi",
];
const PER_END: [&str; 3] = ["lambda", "end_curvature", "decay_norm"];

pub fn columns(ends: usize) -> Vec<String> {
    let mut c: Vec<String> = SCALARS.iter().map(|s| s.to_string()).collect();
    for j in 0..ends {
        c.extend(PER_END.iter().map(|p| format!("{p}_{j}")));
    }
    c
}

fn cell(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

fn row(r: &TimeSeriesRecord) -> Vec<String> {
    let mut out = vec![
        cell(r.t),
        cell(r.dt),
        r.newton_iters.to_string(),
        cell(r.area),
        cell(r.rbar),
        cell(r.rho),
        cell(r.sup_r_minus_rho),
        cell(r.inf_r),
        cell(r.sup_r),
        cell(r.sup_h),
        cell(r.sup_grad_f),
        cell(r.gauss_bonnet),
        opt(r.res_area),
        opt(r.res_curvature),
        cell(r.res_trace),
        opt(r.res_h),
        cell(r.shi),
    ];
    for j in 0..r.lambda.len() {
        out.push(cell(r.lambda[j]));
        out.push(cell(r.end_curvature[j]));
        out.push(cell(r.decay_norm[j]));
    }
    out
}

/// Every `cadence`-th record and the last one.
pub fn thin(records: &[TimeSeriesRecord], cadence: usize) -> Vec<&TimeSeriesRecord> {
    let n = records.len();
    records.iter().enumerate().filter(|(i, _)| i % cadence == 0 || i + 1 == n).map(|(_, r)| r).collect()
}

pub fn write(path: &Path, ends: usize, records: &[&TimeSeriesRecord]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(VERSION_LINE.as_bytes());
    buf.extend_from_slice(
        b"\n# columns are fixed for this version; per-end triples repeat for each end; empty cells are undefined differences\n",
    );
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns(ends))?;
        for r in records {
            w.write_record(row(r))?;
        }
        w.flush()?;
    }
    std::fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}

/// Parsed CSV: column names and rows, `None` for empty cells.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.column(name)?.into_iter().rev().flatten().next()
    }

    pub fn ends(&self) -> usize {
        self.columns.iter().filter(|c| c.starts_with("lambda_")).count()
    }
}

pub fn read(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)?;
    ensure!(text.lines().next() == Some(VERSION_LINE), "missing or unknown version line");
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let ends = columns.iter().filter(|c| c.starts_with("lambda_")).count();
    if columns != self::columns(ends) {
        bail!("unexpected column layout");
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<Option<f64>>> = rec
            .iter()
            .map(|c| if c.is_empty() { Ok(None) } else { Ok(Some(c.parse::<f64>()?)) })
            .collect();
        rows.push(parsed.with_context(|| format!("row {}", i + 1))?);
    }
    Ok(Table { columns, rows })
}
