//! CSV encodings of run logs and disturbance samples. Numbers are written
//! in shortest round-trip form, so reading a file back reproduces the
//! values exactly.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{RunLog, SimError};

fn io_err(e: impl std::fmt::Display) -> SimError {
    SimError::Io(e.to_string())
}

/// One parsed row of a run-log CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Option<Vec<f64>>,
    pub eta: Vec<f64>,
    pub flag: Option<bool>,
    pub cost: f64,
    pub status: String,
}

impl LogRow {
    pub fn from_log(log: &RunLog) -> Vec<LogRow> {
        log.steps
            .iter()
            .map(|s| LogRow {
                k: s.k,
                x: s.x.iter().copied().collect(),
                u: s.u.iter().copied().collect(),
                w: s.w.as_ref().map(|w| w.iter().copied().collect()),
                eta: s.eta.iter().copied().collect(),
                flag: s.flag,
                cost: s.cost,
                status: "Optimal".into(),
            })
            .collect()
    }
}

fn header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

/// Columns `k, x1.., u1.., w1.., eta1.., flag, J, status`. The final step
/// has empty disturbance and flag fields.
pub fn write_log_csv<W: Write>(log: &RunLog, out: W) -> Result<(), SimError> {
    let rows = LogRow::from_log(log);
    let Some(first) = rows.first() else { return Ok(()) };
    let (n, m, p) = (first.x.len(), first.u.len(), first.eta.len());
    let mut wtr = csv::Writer::from_writer(out);
    let mut head = vec!["k".to_string()];
    head.extend(header("x", n));
    head.extend(header("u", m));
    head.extend(header("w", n));
    head.extend(header("eta", p));
    head.extend(["flag".to_string(), "J".to_string(), "status".to_string()]);
    wtr.write_record(&head).map_err(io_err)?;
    for r in rows {
        let mut rec = vec![r.k.to_string()];
        rec.extend(r.x.iter().map(f64::to_string));
        rec.extend(r.u.iter().map(f64::to_string));
        match &r.w {
            Some(w) => rec.extend(w.iter().map(f64::to_string)),
            None => rec.extend(std::iter::repeat_n(String::new(), n)),
        }
        rec.extend(r.eta.iter().map(f64::to_string));
        rec.push(r.flag.map_or(String::new(), |f| (f as u8).to_string()));
        rec.push(r.cost.to_string());
        rec.push(r.status.clone());
        wtr.write_record(&rec).map_err(io_err)?;
    }
    wtr.flush().map_err(io_err)
}

pub fn read_log_csv<R: Read>(input: R) -> Result<Vec<LogRow>, SimError> {
    let mut rdr = csv::Reader::from_reader(input);
    let head = rdr.headers().map_err(io_err)?.clone();
    let count = |prefix: &str| {
        head.iter()
            .filter(|h| h.strip_prefix(prefix).is_some_and(|r| !r.is_empty() && r.chars().all(|c| c.is_ascii_digit())))
            .count()
    };
    let (n, m, p) = (count("x"), count("u"), count("eta"));
    let num = |s: &str| s.parse::<f64>().map_err(io_err);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(io_err)?;
        let f: Vec<&str> = rec.iter().collect();
        if f.len() != 1 + 2 * n + m + p + 3 {
            return Err(SimError::Io(format!("row has {} fields", f.len())));
        }
        let vec_at = |start: usize, len: usize| -> Result<Vec<f64>, SimError> { f[start..start + len].iter().map(|s| num(s)).collect() };
        let mut at = 1;
        let x = vec_at(at, n)?;
        at += n;
        let u = vec_at(at, m)?;
        at += m;
        let w = if f[at].is_empty() { None } else { Some(vec_at(at, n)?) };
        at += n;
        let eta = vec_at(at, p)?;
        at += p;
        let flag = match f[at] {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            other => return Err(SimError::Io(format!("bad flag {other:?}"))),
        };
        out.push(LogRow {
            k: f[0].parse().map_err(io_err)?,
            x,
            u,
            w,
            eta,
            flag,
            cost: num(f[at + 1])?,
            status: f[at + 2].to_string(),
        });
    }
    Ok(out)
}

/// One sample per line, no header.
pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<DVector<f64>>, SimError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut out: Vec<DVector<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| SimError::Io(format!("line {}: {e}", line + 1))))
            .collect::<Result<_, _>>()?;
        if let Some(first) = out.first() {
            if first.len() != vals.len() {
                return Err(SimError::Io(format!("line {}: expected {} columns", line + 1, first.len())));
            }
        }
        out.push(DVector::from_vec(vals));
    }
    Ok(out)
}

pub fn write_samples_csv<W: Write>(samples: &[DVector<f64>], out: W) -> Result<(), SimError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for s in samples {
        wtr.write_record(s.iter().map(f64::to_string)).map_err(io_err)?;
    }
    wtr.flush().map_err(io_err)
}
