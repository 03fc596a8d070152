//! Supervised samples `(features, t_star)` and their CSV form.
//!
//! CSV layout: a header `feature_0,...,feature_{d-1},t_star` followed by one
//! row per sample.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DatasetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsgSample {
    pub features: Vec<f64>,
    pub t_star: f64,
}

impl TsgSample {
    pub fn new(features: Vec<f64>, t_star: f64) -> Self {
        Self { features, t_star }
    }
}

pub fn write_csv<W: Write>(samples: &[TsgSample], writer: W) -> Result<(), DatasetError> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..dim).map(|i| format!("feature_{i}")).collect();
    header.push("t_star".into());
    w.write_record(&header)?;
    for (row, s) in samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(DatasetError::Format(format!(
                "row {row} has {} features, expected {dim}",
                s.features.len()
            )));
        }
        let mut rec: Vec<String> = s.features.iter().map(f64::to_string).collect();
        rec.push(s.t_star.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TsgSample>, DatasetError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let dim = header.len().checked_sub(1).ok_or_else(|| DatasetError::Format("empty header".into()))?;
    for (i, name) in header.iter().enumerate() {
        let expected = if i == dim {
            "t_star".to_string()
        } else {
            format!("feature_{i}")
        };
        if name != expected {
            return Err(DatasetError::Format(format!(
                "column {i} is `{name}`, expected `{expected}`"
            )));
        }
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .enumerate()
            .map(|(col, v)| {
                v.trim().parse::<f64>().map_err(|e| {
                    DatasetError::Format(format!("row {row}, column {col}: `{v}`: {e}"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let t_star = values[dim];
        out.push(TsgSample::new(values[..dim].to_vec(), t_star));
    }
    Ok(out)
}

pub fn save_csv(samples: &[TsgSample], path: &Path) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    write_csv(samples, std::io::BufWriter::new(file))
}

pub fn load_csv(path: &Path) -> Result<Vec<TsgSample>, DatasetError> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Drops samples whose shift is exactly zero (log-mode targets need `|t*| > 0`).
/// Returns the kept samples and the number dropped.
pub fn filter_zero_shifts(samples: Vec<TsgSample>) -> (Vec<TsgSample>, usize) {
    let before = samples.len();
    let kept: Vec<_> = samples.into_iter().filter(|s| s.t_star != 0.0).collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} zero-shift samples from a log-mode dataset");
    }
    (kept, dropped)
}
