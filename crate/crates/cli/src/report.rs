//! Long-format merge of traces, histories, trajectories and JSON metrics.
//!
//! `observations.csv` holds one observation per row:
//! `source,kind,key,key_value,variable,value`. Trace inputs additionally feed
//! `shift_history.csv`, the accepted-shift series per source.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const SHIFT_HISTORY_FILE: &str = "shift_history.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub source: String,
    pub kind: String,
    pub key: String,
    pub key_value: String,
    pub variable: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub source: String,
    pub step: usize,
    pub t: f64,
    pub accepted: f64,
    pub window_lo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub observations: usize,
    pub shift_points: usize,
    pub outputs: Vec<PathBuf>,
}

fn classify(headers: &csv::StringRecord) -> (&'static str, Option<usize>) {
    let has = |n: &str| headers.iter().position(|h| h == n);
    if has("branch").is_some() && has("accepted").is_some() {
        ("trace", has("step"))
    } else if has("epoch").is_some() {
        ("history", has("epoch"))
    } else if has("margin").is_some() && has("u_x").is_some() {
        ("trajectory", has("t"))
    } else if has("t_star").is_some() {
        ("dataset", None)
    } else {
        ("table", None)
    }
}

fn csv_observations(path: &Path, source: &str, out: &mut Vec<Observation>, shifts: &mut Vec<ShiftPoint>) -> Result<(), CliError> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers().map_err(anyhow::Error::from)?.clone();
    let (kind, key_col) = classify(&headers);
    let key_name = key_col.map_or("row".to_string(), |c| headers[c].to_string());
    let col = |name: &str| headers.iter().position(|h| h == name);
    for (row_idx, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        let key_value = key_col.map_or(row_idx.to_string(), |c| rec[c].to_string());
        for (i, field) in rec.iter().enumerate() {
            if Some(i) == key_col {
                continue;
            }
            if let Ok(value) = field.parse::<f64>() {
                out.push(Observation {
                    source: source.into(),
                    kind: kind.into(),
                    key: key_name.clone(),
                    key_value: key_value.clone(),
                    variable: headers[i].to_string(),
                    value,
                });
            }
        }
        if kind == "trace" {
            let get = |n: &str| col(n).and_then(|c| rec[c].parse::<f64>().ok()).unwrap_or(f64::NAN);
            shifts.push(ShiftPoint {
                source: source.into(),
                step: get("step") as usize,
                t: get("t"),
                accepted: get("accepted"),
                window_lo: get("window_lo"),
            });
        }
    }
    Ok(())
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut Vec<(String, f64)>) {
    use serde_json::Value;
    match value {
        Value::Number(n) => {
            if let Some(v) = n.as_f64() {
                out.push((prefix.to_string(), v));
            }
        }
        Value::Bool(b) => out.push((prefix.to_string(), *b as u8 as f64)),
        Value::Object(map) => {
            for (k, v) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        _ => {}
    }
}

fn json_observations(path: &Path, source: &str, out: &mut Vec<Observation>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let kind = if value.get("metrics").is_some() {
        "metrics"
    } else if value.get("nn_accept_rate").is_some() {
        "summary"
    } else {
        "json"
    };
    let mut leaves = Vec::new();
    flatten("", &value, &mut leaves);
    out.extend(leaves.into_iter().map(|(variable, value)| Observation {
        source: source.into(),
        kind: kind.into(),
        key: String::new(),
        key_value: String::new(),
        variable,
        value,
    }));
    Ok(())
}

/// Reads every input in order and writes the merged tables into `out_dir`.
pub fn build_report(inputs: &[PathBuf], out_dir: &Path) -> Result<ReportSummary, CliError> {
    let mut observations = Vec::new();
    let mut shifts = Vec::new();
    for path in inputs {
        if !path.exists() {
            return Err(CliError::Other(anyhow::anyhow!("missing input {}", path.display())));
        }
        let source = path.display().to_string();
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => json_observations(path, &source, &mut observations)?,
            _ => csv_observations(path, &source, &mut observations, &mut shifts)?,
        }
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut outputs = Vec::new();
    let obs_path = out_dir.join(OBSERVATIONS_FILE);
    write_rows(&obs_path, &observations)?;
    outputs.push(obs_path);
    if !shifts.is_empty() {
        let p = out_dir.join(SHIFT_HISTORY_FILE);
        write_rows(&p, &shifts)?;
        outputs.push(p);
    }
    Ok(ReportSummary {
        observations: observations.len(),
        shift_points: shifts.len(),
        outputs,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row).map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    Ok(())
}
