//! JSON checkpoints for KAN and MLP regressors.
//!
//! KAN layout:
//! `{format_version: 1, widths, input_norm: {shift, scale}, layers: [{edges: [...]}]}`
//! where each edge is `{kind, theta, alpha, beta, grid: {lo, hi, G, k}, centers, width}`
//! and edges are listed row-major (`j * n_in + i`). MLP checkpoints carry an
//! `arch: "mlp"` tag with `weights` and `biases` instead of `layers`.
//!
//! Every float is written in scientific notation with 17 significant digits,
//! which round-trips `f64` exactly, so save -> load -> save is byte-stable.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::error::CheckpointError;
use crate::kan::{KanLayer, KanNetwork};
use crate::mlp::Mlp;
use crate::model::{AnyModel, InputNorm};
use crate::spline::EdgeFunction;

pub const FORMAT_VERSION: u64 = 1;

/// Compact JSON with every float printed as `{:.16e}`.
#[derive(Debug, Default, Clone, Copy)]
pub struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes `value` with [`SeventeenDigits`].
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SeventeenDigits);
    value.serialize(&mut ser)?;
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KanCheckpoint {
    format_version: u64,
    widths: Vec<usize>,
    input_norm: InputNorm,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    edges: Vec<EdgeFunction>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpCheckpoint {
    format_version: u64,
    arch: String,
    widths: Vec<usize>,
    input_norm: InputNorm,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

fn check_finite<'a>(
    values: impl IntoIterator<Item = &'a f64>,
    path: impl Fn() -> String,
) -> Result<(), CheckpointError> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CheckpointError::NonFinite(path()))
    }
}

pub fn save_network(net: &KanNetwork) -> Result<Vec<u8>, CheckpointError> {
    check_finite(net.input_norm.shift.iter().chain(&net.input_norm.scale), || {
        "input_norm".into()
    })?;
    for (l, layer) in net.layers.iter().enumerate() {
        for (e, edge) in layer.edges.iter().enumerate() {
            let params = edge
                .theta
                .iter()
                .chain(&edge.centers)
                .chain([&edge.alpha, &edge.beta, &edge.width]);
            check_finite(params, || format!("layers[{l}].edges[{e}]"))?;
        }
    }
    let record = KanCheckpoint {
        format_version: FORMAT_VERSION,
        widths: net.widths.clone(),
        input_norm: net.input_norm.clone(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerRecord {
                edges: l.edges.clone(),
            })
            .collect(),
    };
    to_json_bytes(&record).map_err(|e| CheckpointError::Parse {
        path: String::new(),
        message: e.to_string(),
    })
}

pub fn save_mlp(mlp: &Mlp) -> Result<Vec<u8>, CheckpointError> {
    for (l, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
        check_finite(w.iter().chain(b), || format!("weights[{l}]"))?;
    }
    let record = MlpCheckpoint {
        format_version: FORMAT_VERSION,
        arch: "mlp".into(),
        widths: mlp.widths.clone(),
        input_norm: mlp.input_norm.clone(),
        weights: mlp.weights.clone(),
        biases: mlp.biases.clone(),
    };
    to_json_bytes(&record).map_err(|e| CheckpointError::Parse {
        path: String::new(),
        message: e.to_string(),
    })
}

pub fn save_model(model: &AnyModel) -> Result<Vec<u8>, CheckpointError> {
    match model {
        AnyModel::Kan(net) => save_network(net),
        AnyModel::Mlp(mlp) => save_mlp(mlp),
    }
}

fn parse_value(bytes: &[u8]) -> Result<serde_json::Value, CheckpointError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| CheckpointError::Parse {
            path: String::new(),
            message: e.to_string(),
        })?;
    match value.get("format_version") {
        None => Err(CheckpointError::Parse {
            path: "format_version".into(),
            message: "missing field".into(),
        }),
        Some(v) => match v.as_u64() {
            Some(FORMAT_VERSION) => Ok(value),
            Some(other) => Err(CheckpointError::Version(other)),
            None => Err(CheckpointError::Parse {
                path: "format_version".into(),
                message: format!("expected an integer, got {v}"),
            }),
        },
    }
}

fn decode<T: for<'de> Deserialize<'de>>(value: serde_json::Value) -> Result<T, CheckpointError> {
    serde_path_to_error::deserialize(value).map_err(|e| CheckpointError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn kan_from_record(record: KanCheckpoint) -> Result<KanNetwork, CheckpointError> {
    let invalid = |path: String, message: String| CheckpointError::Invalid { path, message };
    if record.layers.len() + 1 != record.widths.len() {
        return Err(invalid(
            "layers".into(),
            format!("{} layers for {} widths", record.layers.len(), record.widths.len()),
        ));
    }
    let mut layers = Vec::with_capacity(record.layers.len());
    for (l, layer) in record.layers.into_iter().enumerate() {
        for (e, edge) in layer.edges.iter().enumerate() {
            edge.validate()
                .map_err(|err| invalid(format!("layers[{l}].edges[{e}]"), err.to_string()))?;
        }
        let built = KanLayer::new(record.widths[l], record.widths[l + 1], layer.edges)
            .map_err(|err| invalid(format!("layers[{l}].edges"), err.to_string()))?;
        layers.push(built);
    }
    KanNetwork::from_layers(record.widths, layers, record.input_norm)
        .map_err(|err| invalid("widths".into(), err.to_string()))
}

pub fn load_network(bytes: &[u8]) -> Result<KanNetwork, CheckpointError> {
    match load_model(bytes)? {
        AnyModel::Kan(net) => Ok(net),
        AnyModel::Mlp(_) => Err(CheckpointError::Invalid {
            path: "arch".into(),
            message: "checkpoint holds an MLP, not a KAN".into(),
        }),
    }
}

/// Loads either checkpoint kind; nothing is returned unless the whole
/// document parses and validates.
pub fn load_model(bytes: &[u8]) -> Result<AnyModel, CheckpointError> {
    let value = parse_value(bytes)?;
    match value.get("arch").and_then(|a| a.as_str()) {
        Some("mlp") => {
            let record: MlpCheckpoint = decode(value)?;
            Mlp::from_parts(record.widths, record.weights, record.biases, record.input_norm)
                .map(AnyModel::Mlp)
                .map_err(|e| CheckpointError::Invalid {
                    path: "weights".into(),
                    message: e.to_string(),
                })
        }
        Some(other) => Err(CheckpointError::Invalid {
            path: "arch".into(),
            message: format!("unknown arch `{other}`"),
        }),
        None => Ok(AnyModel::Kan(kan_from_record(decode(value)?)?)),
    }
}
