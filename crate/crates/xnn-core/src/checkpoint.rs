//! Bit-exact model checkpoints.
//!
//! Layout: one line of JSON (format version, model kind, config, parameter
//! directory with shapes and byte offsets), a newline, then a raw
//! little-endian IEEE-754 f64 payload. Save -> load -> save reproduces the
//! file byte for byte.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::model::{ControlModel, Model, ModelKind, XnnConfig, XnnModel};

pub const FORMAT_VERSION: u32 = 1;

const MEAN_ENTRY: &str = "standardize.mean";
const STD_ENTRY: &str = "standardize.std";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_kind: String,
    config: XnnConfig,
    /// Class-name order the model was trained with; evaluation remaps CSV
    /// labels onto it.
    class_names: Vec<String>,
    params: Vec<ParamEntry>,
    /// Standardization vectors stored alongside the parameters, when the
    /// training pipeline standardized its inputs.
    preprocess: Vec<ParamEntry>,
}

/// Either trained architecture, as restored from a checkpoint.
#[derive(Debug)]
pub enum AnyModel {
    Xnn(XnnModel),
    Control(ControlModel),
}

impl AnyModel {
    pub fn as_model(&self) -> &dyn Model {
        match self {
            AnyModel::Xnn(m) => m,
            AnyModel::Control(m) => m,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Xnn(_) => ModelKind::Xnn,
            AnyModel::Control(_) => ModelKind::Control,
        }
    }
}

/// A model plus the input preprocessing it was trained with.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub standardization: Option<Standardization>,
    /// Training-time class-name order; empty when unknown.
    pub class_names: Vec<String>,
}

fn corrupt(field: &str, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Serialize a model (and optional preprocessing stats) to `path`.
pub fn save(
    model: &dyn Model,
    standardization: Option<&Standardization>,
    class_names: &[String],
    path: &Path,
) -> Result<()> {
    let named = model.named_params();
    let mut params = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, tensor) in &named {
        params.push(ParamEntry {
            name: name.clone(),
            rows: tensor.rows(),
            cols: tensor.cols(),
            offset,
        });
        offset += (tensor.len() * 8) as u64;
    }
    let mut preprocess = Vec::new();
    if let Some(stats) = standardization {
        for (name, values) in [(MEAN_ENTRY, &stats.mean), (STD_ENTRY, &stats.std)] {
            preprocess.push(ParamEntry {
                name: name.to_string(),
                rows: 1,
                cols: values.len(),
                offset,
            });
            offset += (values.len() * 8) as u64;
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        model_kind: model.kind().as_str().to_string(),
        config: model.config().clone(),
        class_names: class_names.to_vec(),
        params,
        preprocess,
    };

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)
        .map_err(|e| corrupt("header", format!("serialization failed: {e}")))?;
    out.write_all(b"\n")?;
    for (_, tensor) in &named {
        write_f64s(&mut out, tensor.data())?;
    }
    if let Some(stats) = standardization {
        write_f64s(&mut out, &stats.mean)?;
        write_f64s(&mut out, &stats.std)?;
    }
    out.flush()?;
    Ok(())
}

fn write_f64s(out: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f64s(payload: &[u8], entry: &ParamEntry) -> Result<Vec<f64>> {
    let len = entry.rows * entry.cols * 8;
    let start = entry.offset as usize;
    let end = start.checked_add(len).ok_or_else(|| {
        corrupt(&entry.name, "offset overflows the payload".to_string())
    })?;
    if end > payload.len() {
        return Err(corrupt(
            &entry.name,
            format!(
                "payload truncated: need bytes {start}..{end} of {}",
                payload.len()
            ),
        ));
    }
    Ok(payload[start..end]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect())
}

/// Restore a checkpoint. The header's parameter directory must match the
/// architecture derived from its config, entry for entry.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("header", "no header/payload separator found"))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| corrupt("header", format!("invalid JSON: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(
            "format_version",
            format!("expected {FORMAT_VERSION}, found {}", header.format_version),
        ));
    }
    let payload = &bytes[newline + 1..];

    let mut model = match header.model_kind.as_str() {
        "xnn" => AnyModel::Xnn(XnnModel::new(header.config.clone())?),
        "control" => AnyModel::Control(ControlModel::new(header.config.clone())?),
        other => {
            return Err(corrupt(
                "model_kind",
                format!("unknown model kind `{other}`"),
            ))
        }
    };

    {
        let (expected, params_mut): (Vec<(String, (usize, usize))>, Vec<&mut Tensor>) =
            match &mut model {
                AnyModel::Xnn(m) => (
                    m.named_params()
                        .iter()
                        .map(|(n, t)| (n.clone(), t.shape()))
                        .collect(),
                    m.params_mut(),
                ),
                AnyModel::Control(m) => (
                    m.named_params()
                        .iter()
                        .map(|(n, t)| (n.clone(), t.shape()))
                        .collect(),
                    m.params_mut(),
                ),
            };
        if header.params.len() != expected.len() {
            return Err(corrupt(
                "params",
                format!(
                    "directory lists {} parameters, architecture has {}",
                    header.params.len(),
                    expected.len()
                ),
            ));
        }
        for ((entry, (name, shape)), param) in
            header.params.iter().zip(expected).zip(params_mut)
        {
            if entry.name != name {
                return Err(corrupt(
                    &entry.name,
                    format!("expected parameter `{name}` at this position"),
                ));
            }
            if (entry.rows, entry.cols) != shape {
                return Err(corrupt(
                    &entry.name,
                    format!(
                        "shape {}x{} does not match architecture {}x{}",
                        entry.rows, entry.cols, shape.0, shape.1
                    ),
                ));
            }
            let values = read_f64s(payload, entry)?;
            param.data_mut().copy_from_slice(&values);
        }
    }

    let standardization = match header.preprocess.as_slice() {
        [] => None,
        [mean_entry, std_entry] if mean_entry.name == MEAN_ENTRY && std_entry.name == STD_ENTRY => {
            Some(Standardization {
                mean: read_f64s(payload, mean_entry)?,
                std: read_f64s(payload, std_entry)?,
            })
        }
        _ => {
            return Err(corrupt(
                "preprocess",
                "expected either no entries or [standardize.mean, standardize.std]",
            ))
        }
    };

    Ok(Checkpoint {
        model,
        standardization,
        class_names: header.class_names,
    })
}
