//! `.smod` model container.
//!
//! Layout: the ASCII magic `SMOD`, a little-endian `u32` header length, a
//! UTF-8 JSON header of that length, then every parameter as a
//! little-endian `f64`, layer by layer in declaration order (kernel or weight
//! matrix first, bias second). Nothing follows the last parameter.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graph::{Flavor, LayerGraph};
use super::layer::{Activation, EncoderLayer, Layer, PoolKind, PoolLayer, SpikingActivation};
use super::ModelError;
use crate::tensor::{ConvLayer, DenseLayer, Padding, Tensor};

pub const MAGIC: &[u8; 4] = b"SMOD";
pub const VERSION: u32 = 1;
const PREFIX: usize = 8;

#[derive(Debug, Error)]
pub enum SmodError {
    #[error("byte {offset}: not an .smod file (magic {found:?})")]
    BadMagic { offset: usize, found: Vec<u8> },
    #[error("byte {offset}: file truncated, needed {needed} more bytes but {available} remain")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("byte {offset}: malformed header: {detail}")]
    Header { offset: usize, detail: String },
    #[error("unsupported .smod version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("byte {offset}: {detail}")]
    Payload { offset: usize, detail: String },
    #[error("byte {offset}: {count} unexpected trailing bytes")]
    Trailing { offset: usize, count: usize },
    #[error("header describes an invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerHeader {
    Conv {
        kernel: [usize; 4],
        stride: usize,
        padding: Padding,
    },
    Encoder {
        kernel: [usize; 4],
        activation: SpikingActivation,
    },
    Relu,
    Tanh,
    Spiking {
        activation: SpikingActivation,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: [usize; 2],
    },
    Softmax,
}

impl LayerHeader {
    fn param_len(&self) -> usize {
        match self {
            LayerHeader::Conv { kernel, .. } | LayerHeader::Encoder { kernel, .. } => {
                kernel.iter().product::<usize>() + kernel[3]
            }
            LayerHeader::Dense { units } => units[0] * units[1] + units[1],
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub flavor: Flavor,
    pub input: Vec<usize>,
    pub layers: Vec<LayerHeader>,
}

fn conv_dims(c: &ConvLayer) -> [usize; 4] {
    [c.kh(), c.kw(), c.cin(), c.cout()]
}

pub fn header_of(graph: &LayerGraph) -> Header {
    let layers = graph
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => LayerHeader::Conv {
                kernel: conv_dims(c),
                stride: c.stride(),
                padding: c.padding(),
            },
            Layer::Encoder(e) => LayerHeader::Encoder {
                kernel: conv_dims(&e.conv),
                activation: e.activation,
            },
            Layer::Activation(Activation::Relu) => LayerHeader::Relu,
            Layer::Activation(Activation::Tanh) => LayerHeader::Tanh,
            Layer::Activation(Activation::Spiking(a)) => LayerHeader::Spiking { activation: *a },
            Layer::Pool(p) => match p.kind {
                PoolKind::Max => LayerHeader::MaxPool { size: p.size, stride: p.stride },
                PoolKind::Avg => LayerHeader::AvgPool { size: p.size, stride: p.stride },
            },
            Layer::Flatten => LayerHeader::Flatten,
            Layer::Dense(d) => LayerHeader::Dense { units: [d.cin(), d.cout()] },
            Layer::Softmax => LayerHeader::Softmax,
        })
        .collect();
    Header {
        format: "smod".into(),
        version: VERSION,
        dtype: "f64".into(),
        flavor: graph.flavor(),
        input: graph.input_shape().to_vec(),
        layers,
    }
}

pub fn to_bytes(graph: &LayerGraph) -> Vec<u8> {
    let header = serde_json::to_vec(&header_of(graph)).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX + header.len() + 8 * graph.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let mut put = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    for layer in graph.layers() {
        match layer {
            Layer::Conv(c) | Layer::Encoder(EncoderLayer { conv: c, .. }) => {
                put(c.kernel().data());
                put(c.bias());
            }
            Layer::Dense(d) => {
                put(d.weights().data());
                put(d.bias());
            }
            _ => {}
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], offset: usize, n: usize) -> Result<&'a [u8], SmodError> {
    bytes.get(offset..offset + n).ok_or(SmodError::Truncated {
        offset,
        needed: n,
        available: bytes.len().saturating_sub(offset),
    })
}

/// Parses only the prefix and JSON header.
pub fn read_header(bytes: &[u8]) -> Result<(Header, usize), SmodError> {
    let magic = take(bytes, 0, 4).map_err(|_| SmodError::BadMagic {
        offset: 0,
        found: bytes[..bytes.len().min(4)].to_vec(),
    })?;
    if magic != MAGIC {
        return Err(SmodError::BadMagic {
            offset: 0,
            found: magic.to_vec(),
        });
    }
    let len = u32::from_le_bytes(take(bytes, 4, 4)?.try_into().expect("4 bytes")) as usize;
    let raw = take(bytes, PREFIX, len)?;
    let text = std::str::from_utf8(raw).map_err(|e| SmodError::Header {
        offset: PREFIX + e.valid_up_to(),
        detail: "header is not valid UTF-8".into(),
    })?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SmodError::Header {
        offset: PREFIX + line_col_offset(text, e.line(), e.column()),
        detail: e.to_string(),
    })?;
    // Check the version before the full schema so files from a newer writer
    // get a version error rather than a schema complaint.
    if let Some(v) = value.get("version").and_then(serde_json::Value::as_u64) {
        if v != u64::from(VERSION) {
            return Err(SmodError::Version {
                found: v.min(u64::from(u32::MAX)) as u32,
                supported: VERSION,
            });
        }
    }
    let header: Header = serde_json::from_value(value).map_err(|e| SmodError::Header {
        offset: PREFIX,
        detail: e.to_string(),
    })?;
    if header.format != "smod" {
        return Err(SmodError::Header {
            offset: PREFIX,
            detail: format!("format is '{}', expected 'smod'", header.format),
        });
    }
    if header.dtype != "f64" {
        return Err(SmodError::Header {
            offset: PREFIX,
            detail: format!("dtype '{}' is not supported, expected 'f64'", header.dtype),
        });
    }
    Ok((header, PREFIX + len))
}

fn line_col_offset(text: &str, line: usize, col: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + col.saturating_sub(1)).min(text.len())
}

pub fn from_bytes(bytes: &[u8]) -> Result<LayerGraph, SmodError> {
    let (header, mut offset) = read_header(bytes)?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for lh in &header.layers {
        let start = offset;
        let n = lh.param_len();
        let raw = take(bytes, offset, 8 * n)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(SmodError::Payload {
                offset: start + 8 * bad,
                detail: "non-finite parameter".into(),
            });
        }
        offset += 8 * n;
        let payload_err = |e: crate::tensor::TensorError| SmodError::Payload {
            offset: start,
            detail: e.to_string(),
        };
        let conv = |kernel: [usize; 4], stride, padding, values: Vec<f64>| {
            let split = kernel.iter().product();
            let (k, b) = values.split_at(split);
            Tensor::new(kernel.to_vec(), k.to_vec())
                .and_then(|k| ConvLayer::new(k, b.to_vec(), stride, padding))
                .map_err(payload_err)
        };
        layers.push(match lh {
            LayerHeader::Conv { kernel, stride, padding } => Layer::Conv(conv(*kernel, *stride, *padding, values)?),
            LayerHeader::Encoder { kernel, activation } => {
                Layer::Encoder(EncoderLayer::new(conv(*kernel, 1, Padding::Same, values)?, *activation)?)
            }
            LayerHeader::Relu => Layer::Activation(Activation::Relu),
            LayerHeader::Tanh => Layer::Activation(Activation::Tanh),
            LayerHeader::Spiking { activation } => Layer::Activation(Activation::Spiking(*activation)),
            LayerHeader::MaxPool { size, stride } => Layer::Pool(PoolLayer {
                kind: PoolKind::Max,
                size: *size,
                stride: *stride,
            }),
            LayerHeader::AvgPool { size, stride } => Layer::Pool(PoolLayer {
                kind: PoolKind::Avg,
                size: *size,
                stride: *stride,
            }),
            LayerHeader::Flatten => Layer::Flatten,
            LayerHeader::Dense { units } => {
                let (w, b) = values.split_at(units[0] * units[1]);
                Layer::Dense(
                    Tensor::new(units.to_vec(), w.to_vec())
                        .and_then(|w| DenseLayer::new(w, b.to_vec()))
                        .map_err(payload_err)?,
                )
            }
            LayerHeader::Softmax => Layer::Softmax,
        });
    }
    if offset != bytes.len() {
        return Err(SmodError::Trailing {
            offset,
            count: bytes.len() - offset,
        });
    }
    Ok(LayerGraph::new(header.input, layers, header.flavor)?)
}

pub fn save(graph: &LayerGraph, path: impl AsRef<Path>) -> Result<(), SmodError> {
    std::fs::write(path, to_bytes(graph))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<LayerGraph, SmodError> {
    from_bytes(&std::fs::read(path)?)
}
