//! Clock-driven simulation of converted spiking networks.
//!
//! Every spiking unit is a non-leaky (optionally leaky) integrate-and-fire
//! neuron with threshold 1. Each step, a population integrates the spikes
//! its input population emitted in the previous step, so a spike needs one
//! step per layer to reach the readout. Spikes are scattered through the
//! weights event by event. The readout is a plain dense layer whose input
//! is averaged over a decoding window and softmax-normalised.

mod network;
mod probe;
mod run;

pub use network::{Network, Population, SpikeState};
pub use probe::{probe_raster, ProbeConfig, ProbeLayer, ProbeTrace, Raster, RasterRow};
pub use run::{evaluate, run_inference, run_sequence, Decode, Evaluation, InferenceResult, SimConfig};

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("network cannot be simulated: {0}")]
    Unsupported(String),
    #[error("input shape {found:?} does not match network input {expected:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error("window {window_ms} ms is shorter than one {dt} s timestep")]
    Window { window_ms: f64, dt: f64 },
    #[error("non-finite membrane voltage in population {population}, neuron {neuron}")]
    NonFinite { population: usize, neuron: usize },
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error("label {label} outside the {classes} readout classes")]
    Label { label: usize, classes: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
