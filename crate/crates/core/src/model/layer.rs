use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{ConvLayer, DenseLayer};

/// Firing threshold of every spiking unit, in normalized membrane units.
pub const V_THRESHOLD: f64 = 1.0;

/// Membrane reset applied after a spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reset {
    /// `v -= threshold`; keeps the residual charge.
    Subtract,
    /// `v = 0`.
    Zero,
}

/// Integrate-and-fire activation.
///
/// In the smooth training abstraction a unit driven by `x` fires at
/// `min(gain · max(0, x), max_rate)` spikes per second and its decoded output
/// is `amplitude · rate / gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikingActivation {
    /// Spikes per second per unit of drive.
    pub gain: f64,
    /// Decoded value carried by one spike, relative to `1 / gain`.
    pub amplitude: f64,
    /// Saturation rate in Hz; at most `1 / dt`.
    pub max_rate: f64,
    /// Simulation timestep in seconds.
    pub dt: f64,
    pub reset: Reset,
    /// Membrane leak time constant in seconds; `None` for a non-leaky unit.
    pub tau_rc: Option<f64>,
}

impl Default for SpikingActivation {
    fn default() -> Self {
        Self {
            gain: 100.0,
            amplitude: 1.0,
            max_rate: 1000.0,
            dt: 1e-3,
            reset: Reset::Subtract,
            tau_rc: None,
        }
    }
}

impl SpikingActivation {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidActivation(what.to_string()));
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad("gain must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be positive");
        }
        if !(self.max_rate > 0.0) || self.max_rate * self.dt > 1.0 + 1e-9 {
            return bad("max_rate must lie in (0, 1/dt]");
        }
        if let Some(tau) = self.tau_rc {
            if !(tau > 0.0) {
                return bad("tau_rc must be positive");
            }
        }
        Ok(())
    }

    /// Drive at which the unit saturates, in decoded units.
    pub fn cap(&self) -> f64 {
        self.max_rate / self.gain
    }

    /// Firing rate in Hz for a constant drive.
    pub fn rate(&self, drive: f64) -> f64 {
        (self.gain * drive.max(0.0)).min(self.max_rate)
    }
}

/// Kernel-size-one convolution executed off-chip that turns pixel
/// intensities into spike trains.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub conv: ConvLayer,
    pub activation: SpikingActivation,
}

impl EncoderLayer {
    pub fn new(conv: ConvLayer, activation: SpikingActivation) -> Result<Self, ModelError> {
        if conv.kh() != 1 || conv.kw() != 1 || conv.stride() != 1 {
            return Err(ModelError::InvalidLayer(format!(
                "encoder kernel must be 1x1 with stride 1, got {}x{} stride {}",
                conv.kh(),
                conv.kw(),
                conv.stride()
            )));
        }
        activation.validate()?;
        Ok(Self { conv, activation })
    }

    pub fn off_chip(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayer {
    pub kind: PoolKind,
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Tanh,
    Spiking(SpikingActivation),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Encoder(EncoderLayer),
    Activation(Activation),
    Pool(PoolLayer),
    Flatten,
    Dense(DenseLayer),
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Encoder(_) => "encoder",
            Layer::Activation(Activation::Relu) => "relu",
            Layer::Activation(Activation::Tanh) => "tanh",
            Layer::Activation(Activation::Spiking(_)) => "spiking",
            Layer::Pool(PoolLayer { kind: PoolKind::Max, .. }) => "max_pool",
            Layer::Pool(PoolLayer { kind: PoolKind::Avg, .. }) => "avg_pool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.param_count(),
            Layer::Encoder(e) => e.conv.param_count(),
            Layer::Dense(d) => d.param_count(),
            _ => 0,
        }
    }

    /// Whether training updates this layer's parameters. The encoder is a
    /// fixed transduction stage and stays frozen.
    pub fn trainable(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Dense(_))
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ModelError> {
        Ok(match self {
            Layer::Conv(c) => c.output_shape(input)?.to_vec(),
            Layer::Encoder(e) => e.conv.output_shape(input)?.to_vec(),
            Layer::Pool(p) => {
                let &[h, w, c] = input else {
                    return Err(ModelError::InvalidLayer(format!("pooling needs a feature map, got {input:?}")));
                };
                if p.size == 0 || p.stride == 0 || h < p.size || w < p.size {
                    return Err(ModelError::InvalidLayer(format!(
                        "pool {}x{} stride {} does not fit {h}x{w}",
                        p.size, p.size, p.stride
                    )));
                }
                vec![(h - p.size) / p.stride + 1, (w - p.size) / p.stride + 1, c]
            }
            Layer::Flatten => vec![input.iter().product()],
            Layer::Dense(d) => {
                let n: usize = input.iter().product();
                if input.len() != 1 || n != d.cin() {
                    return Err(ModelError::InvalidLayer(format!(
                        "dense layer expects a flat input of {}, got {input:?}",
                        d.cin()
                    )));
                }
                vec![d.cout()]
            }
            Layer::Activation(_) | Layer::Softmax => input.to_vec(),
        })
    }
}

/// He-style uniform bound for a layer with the given fan-in.
pub(crate) fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

