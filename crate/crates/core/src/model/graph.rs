use std::fmt;

use serde::{Deserialize, Serialize};

use super::layer::{Activation, Layer};
use super::ModelError;

/// Whether a graph is a conventional network or its spiking counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Ann,
    Snn,
}

/// An ordered layer list whose shapes are checked to chain end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    flavor: Flavor,
}

impl LayerGraph {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, flavor: Flavor) -> Result<Self, ModelError> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(ModelError::InvalidLayer(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            current = layer.output_shape(&current).map_err(|e| ModelError::ShapeChain {
                layer: i,
                kind: layer.kind(),
                detail: e.to_string(),
            })?;
            shapes.push(current.clone());
        }
        let graph = Self {
            input_shape,
            layers,
            shapes,
            flavor,
        };
        graph.check_flavor()?;
        Ok(graph)
    }

    fn check_flavor(&self) -> Result<(), ModelError> {
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != self.layers.len() {
                return Err(ModelError::Flavor(format!("softmax at layer {i} is not the final layer")));
            }
            match (self.flavor, layer) {
                (Flavor::Snn, Layer::Pool(_)) => {
                    return Err(ModelError::Flavor(format!("spiking graph contains pooling at layer {i}")));
                }
                (Flavor::Snn, Layer::Activation(Activation::Relu | Activation::Tanh)) => {
                    return Err(ModelError::Flavor(format!(
                        "spiking graph contains non-spiking activation '{}' at layer {i}",
                        layer.kind()
                    )));
                }
                (Flavor::Snn, Layer::Encoder(_)) if i != 0 => {
                    return Err(ModelError::Flavor(format!("encoder must be the first layer, found at {i}")));
                }
                (Flavor::Ann, Layer::Encoder(_) | Layer::Activation(Activation::Spiking(_))) => {
                    return Err(ModelError::Flavor(format!(
                        "conventional graph contains spiking layer '{}' at {i}",
                        layer.kind()
                    )));
                }
                (_, Layer::Activation(Activation::Spiking(a))) => a.validate()?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    /// Output shape of layer `i`.
    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Input shape of layer `i`.
    pub fn input_shape_of(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map(Vec::as_slice).unwrap_or(&self.input_shape)
    }

    pub fn classes(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers.iter().filter(|l| l.trainable()).map(Layer::param_count).sum()
    }

    pub fn has_encoder(&self) -> bool {
        matches!(self.layers.first(), Some(Layer::Encoder(_)))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Checks the properties a converted network must have before it can be
    /// simulated or mapped: spiking flavor, no pooling, exactly one off-chip
    /// encoder at the front, and every activation spiking.
    pub fn check_deployable(&self) -> Result<(), ModelError> {
        if self.flavor != Flavor::Snn {
            return Err(ModelError::Flavor("graph is not spiking".into()));
        }
        let encoders = self.layers.iter().filter(|l| matches!(l, Layer::Encoder(_))).count();
        if encoders != 1 || !self.has_encoder() {
            return Err(ModelError::Flavor(format!(
                "expected exactly one leading encoder, found {encoders}"
            )));
        }
        self.check_flavor()
    }
}

impl fmt::Display for LayerGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flavor = match self.flavor {
            Flavor::Ann => "ann",
            Flavor::Snn => "snn",
        };
        writeln!(f, "{flavor} graph, input {}", dims(&self.input_shape))?;
        for (i, layer) in self.layers.iter().enumerate() {
            let detail = match layer {
                Layer::Conv(c) => format!(
                    "{}x{} x{} stride {} {:?}",
                    c.kh(),
                    c.kw(),
                    c.cout(),
                    c.stride(),
                    c.padding()
                )
                .to_lowercase(),
                Layer::Encoder(e) => format!("1x1 x{} off-chip, gain {} Hz", e.conv.cout(), e.activation.gain),
                Layer::Activation(Activation::Spiking(a)) => {
                    format!("gain {} Hz, max {} Hz", a.gain, a.max_rate)
                }
                Layer::Pool(p) => format!("{}x{} stride {}", p.size, p.size, p.stride),
                Layer::Dense(d) => format!("{} -> {}", d.cin(), d.cout()),
                _ => String::new(),
            };
            writeln!(
                f,
                "{i:>3}  {:<9} {:<34} -> {}",
                layer.kind(),
                detail,
                dims(&self.shapes[i])
            )?;
        }
        write!(f, "trainable parameters: {}", self.trainable_param_count())
    }
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}
