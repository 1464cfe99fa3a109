//! Architecture descriptions, concrete layer graphs, and the `.smod`
//! container.

mod exec;
mod graph;
mod layer;
pub mod smod;

pub use exec::ParamGrad;
pub use graph::{Flavor, LayerGraph};
pub use layer::{
    Activation, EncoderLayer, Layer, PoolKind, PoolLayer, Reset, SpikingActivation, V_THRESHOLD,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::tensor::{ConvLayer, DenseLayer, Padding, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("invalid spiking activation: {0}")]
    InvalidActivation(String),
    #[error("layer {layer} ({kind}) does not chain: {detail}")]
    ShapeChain {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("flavor invariant violated: {0}")]
    Flavor(String),
    #[error("input shape {found:?} does not match graph input {expected:?}")]
    InputShape { expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How each VGG block reduces spatial resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsample {
    MaxPool,
    AvgPool,
    StridedConv,
}

fn default_classes() -> usize {
    7
}

fn default_input() -> [usize; 3] {
    [48, 48, 1]
}

/// Declarative description of a VGG-style classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub blocks: usize,
    /// Kernel count of each block; `kernels.len() == blocks`.
    pub kernels: Vec<usize>,
    /// Widths of the two hidden fully connected layers.
    pub fc: [usize; 2],
    #[serde(default = "default_downsample")]
    pub downsample: Downsample,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_input")]
    pub input: [usize; 3],
    /// Reject (rather than warn about) values outside the standard search grid.
    #[serde(default)]
    pub strict_grid: bool,
}

fn default_downsample() -> Downsample {
    Downsample::MaxPool
}

/// Best architecture selected per deployment target in the published
/// comparison, keyed by a CLI-friendly preset name.
pub const DEVICE_PRESETS: [(&str, usize, &[usize], [usize; 2]); 7] = [
    ("pi", 2, &[16, 24], [100, 80]),
    ("jetson-l", 2, &[10, 28], [120, 85]),
    ("jetson-h", 2, &[16, 24], [100, 80]),
    ("pi-ncs2", 2, &[16, 24], [100, 80]),
    ("pi-tpu", 2, &[16, 32], [115, 85]),
    ("coral-dev", 2, &[18, 24], [110, 95]),
    ("loihi", 3, &[12, 22, 48], [100, 85]),
];

impl ModelSpec {
    pub fn new(kernels: &[usize], fc: [usize; 2]) -> Self {
        Self {
            blocks: kernels.len(),
            kernels: kernels.to_vec(),
            fc,
            downsample: Downsample::MaxPool,
            classes: default_classes(),
            input: default_input(),
            strict_grid: false,
        }
    }

    /// One of the [`DEVICE_PRESETS`] architectures.
    pub fn preset(name: &str) -> Option<Self> {
        DEVICE_PRESETS
            .iter()
            .find(|(n, ..)| n.eq_ignore_ascii_case(name))
            .map(|&(_, _, kernels, fc)| Self::new(kernels, fc))
    }

    /// Values that fall outside the standard search grid.
    pub fn grid_violations(&self) -> Vec<String> {
        let space = SearchSpace::standard();
        let mut out = Vec::new();
        if !space.blocks.contains(self.blocks) {
            out.push(format!("blocks={} outside {}", self.blocks, space.blocks));
        }
        for (i, &k) in self.kernels.iter().enumerate().take(4) {
            if !space.kernels[i].contains(k) {
                out.push(format!("K{}={k} outside {}", i + 1, space.kernels[i]));
            }
        }
        if self.kernels.len() > 4 {
            out.push(format!("{} kernel counts given, at most 4 supported", self.kernels.len()));
        }
        for (i, (&v, r)) in self.fc.iter().zip([&space.fc1, &space.fc2]).enumerate() {
            if !r.contains(v) {
                out.push(format!("FC{}={v} outside {r}", i + 1));
            }
        }
        out
    }

    /// Structural validation, plus the search-grid check which is fatal only
    /// under `strict_grid`.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.blocks == 0 {
            return bad("at least one block is required".into());
        }
        if self.kernels.len() != self.blocks {
            return bad(format!("{} kernel counts for {} blocks", self.kernels.len(), self.blocks));
        }
        if self.kernels.iter().chain(&self.fc).any(|&k| k == 0) {
            return bad("kernel counts and FC widths must be positive".into());
        }
        if self.classes < 2 {
            return bad("at least two classes are required".into());
        }
        if self.input.iter().any(|&d| d == 0) {
            return bad(format!("input extent {:?} has a zero dimension", self.input));
        }
        let (h, w) = self.final_extent();
        if h == 0 || w == 0 {
            return bad(format!(
                "{} downsampling steps leave no spatial extent for a {}x{} input",
                self.blocks, self.input[0], self.input[1]
            ));
        }
        let violations = self.grid_violations();
        if !violations.is_empty() {
            if self.strict_grid {
                return bad(violations.join("; "));
            }
            for v in &violations {
                log::warn!("model spec outside the standard search grid: {v}");
            }
        }
        Ok(())
    }

    fn final_extent(&self) -> (usize, usize) {
        let mut h = self.input[0];
        let mut w = self.input[1];
        for _ in 0..self.blocks {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }
}

/// Exact trainable-parameter count of the network `instantiate` builds.
pub fn param_count(spec: &ModelSpec) -> usize {
    let mut total = 0;
    let mut cin = spec.input[2];
    for &k in &spec.kernels {
        total += 9 * cin * k + k;
        total += 9 * k * k + k;
        if spec.downsample == Downsample::StridedConv {
            total += 4 * k * k + k;
        }
        cin = k;
    }
    let (h, w) = spec.final_extent();
    let flat = h * w * cin;
    let [fc1, fc2] = spec.fc;
    total + flat * fc1 + fc1 + fc1 * fc2 + fc2 + fc2 * spec.classes + spec.classes
}

/// Multiply-accumulates in one forward pass of the network `instantiate`
/// builds.
pub fn mac_count(spec: &ModelSpec) -> usize {
    let (mut h, mut w) = (spec.input[0], spec.input[1]);
    let mut cin = spec.input[2];
    let mut total = 0;
    for &k in &spec.kernels {
        total += h * w * 9 * (cin * k + k * k);
        h /= 2;
        w /= 2;
        if spec.downsample == Downsample::StridedConv {
            total += h * w * 4 * k * k;
        }
        cin = k;
    }
    let [fc1, fc2] = spec.fc;
    total + h * w * cin * fc1 + fc1 * fc2 + fc2 * spec.classes
}

/// A 2×2 stride-2 convolution that reproduces average pooling channel-wise.
pub fn avg_pool_conv(channels: usize) -> ConvLayer {
    let mut k = vec![0.0; 4 * channels * channels];
    for tap in 0..4 {
        for c in 0..channels {
            k[(tap * channels + c) * channels + c] = 0.25;
        }
    }
    let kernel = Tensor::new(vec![2, 2, channels, channels], k).expect("kernel shape");
    ConvLayer::new(kernel, vec![0.0; channels], 2, Padding::Valid).expect("valid conv")
}

fn he_conv(rng: &mut rng::Rng, k: usize, cin: usize, cout: usize) -> ConvLayer {
    let limit = layer::he_limit(k * k * cin);
    let data = (0..k * k * cin * cout).map(|_| rng.random_range(-limit..limit)).collect();
    let kernel = Tensor::new(vec![k, k, cin, cout], data).expect("kernel shape");
    ConvLayer::new(kernel, vec![0.0; cout], 1, Padding::Same).expect("valid conv")
}

fn he_dense(rng: &mut rng::Rng, cin: usize, cout: usize) -> DenseLayer {
    let limit = layer::he_limit(cin);
    let data = (0..cin * cout).map(|_| rng.random_range(-limit..limit)).collect();
    DenseLayer::new(Tensor::new(vec![cin, cout], data).expect("weight shape"), vec![0.0; cout])
        .expect("valid dense")
}

/// Builds `blocks × (conv3×3, relu, conv3×3, relu, downsample)` followed by
/// `flatten, FC1, relu, FC2, relu, dense(classes), softmax`, with He-uniform
/// weights drawn from `seed`.
pub fn instantiate(spec: &ModelSpec, seed: u64) -> Result<LayerGraph, ModelError> {
    spec.validate()?;
    let mut rng = rng::seeded(seed);
    let mut layers = Vec::new();
    let mut cin = spec.input[2];
    for &k in &spec.kernels {
        layers.push(Layer::Conv(he_conv(&mut rng, 3, cin, k)));
        layers.push(Layer::Activation(Activation::Relu));
        layers.push(Layer::Conv(he_conv(&mut rng, 3, k, k)));
        layers.push(Layer::Activation(Activation::Relu));
        match spec.downsample {
            Downsample::MaxPool | Downsample::AvgPool => {
                let kind = if spec.downsample == Downsample::MaxPool {
                    PoolKind::Max
                } else {
                    PoolKind::Avg
                };
                layers.push(Layer::Pool(PoolLayer { kind, size: 2, stride: 2 }));
            }
            Downsample::StridedConv => {
                layers.push(Layer::Conv(avg_pool_conv(k)));
                layers.push(Layer::Activation(Activation::Relu));
            }
        }
        cin = k;
    }
    let (h, w) = spec.final_extent();
    let [fc1, fc2] = spec.fc;
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense(he_dense(&mut rng, h * w * cin, fc1)));
    layers.push(Layer::Activation(Activation::Relu));
    layers.push(Layer::Dense(he_dense(&mut rng, fc1, fc2)));
    layers.push(Layer::Activation(Activation::Relu));
    layers.push(Layer::Dense(he_dense(&mut rng, fc2, spec.classes)));
    layers.push(Layer::Softmax);
    LayerGraph::new(spec.input.to_vec(), layers, Flavor::Ann)
}

/// Inclusive integer range sampled on a regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

impl ParamRange {
    pub const fn new(min: usize, max: usize, step: usize) -> Self {
        Self { min, max, step }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.step == 0 || self.min > self.max || (self.max - self.min) % self.step != 0 {
            return Err(ModelError::InvalidSpec(format!("invalid search range {self}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.max - self.min) / self.step + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, index: usize) -> usize {
        self.min + index * self.step
    }

    pub fn values(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(|i| self.value(i))
    }

    pub fn index_of(&self, v: usize) -> Option<usize> {
        self.contains(v).then(|| (v - self.min) / self.step)
    }

    pub fn contains(&self, v: usize) -> bool {
        v >= self.min && v <= self.max && (v - self.min) % self.step == 0
    }
}

impl std::fmt::Display for ParamRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{} step {}", self.min, self.max, self.step)
    }
}

/// Per-hyperparameter grids for the architecture search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub blocks: ParamRange,
    pub kernels: [ParamRange; 4],
    pub fc1: ParamRange,
    pub fc2: ParamRange,
}

impl SearchSpace {
    /// The standard grid: 2–4 blocks, K1 6–16/2, K2 24–32/4, K3 36–48/4,
    /// K4 52–64/4, FC1 100–120/5, FC2 80–100/5.
    pub const fn standard() -> Self {
        Self {
            blocks: ParamRange::new(2, 4, 1),
            kernels: [
                ParamRange::new(6, 16, 2),
                ParamRange::new(24, 32, 4),
                ParamRange::new(36, 48, 4),
                ParamRange::new(52, 64, 4),
            ],
            fc1: ParamRange::new(100, 120, 5),
            fc2: ParamRange::new(80, 100, 5),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for r in self.ranges() {
            r.validate()?;
        }
        if self.blocks.min == 0 || self.blocks.max > 4 {
            return Err(ModelError::InvalidSpec(format!("block range {} must lie within 1-4", self.blocks)));
        }
        Ok(())
    }

    /// Ranges in the order blocks, K1..K4, FC1, FC2.
    pub fn ranges(&self) -> [ParamRange; 7] {
        [
            self.blocks,
            self.kernels[0],
            self.kernels[1],
            self.kernels[2],
            self.kernels[3],
            self.fc1,
            self.fc2,
        ]
    }

    pub fn contains(&self, spec: &ModelSpec) -> bool {
        self.blocks.contains(spec.blocks)
            && spec.kernels.len() == spec.blocks
            && spec.kernels.iter().zip(&self.kernels).all(|(&k, r)| r.contains(k))
            && self.fc1.contains(spec.fc[0])
            && self.fc2.contains(spec.fc[1])
    }

    /// Every distinct architecture on the grid (kernel lists truncated to the
    /// block count).
    pub fn enumerate(&self) -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for blocks in self.blocks.values() {
            let mut prefixes: Vec<Vec<usize>> = vec![vec![]];
            for r in &self.kernels[..blocks] {
                prefixes = prefixes
                    .into_iter()
                    .flat_map(|p| {
                        r.values().map(move |k| {
                            let mut q = p.clone();
                            q.push(k);
                            q
                        })
                    })
                    .collect();
            }
            for kernels in prefixes {
                for fc1 in self.fc1.values() {
                    for fc2 in self.fc2.values() {
                        let mut spec = ModelSpec::new(&kernels, [fc1, fc2]);
                        spec.strict_grid = true;
                        out.push(spec);
                    }
                }
            }
        }
        out
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::standard()
    }
}
