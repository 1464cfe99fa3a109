//! Partitioning of spiking layers into core-sized blocks and allocation of
//! those blocks to the cores of a many-core neuromorphic chip.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Activation, Layer, LayerGraph, ModelError};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid chip: {0}")]
    Chip(String),
    #[error("layer shape {0:?} has a zero or missing dimension")]
    Shape(Vec<usize>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
    #[error("json export: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipConfig {
    pub cores_per_chip: usize,
    pub neurons_per_core: usize,
}

impl Default for ChipConfig {
    fn default() -> Self {
        Self {
            cores_per_chip: 128,
            neurons_per_core: 1024,
        }
    }
}

impl ChipConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.cores_per_chip == 0 || self.neurons_per_core == 0 {
            return Err(MapError::Chip(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl BlockShape {
    pub fn neurons(&self) -> usize {
        self.rows * self.cols * self.channels
    }
}

/// A rectangular slab of one layer: origin plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRegion {
    pub row: usize,
    pub col: usize,
    pub channel: usize,
    pub shape: BlockShape,
}

impl BlockRegion {
    pub fn neurons(&self) -> usize {
        self.shape.neurons()
    }

    pub fn contains(&self, r: usize, c: usize, ch: usize) -> bool {
        (self.row..self.row + self.shape.rows).contains(&r)
            && (self.col..self.col + self.shape.cols).contains(&c)
            && (self.channel..self.channel + self.shape.channels).contains(&ch)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionPolicy {
    /// The uniform tile with the fewest blocks; ties go to more channels,
    /// then more rows.
    #[default]
    MinBlocks,
    /// Whole feature maps with as many channels as fit; maps larger than a
    /// core are cut into full-width row bands, one channel each.
    ChannelFirst,
}

impl fmt::Display for PartitionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionPolicy::MinBlocks => "min_blocks",
            PartitionPolicy::ChannelFirst => "channel_first",
        })
    }
}

fn tile(policy: PartitionPolicy, h: usize, w: usize, c: usize, cap: usize) -> BlockShape {
    match policy {
        PartitionPolicy::ChannelFirst => {
            if h * w <= cap {
                BlockShape { rows: h, cols: w, channels: c.min(cap / (h * w)) }
            } else if w <= cap {
                BlockShape { rows: cap / w, cols: w, channels: 1 }
            } else {
                BlockShape { rows: 1, cols: cap, channels: 1 }
            }
        }
        PartitionPolicy::MinBlocks => {
            let mut best = (usize::MAX, BlockShape { rows: 1, cols: 1, channels: 1 });
            for rows in 1..=h.min(cap) {
                for cols in 1..=w.min(cap / rows) {
                    let channels = c.min(cap / (rows * cols));
                    let n = h.div_ceil(rows) * w.div_ceil(cols) * c.div_ceil(channels);
                    let cand = BlockShape { rows, cols, channels };
                    let better = n < best.0
                        || (n == best.0 && (channels, rows) > (best.1.channels, best.1.rows));
                    if better {
                        best = (n, cand);
                    }
                }
            }
            best.1
        }
    }
}

/// Tiles an `h×w×c` layer into disjoint regions of at most `cap` neurons,
/// ordered channel-major, then by row and column.
pub fn partition_layer(shape: [usize; 3], policy: PartitionPolicy, cap: usize) -> Result<Vec<BlockRegion>, MapError> {
    let [h, w, c] = shape;
    if h == 0 || w == 0 || c == 0 {
        return Err(MapError::Shape(shape.to_vec()));
    }
    if cap == 0 {
        return Err(MapError::Chip("zero neurons per core".into()));
    }
    let t = tile(policy, h, w, c, cap);
    // Same block count, but as even as possible.
    let even = |n: usize, k: usize| n.div_ceil(n.div_ceil(k));
    let t = BlockShape {
        rows: even(h, t.rows),
        cols: even(w, t.cols),
        channels: even(c, t.channels),
    };
    let mut out = Vec::with_capacity(h.div_ceil(t.rows) * w.div_ceil(t.cols) * c.div_ceil(t.channels));
    for channel in (0..c).step_by(t.channels) {
        for row in (0..h).step_by(t.rows) {
            for col in (0..w).step_by(t.cols) {
                out.push(BlockRegion {
                    row,
                    col,
                    channel,
                    shape: BlockShape {
                        rows: t.rows.min(h - row),
                        cols: t.cols.min(w - col),
                        channels: t.channels.min(c - channel),
                    },
                });
            }
        }
    }
    Ok(out)
}

/// A layer that occupies neuromorphic cores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnChipLayer {
    /// Graph index of the layer whose outputs are the neurons.
    pub layer: usize,
    pub kind: String,
    pub shape: [usize; 3],
}

impl OnChipLayer {
    pub fn neurons(&self) -> usize {
        self.shape.iter().product()
    }
}

fn as_hwc(shape: &[usize]) -> [usize; 3] {
    match *shape {
        [h, w, c] => [h, w, c],
        [n] => [1, 1, n],
        _ => [1, 1, shape.iter().product()],
    }
}

/// Neuron groups that live on the chip: every spiking layer plus the dense
/// readout. The off-chip encoder is skipped.
pub fn on_chip_layers(graph: &LayerGraph) -> Result<Vec<OnChipLayer>, MapError> {
    graph.check_deployable()?;
    let layers = graph.layers();
    let mut out = Vec::new();
    let mut last_linear = None;
    for (i, l) in layers.iter().enumerate() {
        match l {
            Layer::Conv(_) | Layer::Dense(_) => last_linear = Some(i),
            Layer::Activation(Activation::Spiking(_)) => {
                let src = last_linear.take().unwrap_or(i);
                out.push(OnChipLayer {
                    layer: i,
                    kind: layers[src].kind().to_string(),
                    shape: as_hwc(graph.shape(i)),
                });
            }
            _ => {}
        }
    }
    if let Some(i) = last_linear {
        out.push(OnChipLayer {
            layer: i,
            kind: "readout".into(),
            shape: as_hwc(graph.shape(i)),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub layer: usize,
    pub region: BlockRegion,
    pub core: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapOptions {
    pub policy: PartitionPolicy,
    /// Pack several blocks into one core (first-fit decreasing) instead of
    /// giving every block its own core.
    pub pack_dense: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreMap {
    pub chip: ChipConfig,
    pub policy: PartitionPolicy,
    pub pack_dense: bool,
    pub layers: Vec<OnChipLayer>,
    pub assignments: Vec<Assignment>,
    pub cores_used: usize,
    pub chips_used: usize,
}

/// Places a list of layers on cores.
pub fn map_layers(layers: Vec<OnChipLayer>, chip: ChipConfig, opts: MapOptions) -> Result<CoreMap, MapError> {
    chip.validate()?;
    let cap = chip.neurons_per_core;
    let mut blocks = Vec::new();
    for l in &layers {
        for region in partition_layer(l.shape, opts.policy, cap)? {
            blocks.push((l.layer, region));
        }
    }
    let mut assignments = Vec::with_capacity(blocks.len());
    let cores_used = if opts.pack_dense {
        let mut order: Vec<usize> = (0..blocks.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(blocks[i].1.neurons()));
        let mut fill: Vec<usize> = Vec::new();
        let mut core_of = vec![0; blocks.len()];
        for i in order {
            let n = blocks[i].1.neurons();
            let core = match fill.iter().position(|&f| f + n <= cap) {
                Some(c) => c,
                None => {
                    fill.push(0);
                    fill.len() - 1
                }
            };
            fill[core] += n;
            core_of[i] = core;
        }
        for (i, (layer, region)) in blocks.into_iter().enumerate() {
            assignments.push(Assignment { layer, region, core: core_of[i] });
        }
        fill.len()
    } else {
        let n = blocks.len();
        for (core, (layer, region)) in blocks.into_iter().enumerate() {
            assignments.push(Assignment { layer, region, core });
        }
        n
    };
    let chips_used = cores_used.div_ceil(chip.cores_per_chip);
    if chips_used > 1 {
        log::warn!(
            "network needs {cores_used} cores, more than the {} of one chip; spread over {chips_used} chips",
            chip.cores_per_chip
        );
    }
    Ok(CoreMap {
        chip,
        policy: opts.policy,
        pack_dense: opts.pack_dense,
        layers,
        assignments,
        cores_used,
        chips_used,
    })
}

pub fn map_network(graph: &LayerGraph, chip: ChipConfig, opts: MapOptions) -> Result<CoreMap, MapError> {
    map_layers(on_chip_layers(graph)?, chip, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoreUsage {
    pub core: usize,
    pub chip: usize,
    pub neurons: usize,
    pub blocks: usize,
    pub fill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerUsage {
    pub layer: usize,
    pub kind: String,
    pub neurons: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Utilization {
    pub cores: Vec<CoreUsage>,
    pub layers: Vec<LayerUsage>,
    pub total_neurons: usize,
    pub mean_fill: f64,
}

impl CoreMap {
    pub fn total_neurons(&self) -> usize {
        self.layers.iter().map(OnChipLayer::neurons).sum()
    }

    pub fn fits_single_chip(&self) -> bool {
        self.chips_used <= 1
    }

    pub fn utilization(&self) -> Utilization {
        let mut cores: Vec<CoreUsage> = (0..self.cores_used)
            .map(|core| CoreUsage {
                core,
                chip: core / self.chip.cores_per_chip,
                neurons: 0,
                blocks: 0,
                fill: 0.0,
            })
            .collect();
        for a in &self.assignments {
            cores[a.core].neurons += a.region.neurons();
            cores[a.core].blocks += 1;
        }
        for c in &mut cores {
            c.fill = c.neurons as f64 / self.chip.neurons_per_core as f64;
        }
        let layers = self
            .layers
            .iter()
            .map(|l| LayerUsage {
                layer: l.layer,
                kind: l.kind.clone(),
                neurons: l.neurons(),
                blocks: self.assignments.iter().filter(|a| a.layer == l.layer).count(),
            })
            .collect();
        let total_neurons = self.total_neurons();
        let mean_fill = if cores.is_empty() {
            0.0
        } else {
            total_neurons as f64 / (cores.len() * self.chip.neurons_per_core) as f64
        };
        Utilization {
            cores,
            layers,
            total_neurons,
            mean_fill,
        }
    }

    pub fn to_json(&self) -> Result<String, MapError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-core CSV with header `core,chip,neurons,blocks,fill`.
    pub fn write_utilization_csv<W: Write>(&self, out: W) -> Result<(), MapError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["core", "chip", "neurons", "blocks", "fill"])?;
        for c in self.utilization().cores {
            w.write_record([
                c.core.to_string(),
                c.chip.to_string(),
                c.neurons.to_string(),
                c.blocks.to_string(),
                format!("{:.6}", c.fill),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Per-layer CSV with header `layer,kind,neurons,blocks`.
    pub fn write_layer_csv<W: Write>(&self, out: W) -> Result<(), MapError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "kind", "neurons", "blocks"])?;
        for l in self.utilization().layers {
            w.write_record([l.layer.to_string(), l.kind, l.neurons.to_string(), l.blocks.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
