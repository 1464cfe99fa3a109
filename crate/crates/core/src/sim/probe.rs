use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::network::{Network, SpikeState};
use super::SimError;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Population indices to watch; all of them when absent.
    #[serde(default)]
    pub populations: Option<Vec<usize>>,
    #[serde(default = "default_sample")]
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_voltage: bool,
}

fn default_sample() -> usize {
    50
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            populations: None,
            sample_size: default_sample(),
            seed: 0,
            record_voltage: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeLayer {
    pub population: usize,
    /// Sampled neuron indices, ascending.
    pub neurons: Vec<usize>,
    /// Per step, positions in `neurons` that spiked.
    pub spikes: Vec<Vec<usize>>,
    /// Per step, the voltage of each sampled neuron (when recorded).
    pub voltage: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    pub dt: f64,
    pub layers: Vec<ProbeLayer>,
    record_voltage: bool,
}

impl ProbeTrace {
    pub(crate) fn new(net: &Network, config: &ProbeConfig, dt: f64) -> Self {
        let all: Vec<usize> = (0..net.populations().len()).collect();
        let pops = config.populations.clone().unwrap_or(all);
        let layers = pops
            .into_iter()
            .filter(|&p| p < net.populations().len())
            .map(|p| {
                let n = net.populations()[p].len();
                let mut r = rng::seeded(rng::derive_seed(config.seed, p as u64));
                let mut neurons = if n <= config.sample_size {
                    (0..n).collect()
                } else {
                    sample(&mut r, n, config.sample_size).into_vec()
                };
                neurons.sort_unstable();
                ProbeLayer {
                    population: p,
                    neurons,
                    spikes: Vec::new(),
                    voltage: Vec::new(),
                }
            })
            .collect();
        Self {
            dt,
            layers,
            record_voltage: config.record_voltage,
        }
    }

    pub(crate) fn record(&mut self, state: &SpikeState) {
        for l in &mut self.layers {
            let fired = &state.spikes[l.population];
            let hits = l
                .neurons
                .iter()
                .enumerate()
                .filter(|(_, &n)| fired.binary_search(&(n as u32)).is_ok())
                .map(|(j, _)| j)
                .collect();
            l.spikes.push(hits);
            if self.record_voltage {
                let v = &state.v[l.population];
                l.voltage.push(l.neurons.iter().map(|&n| v[n]).collect());
            }
        }
    }

    pub fn steps(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spikes.len())
    }
}

/// Spike raster of the sampled neurons: one row per probed layer, one
/// column per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub dt: f64,
    pub rows: Vec<RasterRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterRow {
    pub population: usize,
    pub neurons: Vec<usize>,
    /// Per timestep, the (global) indices of sampled neurons that fired.
    pub columns: Vec<Vec<usize>>,
}

pub fn probe_raster(trace: &ProbeTrace) -> Raster {
    Raster {
        dt: trace.dt,
        rows: trace
            .layers
            .iter()
            .map(|l| RasterRow {
                population: l.population,
                neurons: l.neurons.clone(),
                columns: l.spikes.iter().map(|s| s.iter().map(|&j| l.neurons[j]).collect()).collect(),
            })
            .collect(),
    }
}

impl Raster {
    pub fn spike_count(&self) -> usize {
        self.rows.iter().flat_map(|r| &r.columns).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.spike_count() == 0
    }

    /// Spikes per sampled neuron per step.
    pub fn density(&self) -> f64 {
        let cells: usize = self.rows.iter().map(|r| r.neurons.len() * r.columns.len()).sum();
        if cells == 0 {
            0.0
        } else {
            self.spike_count() as f64 / cells as f64
        }
    }

    /// CSV with header `t_ms,layer,neuron,spike`, one row per spike.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_ms", "layer", "neuron", "spike"])?;
        let steps = self.rows.iter().map(|r| r.columns.len()).max().unwrap_or(0);
        for t in 0..steps {
            let t_ms = ((t + 1) as f64 * self.dt * 1e3).to_string();
            for r in &self.rows {
                for n in r.columns.get(t).into_iter().flatten() {
                    w.write_record([t_ms.as_str(), &r.population.to_string(), &n.to_string(), "1"])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
