use std::io::Write;

use serde::{Deserialize, Serialize};

use super::network::{Network, SpikeState};
use super::probe::{ProbeConfig, ProbeTrace};
use super::SimError;
use crate::tensor::{argmax, softmax, Tensor};
use crate::train::Example;

/// How readout input is averaged into logits at each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Decode {
    /// Spikes over the trailing `ms` milliseconds.
    Trailing { ms: f64 },
    /// Every spike since stimulus onset.
    Cumulative,
}

impl Default for Decode {
    fn default() -> Self {
        Decode::Trailing { ms: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Exposure time per image.
    pub window_ms: f64,
    #[serde(default)]
    pub decode: Decode,
    /// Initial membrane voltage of every unit. Half the threshold makes
    /// spike counts round rather than truncate the ideal rate.
    #[serde(default = "default_v_init")]
    pub v_init: f64,
    /// Lower clamp on membrane voltage; unbounded when absent.
    #[serde(default)]
    pub v_min: Option<f64>,
    /// An output counts as decided once its argmax has held this long.
    #[serde(default = "default_stable_ms")]
    pub stable_ms: f64,
    #[serde(default)]
    pub probes: Option<ProbeConfig>,
}

fn default_stable_ms() -> f64 {
    5.0
}

fn default_v_init() -> f64 {
    0.5
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            window_ms: 50.0,
            decode: Decode::default(),
            v_init: default_v_init(),
            v_min: None,
            stable_ms: default_stable_ms(),
            probes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub dt: f64,
    /// Class probabilities after every step; uniform before the readout has
    /// received any spike.
    pub probabilities: Vec<Vec<f64>>,
    /// Decoded logits at the final step.
    pub logits: Vec<f64>,
    /// `None` when the readout never received a spike.
    pub label: Option<usize>,
    /// Steps from stimulus onset until the output settled on `label` for
    /// good; `None` when undecided.
    pub delay_steps: Option<usize>,
    pub spike_counts: Vec<u64>,
    pub synaptic_events: u64,
    pub neuron_updates: u64,
    pub probe: Option<ProbeTrace>,
}

impl InferenceResult {
    pub fn steps(&self) -> usize {
        self.probabilities.len()
    }

    pub fn delay_ms(&self) -> Option<f64> {
        self.delay_steps.map(|s| s as f64 * self.dt * 1e3)
    }

    pub fn undecided(&self) -> bool {
        self.label.is_none()
    }

    /// Spikes emitted by on-chip populations (everything but the encoder).
    pub fn hidden_spikes(&self) -> u64 {
        self.spike_counts.iter().skip(1).sum()
    }

    /// CSV with header `t_ms,class,probability`.
    pub fn write_probability_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_ms", "class", "probability"])?;
        for (t, p) in self.probabilities.iter().enumerate() {
            let t_ms = ((t + 1) as f64 * self.dt * 1e3).to_string();
            for (c, v) in p.iter().enumerate() {
                w.write_record([t_ms.as_str(), &c.to_string(), &v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn steps_for(window_ms: f64, dt: f64) -> Result<usize, SimError> {
    let steps = (window_ms * 1e-3 / dt + 1e-9).floor();
    if !(steps >= 1.0) {
        return Err(SimError::Window { window_ms, dt });
    }
    Ok(steps as usize)
}

struct Decoder {
    prefix: Vec<Vec<f64>>,
    first_input: Option<usize>,
    window: Option<usize>,
    scale: f64,
    bias: Vec<f64>,
}

impl Decoder {
    fn new(net: &Network, decode: Decode) -> Result<Self, SimError> {
        let window = match decode {
            Decode::Cumulative => None,
            Decode::Trailing { ms } => Some(steps_for(ms, net.dt())?),
        };
        let classes = net.classes();
        Ok(Self {
            prefix: vec![vec![0.0; classes]],
            first_input: None,
            window,
            scale: net.readout_scale(),
            bias: net.readout.as_ref().map(|r| r.bias.clone()).unwrap_or_default(),
        })
    }

    /// Records the step's readout input; returns (logits, probabilities).
    fn push(&mut self, state: &SpikeState, onset_spikes: u64) -> (Vec<f64>, Vec<f64>) {
        let t = self.prefix.len() - 1;
        let last = self.prefix[t].clone();
        self.prefix.push(last.iter().zip(&state.readout_in).map(|(a, b)| a + b).collect());
        if self.first_input.is_none() && state.readout_spikes > onset_spikes {
            self.first_input = Some(t);
        }
        let classes = self.bias.len();
        if self.first_input.is_none() {
            return (self.bias.clone(), vec![1.0 / classes as f64; classes]);
        }
        let end = t + 1;
        let start = self.window.map_or(0, |w| end.saturating_sub(w));
        let n = (end - start) as f64;
        let logits: Vec<f64> = (0..classes)
            .map(|c| self.scale * (self.prefix[end][c] - self.prefix[start][c]) / n + self.bias[c])
            .collect();
        let p = softmax(&logits).expect("at least one class");
        (logits, p)
    }
}

fn settle(probabilities: &[Vec<f64>], decided_from: Option<usize>, stable_steps: usize) -> (Option<usize>, Option<usize>) {
    let Some(first) = decided_from else { return (None, None) };
    let labels: Vec<usize> = probabilities.iter().map(|p| argmax(p)).collect();
    let label = *labels.last().expect("at least one step");
    let mut since = labels.len();
    while since > first && labels[since - 1] == label {
        since -= 1;
    }
    let held = labels.len() - since;
    let delay = (held >= stable_steps).then_some(since + 1);
    (Some(label), delay)
}

/// Runs consecutive images through one network without resetting state
/// between them, as in a continuous stream of frames.
pub fn run_sequence(net: &Network, images: &[Tensor], config: &SimConfig) -> Result<Vec<InferenceResult>, SimError> {
    if net.classes() == 0 {
        return Err(SimError::Unsupported("network has no readout".into()));
    }
    let steps = steps_for(config.window_ms, net.dt())?;
    let stable_steps = steps_for(config.stable_ms, net.dt()).unwrap_or(1);
    let mut state = SpikeState::new(net, config.v_init, config.v_min);
    let mut results = Vec::with_capacity(images.len());
    for image in images {
        let base_counts = state.counts.clone();
        let base_events = state.total_synaptic_events();
        let base_updates: u64 = state.neuron_updates.iter().sum();
        let onset_spikes = state.readout_spikes;
        let mut decoder = Decoder::new(net, config.decode)?;
        let mut probe = config.probes.as_ref().map(|p| ProbeTrace::new(net, p, net.dt()));
        let mut probabilities = Vec::with_capacity(steps);
        let mut logits = Vec::new();
        for _ in 0..steps {
            net.step(&mut state, image)?;
            let (l, p) = decoder.push(&state, onset_spikes);
            probabilities.push(p);
            logits = l;
            if let Some(pr) = probe.as_mut() {
                pr.record(&state);
            }
        }
        let (label, delay_steps) = settle(&probabilities, decoder.first_input, stable_steps.min(steps));
        results.push(InferenceResult {
            dt: net.dt(),
            probabilities,
            logits,
            label,
            delay_steps,
            spike_counts: state.counts.iter().zip(&base_counts).map(|(a, b)| a - b).collect(),
            synaptic_events: state.total_synaptic_events() - base_events,
            neuron_updates: state.neuron_updates.iter().sum::<u64>() - base_updates,
            probe,
        });
    }
    Ok(results)
}

/// Presents one image for `config.window_ms` starting from a fresh state.
pub fn run_inference(net: &Network, image: &Tensor, config: &SimConfig) -> Result<InferenceResult, SimError> {
    Ok(run_sequence(net, std::slice::from_ref(image), config)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub samples: usize,
    pub correct: usize,
    pub undecided: usize,
    /// Correct over all samples; undecided samples count as wrong.
    pub accuracy: f64,
    /// `confusion[true][predicted]`; undecided samples are not included.
    pub confusion: Vec<Vec<usize>>,
    pub mean_spike_counts: Vec<f64>,
    pub mean_hidden_spikes: f64,
    pub mean_synaptic_events: f64,
    pub mean_neuron_updates: f64,
    /// Mean over decided samples.
    pub mean_delay_ms: Option<f64>,
}

/// Simulates every example from a fresh state and aggregates in input order.
pub fn evaluate(net: &Network, data: &[Example], config: &SimConfig) -> Result<Evaluation, SimError> {
    if data.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    let classes = net.classes();
    let mut confusion = vec![vec![0; classes]; classes];
    let mut correct = 0;
    let mut undecided = 0;
    let mut spikes = vec![0.0; net.populations().len()];
    let (mut hidden, mut events, mut updates) = (0.0, 0.0, 0.0);
    let mut delays = Vec::new();
    let config = SimConfig {
        probes: None,
        ..config.clone()
    };
    for e in data {
        if e.label >= classes {
            return Err(SimError::Label { label: e.label, classes });
        }
        let r = run_inference(net, &e.input, &config)?;
        match r.label {
            Some(l) => {
                confusion[e.label][l] += 1;
                correct += usize::from(l == e.label);
            }
            None => undecided += 1,
        }
        if let Some(d) = r.delay_ms() {
            delays.push(d);
        }
        for (s, c) in spikes.iter_mut().zip(&r.spike_counts) {
            *s += *c as f64;
        }
        hidden += r.hidden_spikes() as f64;
        events += r.synaptic_events as f64;
        updates += r.neuron_updates as f64;
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        samples: data.len(),
        correct,
        undecided,
        accuracy: correct as f64 / n,
        confusion,
        mean_spike_counts: spikes.iter().map(|s| s / n).collect(),
        mean_hidden_spikes: hidden / n,
        mean_synaptic_events: events / n,
        mean_neuron_updates: updates / n,
        mean_delay_ms: (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64),
    })
}
