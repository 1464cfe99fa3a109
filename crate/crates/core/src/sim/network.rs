use crate::model::{Activation, Layer, LayerGraph, Reset, SpikingActivation, V_THRESHOLD};
use crate::tensor::{ConvLayer, DenseLayer, Tensor};

use super::SimError;

/// Spikes whose membrane lands this close below threshold still fire, so
/// that e.g. ten steps of 0.1 reach threshold despite rounding.
const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Synapse {
    Conv {
        kernel: Vec<f64>,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad_top: usize,
        pad_left: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
    Dense {
        weights: Vec<f64>,
        cout: usize,
    },
}

impl Synapse {
    fn from_conv(c: &ConvLayer, in_shape: &[usize]) -> Result<Self, SimError> {
        let (h, w) = (in_shape[0], in_shape[1]);
        let (pad_top, pad_left) = c.padding_offsets(h, w)?;
        let [out_h, out_w, _] = c.output_shape(in_shape)?;
        Ok(Synapse::Conv {
            kernel: c.kernel().data().to_vec(),
            kh: c.kh(),
            kw: c.kw(),
            cin: c.cin(),
            cout: c.cout(),
            stride: c.stride(),
            pad_top,
            pad_left,
            in_w: w,
            out_h,
            out_w,
        })
    }

    fn from_dense(d: &DenseLayer) -> Self {
        Synapse::Dense {
            weights: d.weights().data().to_vec(),
            cout: d.cout(),
        }
    }

    /// Output positions along one axis fed by input coordinate `i`, paired
    /// with the kernel tap that connects them.
    fn taps(i: usize, pad: usize, k: usize, stride: usize, n_out: usize) -> impl Iterator<Item = (usize, usize)> {
        let shifted = i + pad;
        let lo = (shifted + 1).saturating_sub(k).div_ceil(stride);
        let hi = (shifted / stride).min(n_out.saturating_sub(1));
        (lo..=hi).map(move |o| (o, shifted - o * stride))
    }

    /// Adds `scale · W[src, :]` into `target` and returns the number of
    /// synaptic events (targets reached).
    fn scatter(&self, src: usize, scale: f64, target: &mut [f64]) -> u64 {
        match self {
            Synapse::Dense { weights, cout } => {
                let row = &weights[src * cout..][..*cout];
                for (t, w) in target.iter_mut().zip(row) {
                    *t += scale * w;
                }
                *cout as u64
            }
            Synapse::Conv {
                kernel,
                kh,
                kw,
                cin,
                cout,
                stride,
                pad_top,
                pad_left,
                in_w,
                out_h,
                out_w,
            } => {
                let c = src % cin;
                let pos = src / cin;
                let (y, x) = (pos / in_w, pos % in_w);
                let mut events = 0;
                for (oy, ky) in Self::taps(y, *pad_top, *kh, *stride, *out_h) {
                    for (ox, kx) in Self::taps(x, *pad_left, *kw, *stride, *out_w) {
                        let row = &kernel[((ky * kw + kx) * cin + c) * cout..][..*cout];
                        let dst = &mut target[(oy * out_w + ox) * cout..][..*cout];
                        for (t, w) in dst.iter_mut().zip(row) {
                            *t += scale * w;
                        }
                        events += *cout as u64;
                    }
                }
                events
            }
        }
    }

    fn fan_out(&self, src: usize) -> u64 {
        match self {
            Synapse::Dense { cout, .. } => *cout as u64,
            Synapse::Conv {
                kh,
                kw,
                cin,
                cout,
                stride,
                pad_top,
                pad_left,
                in_w,
                out_h,
                out_w,
                ..
            } => {
                let pos = src / cin;
                let (y, x) = (pos / in_w, pos % in_w);
                let ny = Self::taps(y, *pad_top, *kh, *stride, *out_h).count();
                let nx = Self::taps(x, *pad_left, *kw, *stride, *out_w).count();
                (ny * nx * cout) as u64
            }
        }
    }
}

/// One group of spiking units that share an activation and an input layer.
#[derive(Debug, Clone)]
pub struct Population {
    /// Index of the graph layer whose output this population represents.
    pub layer: usize,
    pub shape: Vec<usize>,
    pub activation: SpikingActivation,
    pub on_chip: bool,
    bias_drive: Vec<f64>,
    input: Option<(Synapse, f64)>,
    encoder: Option<(Vec<f64>, usize, usize)>,
    refractory_steps: u32,
    decay: f64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.bias_drive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bias_drive.is_empty()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Readout {
    synapse: Synapse,
    scale: f64,
    pub(crate) bias: Vec<f64>,
}

/// A spiking graph compiled for clock-driven simulation.
#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) pops: Vec<Population>,
    pub(crate) readout: Option<Readout>,
    input_shape: Vec<usize>,
    dt: f64,
}

fn bias_per_neuron(bias: &[f64], n: usize, drive: f64) -> Vec<f64> {
    let c = bias.len();
    (0..n).map(|i| drive * bias[i % c]).collect()
}

impl Network {
    pub fn compile(graph: &LayerGraph) -> Result<Self, SimError> {
        graph.check_deployable()?;
        let layers = graph.layers();
        let mut pops: Vec<Population> = Vec::new();
        let mut pending: Option<(usize, &Layer)> = None;
        let mut dt = None;
        let mut check_dt = |a: &SpikingActivation| -> Result<(), SimError> {
            match dt {
                None => dt = Some(a.dt),
                Some(d) if (d - a.dt).abs() > 1e-15 => {
                    return Err(SimError::Unsupported(format!("mixed timesteps {d} and {}", a.dt)))
                }
                _ => {}
            }
            Ok(())
        };
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Encoder(e) => {
                    check_dt(&e.activation)?;
                    let n = graph.shape(i).iter().product();
                    let a = e.activation;
                    pops.push(Population {
                        layer: i,
                        shape: graph.shape(i).to_vec(),
                        activation: a,
                        on_chip: !e.off_chip(),
                        bias_drive: bias_per_neuron(e.conv.bias(), n, a.gain * a.dt),
                        input: None,
                        encoder: Some((e.conv.kernel().data().to_vec(), e.conv.cin(), e.conv.cout())),
                        refractory_steps: refractory(&a),
                        decay: decay(&a),
                    });
                }
                Layer::Flatten => {}
                Layer::Conv(_) | Layer::Dense(_) => {
                    if pending.is_some() {
                        return Err(SimError::Unsupported(format!("layer {i}: two linear layers without an activation between them")));
                    }
                    pending = Some((i, layer));
                }
                Layer::Activation(Activation::Spiking(a)) => {
                    check_dt(a)?;
                    let (li, linear) = pending
                        .take()
                        .ok_or_else(|| SimError::Unsupported(format!("layer {i}: activation without an input layer")))?;
                    let prev = pops.last().expect("encoder comes first");
                    let scale = a.gain * prev.activation.amplitude / prev.activation.gain;
                    let n = graph.shape(i).iter().product();
                    let (synapse, bias) = match linear {
                        Layer::Conv(c) => (Synapse::from_conv(c, graph.input_shape_of(li))?, c.bias()),
                        Layer::Dense(d) => (Synapse::from_dense(d), d.bias()),
                        _ => unreachable!(),
                    };
                    pops.push(Population {
                        layer: i,
                        shape: graph.shape(i).to_vec(),
                        activation: *a,
                        on_chip: true,
                        bias_drive: bias_per_neuron(bias, n, a.gain * a.dt),
                        input: Some((synapse, scale)),
                        encoder: None,
                        refractory_steps: refractory(a),
                        decay: decay(a),
                    });
                }
                Layer::Softmax => {}
                other => return Err(SimError::Unsupported(format!("layer {i}: '{}' cannot be simulated", other.kind()))),
            }
        }
        let readout = match pending {
            None => None,
            Some((_, Layer::Dense(d))) => {
                let prev = pops.last().expect("encoder comes first");
                Some(Readout {
                    synapse: Synapse::from_dense(d),
                    scale: prev.activation.amplitude / (prev.activation.gain * prev.activation.dt),
                    bias: d.bias().to_vec(),
                })
            }
            Some((i, _)) => return Err(SimError::Unsupported(format!("layer {i}: readout must be a dense layer"))),
        };
        Ok(Self {
            pops,
            readout,
            input_shape: graph.input_shape().to_vec(),
            dt: dt.expect("encoder present"),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn populations(&self) -> &[Population] {
        &self.pops
    }

    pub fn classes(&self) -> usize {
        self.readout.as_ref().map_or(0, |r| r.bias.len())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Number of synapses leaving `neuron` of population `pop`.
    pub fn fan_out(&self, pop: usize, neuron: usize) -> u64 {
        match self.pops.get(pop + 1) {
            Some(next) => next.input.as_ref().map_or(0, |(s, _)| s.fan_out(neuron)),
            None => self.readout.as_ref().map_or(0, |r| r.synapse.fan_out(neuron)),
        }
    }

    /// Advances `state` by one timestep with `frame` presented to the encoder.
    pub fn step(&self, state: &mut SpikeState, frame: &Tensor) -> Result<(), SimError> {
        if frame.shape() != self.input_shape.as_slice() {
            return Err(SimError::InputShape {
                expected: self.input_shape.clone(),
                found: frame.shape().to_vec(),
            });
        }
        let mut fired: Vec<Vec<u32>> = Vec::with_capacity(self.pops.len());
        for (k, pop) in self.pops.iter().enumerate() {
            let mut current = pop.bias_drive.clone();
            if let Some((kernel, cin, cout)) = &pop.encoder {
                let gdt = pop.activation.gain * pop.activation.dt;
                for (pix, out) in frame.data().chunks_exact(*cin).zip(current.chunks_exact_mut(*cout)) {
                    for (ci, &p) in pix.iter().enumerate() {
                        if p != 0.0 {
                            for (o, w) in out.iter_mut().zip(&kernel[ci * cout..][..*cout]) {
                                *o += gdt * w * p;
                            }
                        }
                    }
                }
            }
            if let Some((syn, scale)) = &pop.input {
                for &s in &state.spikes[k - 1] {
                    state.synaptic_events[k] += syn.scatter(s as usize, *scale, &mut current);
                }
            }
            let v = &mut state.v[k];
            let refr = &mut state.refractory[k];
            let mut out = Vec::new();
            for (i, (vi, c)) in v.iter_mut().zip(&current).enumerate() {
                *vi = *vi * pop.decay + c;
                if refr[i] > 0 {
                    refr[i] -= 1;
                } else if *vi >= V_THRESHOLD - THRESHOLD_EPS {
                    out.push(i as u32);
                    match pop.activation.reset {
                        Reset::Subtract => *vi -= V_THRESHOLD,
                        Reset::Zero => *vi = 0.0,
                    }
                    refr[i] = pop.refractory_steps;
                }
                *vi = vi.clamp(state.v_min, V_THRESHOLD);
            }
            if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
                return Err(SimError::NonFinite { population: k, neuron: bad });
            }
            state.neuron_updates[k] += pop.len() as u64;
            state.counts[k] += out.len() as u64;
            fired.push(out);
        }
        state.readout_in.iter_mut().for_each(|x| *x = 0.0);
        if let Some(r) = &self.readout {
            let last = self.pops.len() - 1;
            for &s in &state.spikes[last] {
                state.readout_events += r.synapse.scatter(s as usize, 1.0, &mut state.readout_in);
            }
            state.readout_spikes += state.spikes[last].len() as u64;
        }
        state.spikes = fired;
        state.t += 1;
        Ok(())
    }

    pub(crate) fn readout_scale(&self) -> f64 {
        self.readout.as_ref().map_or(0.0, |r| r.scale)
    }
}

fn refractory(a: &SpikingActivation) -> u32 {
    let per_step = a.max_rate * a.dt;
    if per_step >= 1.0 - 1e-9 {
        0
    } else {
        ((1.0 / per_step).round() as u32).saturating_sub(1)
    }
}

fn decay(a: &SpikingActivation) -> f64 {
    a.tau_rc.map_or(1.0, |tau| (-a.dt / tau).exp())
}

/// Membrane voltages and the spikes emitted in the most recent step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeState {
    pub t: usize,
    pub dt: f64,
    pub v: Vec<Vec<f64>>,
    refractory: Vec<Vec<u32>>,
    /// Indices of the neurons that fired in the last step, per population.
    pub spikes: Vec<Vec<u32>>,
    /// Cumulative spike count per population.
    pub counts: Vec<u64>,
    /// Cumulative synaptic events delivered into each population.
    pub synaptic_events: Vec<u64>,
    pub neuron_updates: Vec<u64>,
    pub readout_events: u64,
    /// Spikes delivered to the readout so far.
    pub readout_spikes: u64,
    /// This step's readout input `W·s` (unscaled).
    pub readout_in: Vec<f64>,
    v_min: f64,
}

impl SpikeState {
    pub fn new(net: &Network, v_init: f64, v_min: Option<f64>) -> Self {
        let n = net.pops.len();
        Self {
            t: 0,
            dt: net.dt,
            v: net.pops.iter().map(|p| vec![v_init; p.len()]).collect(),
            refractory: net.pops.iter().map(|p| vec![0; p.len()]).collect(),
            spikes: vec![Vec::new(); n],
            counts: vec![0; n],
            synaptic_events: vec![0; n],
            neuron_updates: vec![0; n],
            readout_events: 0,
            readout_spikes: 0,
            readout_in: vec![0.0; net.classes()],
            v_min: v_min.unwrap_or(f64::NEG_INFINITY),
        }
    }

    pub fn total_synaptic_events(&self) -> u64 {
        self.synaptic_events.iter().sum::<u64>() + self.readout_events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderLayer, Flavor};
    use crate::tensor::Padding;

    fn single_neuron(gain: f64) -> Network {
        let conv = ConvLayer::new(Tensor::filled(&[1, 1, 1, 1], 1.0), vec![0.0], 1, Padding::Same).unwrap();
        let act = SpikingActivation { gain, ..SpikingActivation::default() };
        let g = LayerGraph::new(vec![1, 1, 1], vec![Layer::Encoder(EncoderLayer::new(conv, act).unwrap())], Flavor::Snn).unwrap();
        Network::compile(&g).unwrap()
    }

    fn spike_steps(net: &Network, pixel: f64, steps: usize) -> Vec<usize> {
        let mut s = SpikeState::new(net, 0.0, None);
        let frame = Tensor::filled(&[1, 1, 1], pixel);
        let mut out = Vec::new();
        for t in 1..=steps {
            net.step(&mut s, &frame).unwrap();
            if !s.spikes[0].is_empty() {
                out.push(t);
            }
        }
        out
    }

    #[test]
    fn half_threshold_drive_fires_every_other_step() {
        // gain 500 Hz × 1 ms × pixel 1 = 0.5 per step.
        assert_eq!(spike_steps(&single_neuron(500.0), 1.0, 10), vec![2, 4, 6, 8, 10]);
    }

    #[test]
    fn near_threshold_drive_matches_floor_count() {
        let net = single_neuron(999.0);
        let spikes = spike_steps(&net, 1.0, 3000);
        assert_eq!(spikes[0], 2);
        for t in [10, 999, 1000, 1001, 2500, 3000] {
            let count = spikes.iter().filter(|&&s| s <= t).count();
            assert_eq!(count, (t as f64 * 0.999 + 1e-9).floor() as usize, "t = {t}");
        }
    }

    #[test]
    fn encoder_pixel_one_fires_at_one_tenth() {
        let spikes = spike_steps(&single_neuron(100.0), 1.0, 100);
        assert_eq!(spikes, (1..=10).map(|k| 10 * k).collect::<Vec<_>>());
        assert!(spike_steps(&single_neuron(100.0), 0.0, 100).is_empty());
    }

    #[test]
    fn saturates_at_one_spike_per_step() {
        let spikes = spike_steps(&single_neuron(100.0), 1e6, 20);
        assert_eq!(spikes, (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn lower_max_rate_adds_refractory_steps() {
        let conv = ConvLayer::new(Tensor::filled(&[1, 1, 1, 1], 1.0), vec![0.0], 1, Padding::Same).unwrap();
        let act = SpikingActivation { max_rate: 250.0, ..SpikingActivation::default() };
        let g = LayerGraph::new(vec![1, 1, 1], vec![Layer::Encoder(EncoderLayer::new(conv, act).unwrap())], Flavor::Snn).unwrap();
        let spikes = spike_steps(&Network::compile(&g).unwrap(), 1e6, 20);
        assert_eq!(spikes, vec![1, 5, 9, 13, 17]);
    }

    #[test]
    fn conv_taps_match_a_dense_reference() {
        // Scattering every input one-hot must rebuild the convolution.
        let k = Tensor::new(vec![3, 3, 2, 3], (0..54).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        for (stride, pad) in [(1, Padding::Same), (2, Padding::Valid), (2, Padding::Same), (1, Padding::Valid)] {
            let c = ConvLayer::new(k.clone(), vec![0.0; 3], stride, pad).unwrap();
            let in_shape = [7, 6, 2];
            let syn = Synapse::from_conv(&c, &in_shape).unwrap();
            let x = Tensor::new(in_shape.to_vec(), (0..84).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
            let reference = crate::tensor::conv2d_forward(&x, &c).unwrap();
            let mut acc = vec![0.0; reference.len()];
            for (i, &v) in x.data().iter().enumerate() {
                let ev = syn.scatter(i, v, &mut acc);
                assert_eq!(ev, syn.fan_out(i));
            }
            for (a, b) in acc.iter().zip(reference.data()) {
                assert!((a - b).abs() < 1e-12, "{stride} {pad:?}");
            }
        }
    }
}
