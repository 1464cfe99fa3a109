//! ANN → SNN conversion: pooling becomes strided convolution, ReLU becomes
//! an integrate-and-fire rate unit, an off-chip encoder is prepended, and
//! the result is fine-tuned in rate mode.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{avg_pool_conv, Activation, EncoderLayer, Flavor, Layer, LayerGraph, ModelError, SpikingActivation};
use crate::tensor::{ConvLayer, Padding, Tensor};
use crate::train::{self, Example, History, TrainConfig, TrainError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvertError {
    #[error("expected a conventional (ann) graph, got a spiking one")]
    NotAnn,
    #[error("expected a spiking (snn) graph")]
    NotSnn,
    #[error("layer {layer}: pooling {detail} cannot be rewritten (only 2x2 stride 2 is supported)")]
    UnsupportedPool { layer: usize, detail: String },
    #[error("layer {layer}: activation '{kind}' has no spiking equivalent")]
    UnsupportedActivation { layer: usize, kind: &'static str },
    #[error("graph already has an encoder")]
    DuplicateEncoder,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvertConfig {
    /// Activation used for hidden units and the encoder alike.
    #[serde(default)]
    pub activation: SpikingActivation,
    pub finetune: TrainConfig,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self {
            activation: SpikingActivation::default(),
            finetune: TrainConfig {
                epochs: 3,
                lr: 0.005,
                ..TrainConfig::default()
            },
        }
    }
}

/// Replaces every 2×2 stride-2 pooling layer with a 2×2 stride-2 convolution
/// initialised to average pooling. When the pooled input came from a ReLU, a
/// ReLU is inserted after the convolution so that every convolution feeds an
/// activation; on non-negative inputs it is the identity.
pub fn rewrite_pooling(graph: &LayerGraph) -> Result<LayerGraph, ConvertError> {
    if graph.flavor() != Flavor::Ann {
        return Err(ConvertError::NotAnn);
    }
    if !graph.layers().iter().any(|l| matches!(l, Layer::Pool(_))) {
        return Ok(graph.clone());
    }
    let mut layers = Vec::with_capacity(graph.layers().len() + 4);
    for (i, layer) in graph.layers().iter().enumerate() {
        match layer {
            Layer::Pool(p) => {
                if p.size != 2 || p.stride != 2 {
                    return Err(ConvertError::UnsupportedPool {
                        layer: i,
                        detail: format!("{}x{} stride {}", p.size, p.size, p.stride),
                    });
                }
                let channels = *graph.input_shape_of(i).last().expect("feature map");
                layers.push(Layer::Conv(avg_pool_conv(channels)));
                if i > 0 && matches!(graph.layers()[i - 1], Layer::Activation(Activation::Relu)) {
                    layers.push(Layer::Activation(Activation::Relu));
                }
            }
            other => layers.push(other.clone()),
        }
    }
    Ok(LayerGraph::new(graph.input_shape().to_vec(), layers, Flavor::Ann)?)
}

/// Turns every ReLU into `activation`, yielding a spiking graph. Pooling must
/// already have been rewritten.
pub fn substitute_activations(graph: &LayerGraph, activation: SpikingActivation) -> Result<LayerGraph, ConvertError> {
    if graph.flavor() != Flavor::Ann {
        return Err(ConvertError::NotAnn);
    }
    activation.validate()?;
    let mut layers = Vec::with_capacity(graph.layers().len());
    for (i, layer) in graph.layers().iter().enumerate() {
        layers.push(match layer {
            Layer::Activation(Activation::Relu) => Layer::Activation(Activation::Spiking(activation)),
            Layer::Activation(_) => {
                return Err(ConvertError::UnsupportedActivation {
                    layer: i,
                    kind: layer.kind(),
                })
            }
            Layer::Pool(p) => {
                return Err(ConvertError::UnsupportedPool {
                    layer: i,
                    detail: format!("{}x{} stride {} still present", p.size, p.size, p.stride),
                })
            }
            other => other.clone(),
        });
    }
    Ok(LayerGraph::new(graph.input_shape().to_vec(), layers, Flavor::Snn)?)
}

/// Prepends a frozen identity 1×1 encoder (weight 1, bias 0) that turns
/// pixel intensities into spike trains.
pub fn attach_encoder(graph: &LayerGraph, activation: SpikingActivation) -> Result<LayerGraph, ConvertError> {
    if graph.flavor() != Flavor::Snn {
        return Err(ConvertError::NotSnn);
    }
    if graph.has_encoder() {
        return Err(ConvertError::DuplicateEncoder);
    }
    let channels = *graph.input_shape().last().expect("non-empty input shape");
    let mut k = vec![0.0; channels * channels];
    for c in 0..channels {
        k[c * channels + c] = 1.0;
    }
    let conv = ConvLayer::new(
        Tensor::new(vec![1, 1, channels, channels], k).map_err(ModelError::from)?,
        vec![0.0; channels],
        1,
        Padding::Same,
    )
    .map_err(ModelError::from)?;
    let mut layers = vec![Layer::Encoder(EncoderLayer::new(conv, activation)?)];
    layers.extend(graph.layers().iter().cloned());
    Ok(LayerGraph::new(graph.input_shape().to_vec(), layers, Flavor::Snn)?)
}

/// Rate-mode training of a spiking graph; the encoder stays fixed.
pub fn finetune(graph: &LayerGraph, data: &[Example], config: &TrainConfig) -> Result<(LayerGraph, History), ConvertError> {
    if graph.flavor() != Flavor::Snn {
        return Err(ConvertError::NotSnn);
    }
    if config.epochs == 0 {
        return Ok((graph.clone(), Vec::new()));
    }
    Ok(train::train(graph, data, config)?)
}

/// The full pipeline: `rewrite_pooling → substitute_activations →
/// attach_encoder → finetune`.
pub fn convert(ann: &LayerGraph, data: &[Example], config: &ConvertConfig) -> Result<(LayerGraph, History), ConvertError> {
    let rewritten = rewrite_pooling(ann)?;
    let spiking = substitute_activations(&rewritten, config.activation)?;
    let encoded = attach_encoder(&spiking, config.activation)?;
    let (out, history) = finetune(&encoded, data, &config.finetune)?;
    out.check_deployable()?;
    Ok((out, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{instantiate, Downsample, ModelSpec, PoolKind, PoolLayer};
    use crate::rng;
    use rand::Rng as _;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::seeded(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn no_training() -> ConvertConfig {
        ConvertConfig {
            activation: SpikingActivation { gain: 1.0, ..SpikingActivation::default() },
            finetune: TrainConfig { epochs: 0, ..TrainConfig::default() },
        }
    }

    #[test]
    fn strided_conv_preserves_pooled_shape() {
        let pool = Layer::Pool(PoolLayer { kind: PoolKind::Max, size: 2, stride: 2 });
        let ann = LayerGraph::new(vec![46, 46, 16], vec![pool], Flavor::Ann).unwrap();
        let rw = rewrite_pooling(&ann).unwrap();
        assert_eq!(ann.output_shape(), &[23, 23, 16]);
        assert_eq!(rw.output_shape(), &[23, 23, 16]);
        assert!(matches!(rw.layers()[0], Layer::Conv(_)));
    }

    #[test]
    fn pool_free_graph_is_untouched() {
        let mut spec = ModelSpec::preset("pi").unwrap();
        spec.downsample = Downsample::StridedConv;
        let g = instantiate(&spec, 1).unwrap();
        assert_eq!(rewrite_pooling(&g).unwrap(), g);
    }

    #[test]
    fn average_init_reproduces_average_pooling() {
        let mut spec = ModelSpec::preset("pi").unwrap();
        spec.downsample = Downsample::AvgPool;
        let g = instantiate(&spec, 5).unwrap();
        let rw = rewrite_pooling(&g).unwrap();
        let x = random_input(&[48, 48, 1], 2);
        let (a, b) = (g.logits(&x).unwrap(), rw.logits(&x).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_gain_rate_mode_equals_the_rewritten_ann() {
        let g = instantiate(&ModelSpec::preset("loihi").unwrap(), 8).unwrap();
        let rw = rewrite_pooling(&g).unwrap();
        let (snn, _) = convert(&g, &[], &no_training()).unwrap();
        let x = random_input(&[48, 48, 1], 3);
        assert_eq!(snn.logits(&x).unwrap(), rw.logits(&x).unwrap());
        // Per-layer extents line up after skipping the encoder.
        for i in 0..rw.layers().len() {
            assert_eq!(snn.shape(i + 1), rw.shape(i));
        }
    }

    #[test]
    fn doubled_gain_is_compensated_by_halved_readout() {
        let g = rewrite_pooling(&instantiate(&ModelSpec::preset("pi").unwrap(), 2).unwrap()).unwrap();
        let base = SpikingActivation { gain: 1.0, ..SpikingActivation::default() };
        let doubled = SpikingActivation { gain: 2.0, ..base };
        let s1 = substitute_activations(&g, base).unwrap();
        let s2 = substitute_activations(&g, doubled).unwrap();
        let x = random_input(&[48, 48, 1], 9);
        let (a1, a2) = (s1.activations(&x).unwrap(), s2.activations(&x).unwrap());
        let last_hidden = s1.layers().len() - 3;
        let rates1: Vec<f64> = a1[last_hidden].data().iter().map(|&v| base.rate(v)).collect();
        let rates2: Vec<f64> = a2[last_hidden].data().iter().map(|&v| doubled.rate(v)).collect();
        for (r1, r2) in rates1.iter().zip(&rates2) {
            assert!((r2 - 2.0 * r1).abs() <= 1e-9 * r1.abs().max(1.0));
        }
        let Layer::Dense(readout) = &s1.layers()[last_hidden + 1] else { panic!("readout") };
        let logits = |rates: &[f64], scale: f64| -> Vec<f64> {
            (0..readout.cout())
                .map(|o| {
                    readout.bias()[o]
                        + rates.iter().enumerate().map(|(i, r)| scale * r * readout.weights().data()[i * readout.cout() + o]).sum::<f64>()
                })
                .collect()
        };
        let (l1, l2) = (logits(&rates1, 1.0), logits(&rates2, 0.5));
        assert_eq!(crate::tensor::argmax(&l1), crate::tensor::argmax(&l2));
    }

    #[test]
    fn tanh_is_rejected() {
        let d = crate::tensor::DenseLayer::new(Tensor::zeros(&[3, 2]), vec![0.0; 2]).unwrap();
        let g = LayerGraph::new(vec![3], vec![Layer::Dense(d), Layer::Activation(Activation::Tanh)], Flavor::Ann).unwrap();
        assert_eq!(
            substitute_activations(&g, SpikingActivation::default()),
            Err(ConvertError::UnsupportedActivation { layer: 1, kind: "tanh" })
        );
    }

    #[test]
    fn loihi_spec_converts_to_the_deployed_sequence() {
        let g = instantiate(&ModelSpec::preset("loihi").unwrap(), 0).unwrap();
        let (snn, _) = convert(&g, &[], &ConvertConfig { finetune: TrainConfig { epochs: 0, ..TrainConfig::default() }, ..ConvertConfig::default() }).unwrap();
        let kinds: Vec<_> = snn.layers().iter().map(Layer::kind).collect();
        let block = ["conv", "spiking", "conv", "spiking", "conv", "spiking"];
        let mut expected = vec!["encoder"];
        for _ in 0..3 {
            expected.extend(block);
        }
        expected.extend(["flatten", "dense", "spiking", "dense", "spiking", "dense", "softmax"]);
        assert_eq!(kinds, expected);
        assert_eq!(snn.output_shape(), &[7]);
        assert_eq!(snn.shape(snn.layers().len() - 8), &[6, 6, 48]);
        snn.check_deployable().unwrap();
        assert!(matches!(convert(&snn, &[], &ConvertConfig::default()), Err(ConvertError::NotAnn)));
    }

    #[test]
    fn encoder_rates_follow_the_closed_form() {
        let act = SpikingActivation::default();
        let g = substitute_activations(
            &LayerGraph::new(vec![2, 2, 1], vec![Layer::Flatten], Flavor::Ann).unwrap(),
            act,
        )
        .unwrap();
        let enc = attach_encoder(&g, act).unwrap();
        assert!(matches!(attach_encoder(&enc, act), Err(ConvertError::DuplicateEncoder)));
        let x = Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 0.5, 30.0]).unwrap();
        let out = enc.activations(&x).unwrap()[0].clone();
        let rates: Vec<f64> = out.data().iter().map(|&v| act.rate(v / act.amplitude)).collect();
        assert_eq!(rates, vec![0.0, 100.0, 50.0, 1000.0]);
        let Layer::Encoder(e) = &enc.layers()[0] else { panic!() };
        assert!(e.off_chip());
        assert!(!enc.layers()[0].trainable());
    }

    #[test]
    fn zero_epoch_finetune_is_identity() {
        let g = instantiate(&ModelSpec::preset("pi").unwrap(), 3).unwrap();
        let (snn, h) = convert(&g, &[], &no_training()).unwrap();
        assert!(h.is_empty());
        let again = finetune(&snn, &[], &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap().0;
        assert_eq!(again, snn);
    }
}
