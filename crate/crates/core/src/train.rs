//! Mini-batch SGD with momentum over a [`LayerGraph`].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Layer, LayerGraph, ModelError, ParamGrad};
use crate::rng;
use crate::tensor::{cross_entropy_loss, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 16,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch, measured while training.
    pub loss: f64,
    /// Fraction of training examples classified correctly while training.
    pub accuracy: f64,
}

pub type History = Vec<EpochStats>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("example {index} has label {label} but the model has {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss or gradient")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_data(graph: &LayerGraph, data: &[Example]) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let classes = graph.classes();
    if let Some((index, e)) = data.iter().enumerate().find(|(_, e)| e.label >= classes) {
        return Err(TrainError::LabelOutOfRange {
            index,
            label: e.label,
            classes,
        });
    }
    Ok(())
}

fn add_into(acc: &mut [Option<ParamGrad>], grads: Vec<Option<ParamGrad>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        match a {
            None => *a = Some(g),
            Some(a) => {
                a.weights.iter_mut().zip(&g.weights).for_each(|(x, y)| *x += y);
                a.bias.iter_mut().zip(&g.bias).for_each(|(x, y)| *x += y);
            }
        }
    }
}

/// Trains every trainable layer of `graph` on `data`; the encoder of a
/// spiking graph stays frozen. Deterministic for a fixed config.
pub fn train(graph: &LayerGraph, data: &[Example], config: &TrainConfig) -> Result<(LayerGraph, History), TrainError> {
    check_data(graph, data)?;
    if config.batch == 0 {
        return Err(TrainError::Config("batch must be at least 1".into()));
    }
    if !(config.lr >= 0.0 && config.lr.is_finite()) || !(0.0..1.0).contains(&config.momentum) {
        return Err(TrainError::Config(format!(
            "lr {} must be finite and non-negative, momentum {} in [0, 1)",
            config.lr, config.momentum
        )));
    }
    let mut model = graph.clone();
    let mut rng = rng::seeded(config.seed);
    let mut velocity: Vec<Option<ParamGrad>> = vec![None; model.layers().len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (step, batch) in order.chunks(config.batch).enumerate() {
            let mut acc: Vec<Option<ParamGrad>> = vec![None; model.layers().len()];
            for &i in batch {
                let trace = model.trace(&data[i].input)?;
                let (loss, dlogits) = cross_entropy_loss(&trace.logits, data[i].label).map_err(ModelError::from)?;
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, step });
                }
                loss_sum += loss;
                correct += usize::from(trace.logits.argmax() == data[i].label);
                add_into(&mut acc, model.backward(&trace, dlogits)?);
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, g), v) in model.layers_mut().iter_mut().zip(acc).zip(&mut velocity) {
                let Some(g) = g else { continue };
                let v = v.get_or_insert_with(|| ParamGrad {
                    weights: vec![0.0; g.weights.len()],
                    bias: vec![0.0; g.bias.len()],
                });
                let (w, b) = match layer {
                    Layer::Conv(c) => c.params_mut(),
                    Layer::Dense(d) => d.params_mut(),
                    _ => continue,
                };
                for (p, (vel, grad)) in w.iter_mut().chain(b.iter_mut()).zip(
                    v.weights
                        .iter_mut()
                        .chain(v.bias.iter_mut())
                        .zip(g.weights.iter().chain(&g.bias)),
                ) {
                    *vel = config.momentum * *vel + grad * scale;
                    *p -= config.lr * *vel;
                    if !p.is_finite() {
                        return Err(TrainError::Diverged { epoch, step });
                    }
                }
            }
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        log::info!("epoch {epoch}: loss {:.4}, train accuracy {:.4}", stats.loss, stats.accuracy);
        history.push(stats);
    }
    Ok((model, history))
}

/// Fraction of `data` whose argmax logit equals the label.
pub fn accuracy(graph: &LayerGraph, data: &[Example]) -> Result<f64, TrainError> {
    check_data(graph, data)?;
    let mut correct = 0;
    for e in data {
        correct += usize::from(graph.predict(&e.input)? == e.label);
    }
    Ok(correct as f64 / data.len() as f64)
}
