//! Rate-mode execution of a layer graph: inference, per-layer activations,
//! and backpropagation for training.

use super::graph::LayerGraph;
use super::layer::{Activation, Layer, PoolKind, SpikingActivation};
use super::ModelError;
use crate::tensor::{self, Tensor};

/// Gradient of one trainable layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

enum Aux {
    None,
    Argmax(Vec<usize>),
}

/// Inputs of every layer up to the logits, kept for the backward pass.
pub(crate) struct Trace {
    inputs: Vec<Tensor>,
    aux: Vec<Aux>,
    pub(crate) logits: Tensor,
}

fn spiking_forward(a: &SpikingActivation, x: &Tensor) -> Result<Tensor, ModelError> {
    Ok(tensor::clamp_forward(x, a.cap(), a.amplitude)?)
}

fn layer_forward(layer: &Layer, x: &Tensor) -> Result<(Tensor, Aux), ModelError> {
    let y = match layer {
        Layer::Conv(c) => tensor::conv2d_forward(x, c)?,
        Layer::Encoder(e) => spiking_forward(&e.activation, &tensor::conv2d_forward(x, &e.conv)?)?,
        Layer::Activation(Activation::Relu) => tensor::relu_forward(x)?,
        Layer::Activation(Activation::Tanh) => tensor::tanh_forward(x)?,
        Layer::Activation(Activation::Spiking(a)) => spiking_forward(a, x)?,
        Layer::Pool(p) => match p.kind {
            PoolKind::Max => {
                let (y, idx) = tensor::max_pool2d_forward(x, p.size, p.stride)?;
                return Ok((y, Aux::Argmax(idx)));
            }
            PoolKind::Avg => tensor::avg_pool2d_forward(x, p.size, p.stride)?,
        },
        Layer::Flatten => x.clone().reshape(vec![x.len()])?,
        Layer::Dense(d) => tensor::dense_forward(x, d)?,
        Layer::Softmax => Tensor::new(x.shape().to_vec(), tensor::softmax(x.data())?)?,
    };
    Ok((y, Aux::None))
}

impl LayerGraph {
    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        if x.shape() != self.input_shape() {
            return Err(ModelError::InputShape {
                expected: self.input_shape().to_vec(),
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Number of leading layers that produce the logits (everything but a
    /// trailing softmax).
    pub fn logits_end(&self) -> usize {
        match self.layers().last() {
            Some(Layer::Softmax) => self.layers().len() - 1,
            _ => self.layers().len(),
        }
    }

    /// Class probabilities (or raw outputs when the graph has no softmax).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in self.layers() {
            cur = layer_forward(layer, &cur)?.0;
        }
        Ok(cur)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers()[..self.logits_end()] {
            cur = layer_forward(layer, &cur)?.0;
        }
        Ok(cur)
    }

    /// Output of every layer, in order.
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>, ModelError> {
        self.check_input(x)?;
        let mut out: Vec<Tensor> = Vec::with_capacity(self.layers().len());
        for layer in self.layers() {
            let y = layer_forward(layer, out.last().unwrap_or(x))?.0;
            out.push(y);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize, ModelError> {
        Ok(self.logits(x)?.argmax())
    }

    pub(crate) fn trace(&self, x: &Tensor) -> Result<Trace, ModelError> {
        self.check_input(x)?;
        let end = self.logits_end();
        let mut inputs = Vec::with_capacity(end);
        let mut aux = Vec::with_capacity(end);
        let mut cur = x.clone();
        for layer in &self.layers()[..end] {
            let (y, a) = layer_forward(layer, &cur)?;
            inputs.push(std::mem::replace(&mut cur, y));
            aux.push(a);
        }
        Ok(Trace { inputs, aux, logits: cur })
    }

    /// Parameter gradients given the gradient of the loss with respect to the
    /// logits. Entry `i` is `Some` exactly when layer `i` is trainable.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: Tensor) -> Result<Vec<Option<ParamGrad>>, ModelError> {
        let end = trace.inputs.len();
        let mut grads: Vec<Option<ParamGrad>> = vec![None; self.layers().len()];
        let first_trainable = match self.layers()[..end].iter().position(Layer::trainable) {
            Some(i) => i,
            None => return Ok(grads),
        };
        let mut g = dlogits;
        for i in (first_trainable..end).rev() {
            let x = &trace.inputs[i];
            let need_input = i > first_trainable;
            g = match &self.layers()[i] {
                Layer::Conv(c) => {
                    let cg = tensor::conv2d_backward(x, c, &g, need_input)?;
                    grads[i] = Some(ParamGrad {
                        weights: cg.kernel.into_data(),
                        bias: cg.bias,
                    });
                    match cg.input {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                Layer::Dense(d) => {
                    let dg = tensor::dense_backward(x, d, &g)?;
                    grads[i] = Some(ParamGrad {
                        weights: dg.weights.into_data(),
                        bias: dg.bias,
                    });
                    dg.input
                }
                Layer::Activation(Activation::Relu) => tensor::relu_backward(x, &g)?,
                Layer::Activation(Activation::Tanh) => tensor::tanh_backward(x, &g)?,
                Layer::Activation(Activation::Spiking(a)) => tensor::clamp_backward(x, &g, a.cap(), a.amplitude)?,
                Layer::Pool(p) => match (&p.kind, &trace.aux[i]) {
                    (PoolKind::Max, Aux::Argmax(idx)) => tensor::max_pool2d_backward(x.shape(), idx, &g)?,
                    _ => tensor::avg_pool2d_backward(x.shape(), p.size, p.stride, &g)?,
                },
                Layer::Flatten => g.reshape(x.shape().to_vec())?,
                // Frozen, and only ever first, so nothing upstream needs a gradient.
                Layer::Encoder(_) => break,
                Layer::Softmax => unreachable!("softmax is excluded from the traced range"),
            };
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{instantiate, Flavor, ModelSpec};
    use crate::tensor::{cross_entropy_loss, ConvLayer, DenseLayer, Padding};

    fn tiny_graph(pool: PoolKind, act: Activation) -> LayerGraph {
        let k = Tensor::new(vec![3, 3, 1, 2], (0..18).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect()).unwrap();
        let conv = ConvLayer::new(k, vec![0.05, -0.02], 1, Padding::Same).unwrap();
        let w = Tensor::new(vec![8, 3], (0..24).map(|i| ((i * 5 % 13) as f64 - 6.0) / 10.0).collect()).unwrap();
        let dense = DenseLayer::new(w, vec![0.1, 0.0, -0.1]).unwrap();
        LayerGraph::new(
            vec![4, 4, 1],
            vec![
                Layer::Conv(conv),
                Layer::Activation(act),
                Layer::Pool(super::super::PoolLayer { kind: pool, size: 2, stride: 2 }),
                Layer::Flatten,
                Layer::Dense(dense),
                Layer::Softmax,
            ],
            Flavor::Ann,
        )
        .unwrap()
    }

    fn input() -> Tensor {
        Tensor::new(vec![4, 4, 1], (0..16).map(|i| ((i * 3 % 7) as f64) / 7.0 - 0.3).collect()).unwrap()
    }

    fn loss_of(g: &LayerGraph, x: &Tensor) -> f64 {
        cross_entropy_loss(&g.logits(x).unwrap(), 1).unwrap().0
    }

    // Central differences on every parameter of a small graph.
    fn check_gradients(g: &LayerGraph) {
        let x = input();
        let tr = g.trace(&x).unwrap();
        let (_, dl) = cross_entropy_loss(&tr.logits, 1).unwrap();
        let grads = g.backward(&tr, dl).unwrap();
        for (li, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let n = grad.weights.len() + grad.bias.len();
            for p in 0..n {
                let eps = 1e-6;
                let mut plus = g.clone();
                let mut minus = g.clone();
                for (gr, s) in [(&mut plus, eps), (&mut minus, -eps)] {
                    let (w, b) = match &mut gr.layers_mut()[li] {
                        Layer::Conv(c) => c.params_mut(),
                        Layer::Dense(d) => d.params_mut(),
                        _ => unreachable!(),
                    };
                    if p < w.len() {
                        w[p] += s;
                    } else {
                        b[p - w.len()] += s;
                    }
                }
                let numeric = (loss_of(&plus, &x) - loss_of(&minus, &x)) / (2.0 * eps);
                let analytic = if p < grad.weights.len() { grad.weights[p] } else { grad.bias[p - grad.weights.len()] };
                assert!((numeric - analytic).abs() < 1e-6, "layer {li} param {p}: {numeric} vs {analytic}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(&tiny_graph(PoolKind::Max, Activation::Relu));
        check_gradients(&tiny_graph(PoolKind::Avg, Activation::Tanh));
    }

    #[test]
    fn forward_ends_in_a_distribution() {
        let g = instantiate(&ModelSpec::preset("pi").unwrap(), 4).unwrap();
        let x = Tensor::filled(&[48, 48, 1], 0.5);
        let p = g.forward(&x).unwrap();
        assert_eq!(p.len(), 7);
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(g.predict(&x).unwrap(), p.argmax());
        assert_eq!(g.activations(&x).unwrap().len(), g.layers().len());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let g = tiny_graph(PoolKind::Max, Activation::Relu);
        assert!(matches!(g.forward(&Tensor::zeros(&[5, 4, 1])), Err(ModelError::InputShape { .. })));
    }
}
