use super::gemm::{gemm, Op};
use super::{Result, Tensor, TensorError};

/// Fully connected layer with `cin × cout` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        let &[_, cout] = weights.shape() else {
            return Err(TensorError::Rank {
                op: "dense",
                expected: 2,
                found: weights.shape().to_vec(),
            });
        };
        if bias.len() != cout {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                dim: "bias length",
                expected: cout,
                found: bias.len(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn cin(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn cout(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weights.data_mut(), &mut self.bias)
    }
}

fn check_input(op: &'static str, input: &Tensor, layer: &DenseLayer) -> Result<()> {
    if input.len() != layer.cin() {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "input length",
            expected: layer.cin(),
            found: input.len(),
        });
    }
    Ok(())
}

/// `y = x·W + b` for a flat input of length `cin`.
pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    check_input("dense", input, layer)?;
    let mut out = layer.bias.clone();
    gemm(1, layer.cin(), layer.cout(), input.data(), Op::N, layer.weights.data(), Op::N, 1.0, &mut out);
    Ok(Tensor::from_vec(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

pub fn dense_backward(input: &Tensor, layer: &DenseLayer, upstream: &Tensor) -> Result<DenseGrads> {
    check_input("dense_backward", input, layer)?;
    if upstream.len() != layer.cout() {
        return Err(TensorError::ShapeMismatch {
            op: "dense_backward",
            dim: "upstream length",
            expected: layer.cout(),
            found: upstream.len(),
        });
    }
    let (cin, cout) = (layer.cin(), layer.cout());
    let mut dw = vec![0.0; cin * cout];
    gemm(cin, 1, cout, input.data(), Op::N, upstream.data(), Op::N, 0.0, &mut dw);
    let mut dx = vec![0.0; cin];
    gemm(1, cout, cin, upstream.data(), Op::N, layer.weights.data(), Op::T, 0.0, &mut dx);
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: Tensor::new(vec![cin, cout], dw)?,
        bias: upstream.data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn computes_affine_map() {
        let l = DenseLayer::new(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![0.5, 0.0, -1.0])
            .unwrap();
        let y = dense_forward(&Tensor::from_vec(vec![1.0, -1.0]), &l).unwrap();
        assert_eq!(y.data(), &[-2.5, -3.0, -4.0]);
    }

    #[test]
    fn input_gradient_keeps_input_shape() {
        let l = DenseLayer::new(Tensor::filled(&[6, 2], 1.0), vec![0.0; 2]).unwrap();
        let x = Tensor::filled(&[1, 2, 3], 1.0);
        let g = dense_backward(&x, &l, &Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(g.input.shape(), &[1, 2, 3]);
        assert!(g.input.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn rejects_wrong_input_length() {
        let l = DenseLayer::new(Tensor::filled(&[4, 2], 1.0), vec![0.0; 2]).unwrap();
        assert!(matches!(
            dense_forward(&Tensor::from_vec(vec![1.0; 3]), &l),
            Err(TensorError::ShapeMismatch { expected: 4, found: 3, .. })
        ));
    }
}
