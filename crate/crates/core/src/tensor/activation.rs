use super::{Result, Tensor, TensorError};

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn non_empty(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_empty() {
        return Err(TensorError::Empty { op });
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "element count",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

pub fn relu_forward(input: &Tensor) -> Result<Tensor> {
    non_empty("relu", input)?;
    Ok(input.map(relu))
}

/// Passes `upstream` through where the forward input was positive.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    same_shape("relu_backward", input, upstream)?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// `scale · clamp(x, 0, cap)`: the smooth firing-rate abstraction of a
/// saturating integrate-and-fire neuron, in decoded units.
pub fn clamp_forward(input: &Tensor, cap: f64, scale: f64) -> Result<Tensor> {
    non_empty("clamp", input)?;
    Ok(input.map(|x| scale * x.clamp(0.0, cap)))
}

pub fn clamp_backward(input: &Tensor, upstream: &Tensor, cap: f64, scale: f64) -> Result<Tensor> {
    same_shape("clamp_backward", input, upstream)?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 && x < cap { scale * g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn tanh_forward(input: &Tensor) -> Result<Tensor> {
    non_empty("tanh", input)?;
    Ok(input.map(f64::tanh))
}

pub fn tanh_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    same_shape("tanh_backward", input, upstream)?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| {
            let t = x.tanh();
            (1.0 - t * t) * g
        })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}
