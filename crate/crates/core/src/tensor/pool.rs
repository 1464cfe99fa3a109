use super::{Result, Tensor, TensorError};

fn pooled_extent(op: &'static str, n: usize, size: usize, stride: usize) -> Result<usize> {
    if size == 0 || stride == 0 || n < size {
        return Err(TensorError::Extent {
            op,
            detail: format!("extent {n} with window {size} and stride {stride}"),
        });
    }
    Ok((n - size) / stride + 1)
}

fn check_upstream(op: &'static str, upstream: &Tensor, shape: [usize; 3]) -> Result<()> {
    if upstream.shape() != shape {
        return Err(TensorError::ShapeMismatch {
            op,
            dim: "upstream element count",
            expected: shape.iter().product(),
            found: upstream.len(),
        });
    }
    Ok(())
}

/// Max pooling; also returns the flat input index of each selected maximum.
pub fn max_pool2d_forward(input: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (h, w, c) = input.hwc("max_pool2d")?;
    let oh = pooled_extent("max_pool2d", h, size, stride)?;
    let ow = pooled_extent("max_pool2d", w, size, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut idx = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (oy * stride * w + ox * stride) * c + ch;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, idx))
}

pub fn max_pool2d_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Result<Tensor> {
    if argmax.len() != upstream.len() {
        return Err(TensorError::ShapeMismatch {
            op: "max_pool2d_backward",
            dim: "upstream element count",
            expected: argmax.len(),
            found: upstream.len(),
        });
    }
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(upstream.data()) {
        dx[i] += g;
    }
    Tensor::new(input_shape.to_vec(), dx)
}

pub fn avg_pool2d_forward(input: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    let (h, w, c) = input.hwc("avg_pool2d")?;
    let oh = pooled_extent("avg_pool2d", h, size, stride)?;
    let ow = pooled_extent("avg_pool2d", w, size, stride)?;
    let x = input.data();
    let norm = 1.0 / (size * size) as f64;
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for ky in 0..size {
                for kx in 0..size {
                    let src = ((oy * stride + ky) * w + ox * stride + kx) * c;
                    for (d, v) in dst.iter_mut().zip(&x[src..src + c]) {
                        *d += v;
                    }
                }
            }
            dst.iter_mut().for_each(|d| *d *= norm);
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

pub fn avg_pool2d_backward(input_shape: &[usize], size: usize, stride: usize, upstream: &Tensor) -> Result<Tensor> {
    let &[h, w, c] = input_shape else {
        return Err(TensorError::Rank {
            op: "avg_pool2d_backward",
            expected: 3,
            found: input_shape.to_vec(),
        });
    };
    let oh = pooled_extent("avg_pool2d_backward", h, size, stride)?;
    let ow = pooled_extent("avg_pool2d_backward", w, size, stride)?;
    check_upstream("avg_pool2d_backward", upstream, [oh, ow, c])?;
    let norm = 1.0 / (size * size) as f64;
    let mut dx = vec![0.0; h * w * c];
    let dy = upstream.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &dy[(oy * ow + ox) * c..][..c];
            for ky in 0..size {
                for kx in 0..size {
                    let dst = ((oy * stride + ky) * w + ox * stride + kx) * c;
                    for (d, v) in dx[dst..dst + c].iter_mut().zip(g) {
                        *d += v * norm;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}
