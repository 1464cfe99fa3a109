use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Op};
use super::{Result, Tensor, TensorError};

/// Spatial padding mode of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; windows must lie fully inside the input.
    Valid,
    /// Zero padding so that the output extent is `ceil(input / stride)`.
    Same,
}

/// Output extent along one spatial dimension together with the zero padding
/// applied before and in total: `(out, pad_before, pad_total)`.
///
/// The output always satisfies `out == (input + pad_total - kernel) / stride + 1`.
/// Returns `None` when no output position exists.
pub fn conv_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize, usize)> {
    if input == 0 || kernel == 0 || stride == 0 {
        return None;
    }
    match padding {
        Padding::Valid => {
            if input < kernel {
                return None;
            }
            Some(((input - kernel) / stride + 1, 0, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let pad_total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, pad_total / 2, pad_total))
        }
    }
}

/// A 2-D convolution with a `kh × kw × cin × cout` kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    kernel: Tensor,
    bias: Vec<f64>,
    stride: usize,
    padding: Padding,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    oh: usize,
    ow: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

impl ConvLayer {
    pub fn new(kernel: Tensor, bias: Vec<f64>, stride: usize, padding: Padding) -> Result<Self> {
        if kernel.shape().len() != 4 {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                found: kernel.shape().to_vec(),
            });
        }
        let cout = kernel.shape()[3];
        if bias.len() != cout {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "bias length",
                expected: cout,
                found: bias.len(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Extent {
                op: "conv2d",
                detail: "stride must be positive".into(),
            });
        }
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn kh(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn kw(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn cin(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn cout(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Mutable views of `(kernel, bias)` for in-place parameter updates.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.kernel.data_mut(), &mut self.bias)
    }

    /// Leading `(rows, cols)` zero padding for an input of the given extent.
    pub fn padding_offsets(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = self.geometry(h, w, self.cin())?;
        Ok((g.pad_top, g.pad_left))
    }

    /// Output `[rows, cols, channels]` for an `h × w × cin` input.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let &[h, w, c] = input else {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 3,
                found: input.to_vec(),
            });
        };
        let g = self.geometry(h, w, c)?;
        Ok([g.oh, g.ow, g.cout])
    }

    fn geometry(&self, h: usize, w: usize, cin: usize) -> Result<Geometry> {
        if cin != self.cin() {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "input channels",
                expected: self.cin(),
                found: cin,
            });
        }
        let (kh, kw) = (self.kh(), self.kw());
        let extent = |n, k, name: &str| {
            conv_extent(n, k, self.stride, self.padding).ok_or_else(|| TensorError::Extent {
                op: "conv2d",
                detail: format!(
                    "{name} {n} with kernel {k}, stride {}, padding {:?}",
                    self.stride, self.padding
                ),
            })
        };
        let (oh, pad_top, _) = extent(h, kh, "rows")?;
        let (ow, pad_left, _) = extent(w, kw, "columns")?;
        Ok(Geometry {
            h,
            w,
            cin,
            oh,
            ow,
            cout: self.cout(),
            kh,
            kw,
            stride: self.stride,
            pad_top,
            pad_left,
        })
    }
}

/// Gather every receptive field into a `(oh·ow) × (kh·kw·cin)` matrix.
fn im2col(input: &[f64], g: &Geometry) -> Vec<f64> {
    let plen = g.patch_len();
    let mut cols = vec![0.0; g.positions() * plen];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut cols[(oy * g.ow + ox) * plen..][..plen];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = ((iy as usize) * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.kw + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&input[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

/// Scatter-add a patch-gradient matrix back onto the input grid.
fn col2im(cols: &[f64], g: &Geometry, out: &mut [f64]) {
    let plen = g.patch_len();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &cols[(oy * g.ow + ox) * plen..][..plen];
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = ((iy as usize) * g.w + ix as usize) * g.cin;
                    let src = (ky * g.kw + kx) * g.cin;
                    for (o, v) in out[dst..dst + g.cin].iter_mut().zip(&row[src..src + g.cin]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

/// Forward convolution of an `h × w × cin` feature map.
pub fn conv2d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (h, w, c) = input.hwc("conv2d")?;
    let g = layer.geometry(h, w, c)?;
    let cols = im2col(input.data(), &g);
    let mut out = Vec::with_capacity(g.positions() * g.cout);
    for _ in 0..g.positions() {
        out.extend_from_slice(layer.bias());
    }
    gemm(
        g.positions(),
        g.patch_len(),
        g.cout,
        &cols,
        Op::N,
        layer.kernel.data(),
        Op::N,
        1.0,
        &mut out,
    );
    Tensor::new(vec![g.oh, g.ow, g.cout], out)
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

/// Backward pass of [`conv2d_forward`].
///
/// `need_input` may be `false` for the first layer of a network, whose input
/// gradient is never consumed.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &ConvLayer,
    upstream: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let (h, w, c) = input.hwc("conv2d_backward")?;
    let g = layer.geometry(h, w, c)?;
    let expected = [g.oh, g.ow, g.cout];
    if upstream.shape() != expected {
        let dims = ["upstream rows", "upstream columns", "upstream channels"];
        let found = upstream.shape();
        for (i, dim) in dims.iter().enumerate() {
            let f = found.get(i).copied().unwrap_or(0);
            if f != expected[i] || found.len() != 3 {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d_backward",
                    dim,
                    expected: expected[i],
                    found: f,
                });
            }
        }
    }
    let dy = upstream.data();
    let mut bias = vec![0.0; g.cout];
    for row in dy.chunks_exact(g.cout) {
        for (b, v) in bias.iter_mut().zip(row) {
            *b += v;
        }
    }
    let cols = im2col(input.data(), &g);
    let plen = g.patch_len();
    let mut dk = vec![0.0; plen * g.cout];
    gemm(plen, g.positions(), g.cout, &cols, Op::T, dy, Op::N, 0.0, &mut dk);
    let input_grad = if need_input {
        let mut dcols = vec![0.0; g.positions() * plen];
        gemm(
            g.positions(),
            g.cout,
            plen,
            dy,
            Op::N,
            layer.kernel.data(),
            Op::T,
            0.0,
            &mut dcols,
        );
        let mut dx = vec![0.0; h * w * c];
        col2im(&dcols, &g, &mut dx);
        Some(Tensor::new(vec![h, w, c], dx)?)
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::new(layer.kernel.shape().to_vec(), dk)?,
        bias,
    })
}
