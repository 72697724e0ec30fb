use ndarray::{Array2, ArrayView2, LinalgScalar};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// All convolutions use 7x7 kernels with zero padding 3 and stride 1 so the
/// spatial size is preserved.
pub const KERNEL_SIZE: usize = 7;
const PAD: usize = KERNEL_SIZE / 2;

/// A 7x7 same-size convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[out_ch, in_ch, 7, 7]`
    pub weights: Tensor,
    /// `[out_ch]`
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let shape = weights.shape();
        if shape.len() != 4 || shape[2] != KERNEL_SIZE || shape[3] != KERNEL_SIZE {
            return Err(Error::shape(
                "ConvLayer::new weights",
                format!("[out, in, {KERNEL_SIZE}, {KERNEL_SIZE}]"),
                format!("{:?}", shape),
            ));
        }
        if bias.shape() != [shape[0]] {
            return Err(Error::shape(
                "ConvLayer::new bias",
                format!("[{}]", shape[0]),
                format!("{:?}", bias.shape()),
            ));
        }
        Ok(ConvLayer { weights, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize) -> Self {
        ConvLayer {
            weights: Tensor::zeros(vec![out_ch, in_ch, KERNEL_SIZE, KERNEL_SIZE]),
            bias: Tensor::zeros(vec![out_ch]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// For a kernel offset `d` (0..7), the valid output range `x0..x1` such that
/// the source coordinate `x + d - PAD` stays inside `0..len`.
fn valid_span(d: usize, len: usize) -> (usize, usize) {
    let x0 = PAD.saturating_sub(d);
    let x1 = (len + PAD).saturating_sub(d).min(len).max(x0);
    (x0, x1)
}

/// im2col: unrolls padded input patches into a `[in_ch*49, h*w]` matrix.
/// Each (channel, dy, dx) row is filled with contiguous row-span copies so
/// the unroll stays memcpy-bound.
fn im2col<T: LinalgScalar>(input: &[T], in_ch: usize, h: usize, w: usize) -> Array2<T> {
    let k = KERNEL_SIZE;
    let n = h * w;
    let mut col = Array2::<T>::zeros((in_ch * k * k, n));
    let buf = col.as_slice_mut().expect("standard layout");
    for c in 0..in_ch {
        let plane = &input[c * n..(c + 1) * n];
        for dy in 0..k {
            let (y0, y1) = valid_span(dy, h);
            for dx in 0..k {
                let (x0, x1) = valid_span(dx, w);
                if x0 >= x1 {
                    continue;
                }
                let row = (c * k + dy) * k + dx;
                let dest = &mut buf[row * n..(row + 1) * n];
                for y in y0..y1 {
                    let sy = y + dy - PAD;
                    let src = sy * w + x0 + dx - PAD;
                    dest[y * w + x0..y * w + x1]
                        .copy_from_slice(&plane[src..src + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Scatter-add of an im2col-shaped gradient back into input layout, the
/// span-wise inverse of [`im2col`].
fn col2im<T: LinalgScalar + std::ops::AddAssign>(
    col: &Array2<T>,
    in_ch: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let k = KERNEL_SIZE;
    let n = h * w;
    let buf = col.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); in_ch * n];
    for c in 0..in_ch {
        let plane = &mut out[c * n..(c + 1) * n];
        for dy in 0..k {
            let (y0, y1) = valid_span(dy, h);
            for dx in 0..k {
                let (x0, x1) = valid_span(dx, w);
                if x0 >= x1 {
                    continue;
                }
                let row = (c * k + dy) * k + dx;
                let src_row = &buf[row * n..(row + 1) * n];
                for y in y0..y1 {
                    let sy = y + dy - PAD;
                    let dst = sy * w + x0 + dx - PAD;
                    for (o, s) in plane[dst..dst + (x1 - x0)]
                        .iter_mut()
                        .zip(&src_row[y * w + x0..y * w + x1])
                    {
                        *o += *s;
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution on raw buffers; generic so the gradient checker can
/// re-run it in f64.
pub(crate) fn conv2d_raw<T: LinalgScalar>(
    input: &[T],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[T],
    bias: &[T],
    out_ch: usize,
) -> Vec<T> {
    let k2 = KERNEL_SIZE * KERNEL_SIZE;
    let col = im2col(input, in_ch, h, w);
    let wmat = ArrayView2::from_shape((out_ch, in_ch * k2), weights).expect("weight layout");
    let prod = wmat.dot(&col);
    let mut out = Vec::with_capacity(out_ch * h * w);
    for o in 0..out_ch {
        let b = bias[o];
        out.extend(prod.row(o).iter().map(|&v| v + b));
    }
    out
}

/// Forward convolution from an already-unrolled column matrix.
fn conv2d_from_col(col: &Array2<f32>, layer: &ConvLayer, h: usize, w: usize) -> Result<Tensor> {
    let out_ch = layer.out_channels();
    let wmat = ArrayView2::from_shape(
        (out_ch, layer.in_channels() * KERNEL_SIZE * KERNEL_SIZE),
        layer.weights.data(),
    )
    .expect("weight layout");
    let prod = wmat.dot(col);
    let mut out = Vec::with_capacity(out_ch * h * w);
    for o in 0..out_ch {
        let b = layer.bias.data()[o];
        out.extend(prod.row(o).iter().map(|&v| v + b));
    }
    Tensor::new(vec![out_ch, h, w], out)
}

/// Forward pass that also returns the column matrix so a following backward
/// pass can skip re-unrolling the input.
pub(crate) fn conv2d_cached(input: &Tensor, layer: &ConvLayer) -> Result<(Tensor, Array2<f32>)> {
    let (c, h, w) = check_input(input, layer)?;
    let col = im2col(input.data(), c, h, w);
    let out = conv2d_from_col(&col, layer, h, w)?;
    Ok((out, col))
}

fn check_input(input: &Tensor, layer: &ConvLayer) -> Result<(usize, usize, usize)> {
    let (c, h, w) = input.chw()?;
    if c != layer.in_channels() {
        return Err(Error::shape(
            "conv2d input channels",
            layer.in_channels(),
            c,
        ));
    }
    Ok((c, h, w))
}

/// Same-size 7x7 convolution: zero padding 3, stride 1.
pub fn conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (c, h, w) = check_input(input, layer)?;
    let out = conv2d_raw(
        input.data(),
        c,
        h,
        w,
        layer.weights.data(),
        layer.bias.data(),
        layer.out_channels(),
    );
    Tensor::new(vec![layer.out_channels(), h, w], out)
}

/// Gradients of a convolution w.r.t. its input, weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Exact analytic backward pass for [`conv2d`].
pub fn conv2d_backward(input: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    let (c, h, w) = check_input(input, layer)?;
    let col = im2col(input.data(), c, h, w);
    conv2d_backward_from_col(&col, c, h, w, layer, grad_out)
}

/// [`conv2d_backward`] on a column matrix kept from [`conv2d_cached`].
pub(crate) fn conv2d_backward_from_col(
    col: &Array2<f32>,
    c: usize,
    h: usize,
    w: usize,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let out_ch = layer.out_channels();
    if grad_out.shape() != [out_ch, h, w] {
        return Err(Error::shape(
            "conv2d_backward grad_out",
            format!("[{out_ch}, {h}, {w}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let k2 = KERNEL_SIZE * KERNEL_SIZE;
    let gmat = ArrayView2::from_shape((out_ch, h * w), grad_out.data()).expect("grad layout");

    // dW = dOut * col^T
    let dw = gmat.dot(&col.t());
    let grad_weights = Tensor::new(
        vec![out_ch, c, KERNEL_SIZE, KERNEL_SIZE],
        dw.iter().copied().collect(),
    )?;

    // dB = per-channel sum of dOut
    let grad_bias = Tensor::new(
        vec![out_ch],
        (0..out_ch).map(|o| gmat.row(o).sum()).collect(),
    )?;

    // dInput = col2im(W^T * dOut)
    let wmat =
        ArrayView2::from_shape((out_ch, c * k2), layer.weights.data()).expect("weight layout");
    let dcol = wmat.t().dot(&gmat);
    let grad_input = Tensor::new(vec![c, h, w], col2im(&dcol, c, h, w))?;

    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}
