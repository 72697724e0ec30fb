//! Double-precision forward evaluations used as the target function for
//! finite-difference gradient checks. These re-run the kernels in f64 so a
//! 1e-4 relative tolerance is meaningful; the analytic f32 backward passes
//! are what gets verified against them.

use crate::model::LevelNetwork;
use crate::nn::{conv2d_raw, KERNEL_SIZE};

/// Bilinear warp of a `[C, H, W]` buffer along (u, v), clamped to the border.
pub fn warp_f64(image: &[f64], c: usize, h: usize, w: usize, u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let xs = (x as f64 + u[y * w + x]).clamp(0.0, (w - 1) as f64);
            let ys = (y as f64 + v[y * w + x]).clamp(0.0, (h - 1) as f64);
            let x0 = xs.floor() as usize;
            let y0 = ys.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = xs - x0 as f64;
            let fy = ys - y0 as f64;
            for ch in 0..c {
                let base = ch * h * w;
                let top = image[base + y0 * w + x0] * (1.0 - fx) + image[base + y0 * w + x1] * fx;
                let bot = image[base + y1 * w + x0] * (1.0 - fx) + image[base + y1 * w + x1] * fx;
                out[base + y * w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// f64 forward conv with zero padding 3 and stride 1.
pub fn conv2d_f64(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
) -> Vec<f64> {
    conv2d_raw(input, in_ch, h, w, weights, bias, out_ch)
}

/// Parameters of a level network flattened layer by layer, weights before
/// bias, in f64.
pub fn flatten_params_f64(net: &LevelNetwork) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in &net.layers {
        out.extend(layer.weights.data().iter().map(|&x| x as f64));
        out.extend(layer.bias.data().iter().map(|&x| x as f64));
    }
    out
}

/// f64 forward pass of a level network on a prepared 8-channel input,
/// parameterized by a flat f64 parameter vector (layout of
/// [`flatten_params_f64`]). ReLU after every layer except the last.
pub fn level_forward_f64(
    net_shape: &[(usize, usize)],
    params: &[f64],
    input: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut cur = input.to_vec();
    let mut offset = 0;
    let last = net_shape.len() - 1;
    for (li, &(out_ch, in_ch)) in net_shape.iter().enumerate() {
        let wn = out_ch * in_ch * KERNEL_SIZE * KERNEL_SIZE;
        let weights = &params[offset..offset + wn];
        let bias = &params[offset + wn..offset + wn + out_ch];
        offset += wn + out_ch;
        cur = conv2d_f64(&cur, in_ch, h, w, weights, bias, out_ch);
        if li != last {
            for x in cur.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
    }
    cur
}

/// Concatenated pre-activations of every ReLU'd layer in the f64 forward
/// pass. Used to detect when a finite-difference perturbation crosses a
/// ReLU kink, which invalidates the central-difference estimate.
pub fn level_preacts_f64(
    net_shape: &[(usize, usize)],
    params: &[f64],
    input: &[f64],
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut cur = input.to_vec();
    let mut offset = 0;
    let last = net_shape.len() - 1;
    let mut preacts = Vec::new();
    for (li, &(out_ch, in_ch)) in net_shape.iter().enumerate() {
        let wn = out_ch * in_ch * KERNEL_SIZE * KERNEL_SIZE;
        let weights = &params[offset..offset + wn];
        let bias = &params[offset + wn..offset + wn + out_ch];
        offset += wn + out_ch;
        cur = conv2d_f64(&cur, in_ch, h, w, weights, bias, out_ch);
        if li != last {
            preacts.extend_from_slice(&cur);
            for x in cur.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
    }
    preacts
}

/// f64 smoothed average-EPE of a `[2, H, W]` prediction buffer against a
/// target (u, v) pair.
pub fn epe_loss_f64(pred: &[f64], target_u: &[f64], target_v: &[f64], eps: f64) -> f64 {
    let n = target_u.len();
    let mut acc = 0.0;
    for i in 0..n {
        let du = pred[i] - target_u[i];
        let dv = pred[n + i] - target_v[i];
        acc += (du * du + dv * dv + eps * eps).sqrt();
    }
    acc / n as f64
}
