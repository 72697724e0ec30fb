//! Spatial sampling operators: image decimation, flow upsampling and
//! downsampling, and bilinear warping.
//!
//! Conventions (fixed so round trips on constants are exact):
//! - decimation is a 2x2 area average, which preserves channel means;
//! - flow values scale with the resampling factor (x2 up, x0.5 down) so
//!   displacements stay in pixel units of the target resolution;
//! - bilinear upsampling aligns the corners of the coarse and fine grids;
//! - warp samples are clamped to the image border.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;

/// Halves both spatial dimensions of a `[C, H, W]` image by 2x2 area
/// averaging.
pub fn downsample_image(image: &Tensor) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidDimensions(format!(
            "downsample_image requires even dimensions, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let s = image.at3(ch, 2 * y, 2 * x)
                    + image.at3(ch, 2 * y, 2 * x + 1)
                    + image.at3(ch, 2 * y + 1, 2 * x)
                    + image.at3(ch, 2 * y + 1, 2 * x + 1);
                out.set3(ch, y, x, s * 0.25);
            }
        }
    }
    Ok(out)
}

/// Builds a pyramid with `levels` entries, element 0 coarsest, last element
/// the input itself. Requires `H` and `W` divisible by `2^(levels-1)`.
pub fn build_image_pyramid(image: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least 1 level".into()));
    }
    let (_, h, w) = image.chw()?;
    let factor = 1usize << (levels - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidDimensions(format!(
            "image {h}x{w} not divisible by 2^(levels-1) = {factor}"
        )));
    }
    let mut pyramid = Vec::with_capacity(levels);
    pyramid.push(image.clone());
    for _ in 1..levels {
        let next = downsample_image(pyramid.last().unwrap())?;
        pyramid.push(next);
    }
    pyramid.reverse();
    Ok(pyramid)
}

/// Half-resolution flow: 2x2 average of u and v, values scaled by 0.5 so
/// displacements are expressed in pixels of the new resolution.
pub fn downsample_flow(flow: &FlowField) -> Result<FlowField> {
    if !flow.width.is_multiple_of(2) || !flow.height.is_multiple_of(2) {
        return Err(Error::InvalidDimensions(format!(
            "downsample_flow requires even dimensions, got {}x{}",
            flow.width, flow.height
        )));
    }
    let t = downsample_image(&flow.to_tensor())?;
    let mut out = FlowField::from_tensor(&t)?;
    for x in out.u.iter_mut().chain(out.v.iter_mut()) {
        *x *= 0.5;
    }
    Ok(out)
}

/// Align-corners bilinear interpolation of one `[H, W]` plane to `[oh, ow]`.
fn resize_plane_bilinear(plane: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let sx = if ow > 1 {
        (w - 1) as f32 / (ow - 1) as f32
    } else {
        0.0
    };
    let sy = if oh > 1 {
        (h - 1) as f32 / (oh - 1) as f32
    } else {
        0.0
    };
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        let fy = y as f32 * sy;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for x in 0..ow {
            let fx = x as f32 * sx;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
            let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
            out[y * ow + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// Resizes a `[C, H, W]` image to `[C, oh, ow]` with align-corners bilinear
/// interpolation.
pub fn resize_image_bilinear(image: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    let mut data = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        data.extend(resize_plane_bilinear(plane, h, w, oh, ow));
    }
    Tensor::new(vec![c, oh, ow], data)
}

/// Double-resolution flow via bilinear interpolation, values scaled by 2.
pub fn upsample_flow(flow: &FlowField) -> FlowField {
    let (w, h) = (flow.width, flow.height);
    let (ow, oh) = (w * 2, h * 2);
    let mut u = resize_plane_bilinear(&flow.u, h, w, oh, ow);
    let mut v = resize_plane_bilinear(&flow.v, h, w, oh, ow);
    for x in u.iter_mut().chain(v.iter_mut()) {
        *x *= 2.0;
    }
    FlowField {
        width: ow,
        height: oh,
        u,
        v,
    }
}

/// Warps `image` along `flow`: output(x, y) samples the image at
/// `(x + u, y + v)` with bilinear interpolation, coordinates clamped to the
/// border.
pub fn warp(image: &Tensor, flow: &FlowField) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if flow.width != w || flow.height != h {
        return Err(Error::shape(
            "warp",
            format!("flow {w}x{h}"),
            format!("{}x{}", flow.width, flow.height),
        ));
    }
    let mut out = Tensor::zeros(vec![c, h, w]);
    for y in 0..h {
        for x in 0..w {
            let xs = (x as f32 + flow.u_at(x, y)).clamp(0.0, (w - 1) as f32);
            let ys = (y as f32 + flow.v_at(x, y)).clamp(0.0, (h - 1) as f32);
            let x0 = xs.floor() as usize;
            let y0 = ys.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = xs - x0 as f32;
            let fy = ys - y0 as f32;
            for ch in 0..c {
                let top = image.at3(ch, y0, x0) * (1.0 - fx) + image.at3(ch, y0, x1) * fx;
                let bot = image.at3(ch, y1, x0) * (1.0 - fx) + image.at3(ch, y1, x1) * fx;
                out.set3(ch, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`warp`] w.r.t. the image and the flow.
#[derive(Debug, Clone)]
pub struct WarpGrads {
    pub image: Tensor,
    /// `[2, H, W]`: gradient w.r.t. u, then v.
    pub flow: Tensor,
}

/// Analytic backward pass of [`warp`]. At clamped sample coordinates the
/// flow gradient is zero (the sample no longer moves with the flow).
pub fn warp_backward(image: &Tensor, flow: &FlowField, grad_out: &Tensor) -> Result<WarpGrads> {
    let (c, h, w) = image.chw()?;
    if grad_out.shape() != [c, h, w] {
        return Err(Error::shape(
            "warp_backward grad_out",
            format!("[{c}, {h}, {w}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    flow.same_resolution(&FlowField::zeros(w, h), "warp_backward")?;
    let mut grad_image = Tensor::zeros(vec![c, h, w]);
    let mut grad_flow = Tensor::zeros(vec![2, h, w]);
    let n = h * w;
    for y in 0..h {
        for x in 0..w {
            let rx = x as f32 + flow.u_at(x, y);
            let ry = y as f32 + flow.v_at(x, y);
            let xs = rx.clamp(0.0, (w - 1) as f32);
            let ys = ry.clamp(0.0, (h - 1) as f32);
            let x_active = rx > 0.0 && rx < (w - 1) as f32;
            let y_active = ry > 0.0 && ry < (h - 1) as f32;
            let x0 = xs.floor() as usize;
            let y0 = ys.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = xs - x0 as f32;
            let fy = ys - y0 as f32;
            let mut du = 0.0;
            let mut dv = 0.0;
            for ch in 0..c {
                let g = grad_out.at3(ch, y, x);
                let i00 = image.at3(ch, y0, x0);
                let i01 = image.at3(ch, y0, x1);
                let i10 = image.at3(ch, y1, x0);
                let i11 = image.at3(ch, y1, x1);
                // image gradient: scatter bilinear weights
                let gi = grad_image.data_mut();
                let base = ch * n;
                gi[base + y0 * w + x0] += g * (1.0 - fx) * (1.0 - fy);
                gi[base + y0 * w + x1] += g * fx * (1.0 - fy);
                gi[base + y1 * w + x0] += g * (1.0 - fx) * fy;
                gi[base + y1 * w + x1] += g * fx * fy;
                // flow gradient: derivative of the bilinear sample
                du += g * ((1.0 - fy) * (i01 - i00) + fy * (i11 - i10));
                dv += g * ((1.0 - fx) * (i10 - i00) + fx * (i11 - i01));
            }
            let gf = grad_flow.data_mut();
            gf[y * w + x] = if x_active { du } else { 0.0 };
            gf[n + y * w + x] = if y_active { dv } else { 0.0 };
        }
    }
    Ok(WarpGrads {
        image: grad_image,
        flow: grad_flow,
    })
}
