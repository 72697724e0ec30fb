//! The per-level residual estimator and coarse-to-fine pyramid inference,
//! plus checkpoint persistence and parameter accounting.

mod checkpoint;
mod filters;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use filters::first_layer_filters;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::nn::{conv2d_backward_from_col, conv2d_cached, relu, relu_backward, ConvLayer, KERNEL_SIZE};
use crate::pyramid::{build_image_pyramid, upsample_flow, warp};
use crate::tensor::Tensor;

/// Channel progression through a level network: 8-channel input, five conv
/// layers producing {32, 64, 32, 16, 2} feature maps.
pub const LEVEL_CHANNELS: [usize; 6] = [8, 32, 64, 32, 16, 2];

/// Learned parameters per level network.
pub const LEVEL_PARAM_COUNT: usize = 240_050;

/// One residual-flow estimator: five 7x7 conv layers, ReLU after each except
/// the last.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelNetwork {
    pub layers: Vec<ConvLayer>,
}

impl LevelNetwork {
    /// `(out_ch, in_ch)` per layer.
    pub fn layer_shapes() -> Vec<(usize, usize)> {
        LEVEL_CHANNELS
            .windows(2)
            .map(|w| (w[1], w[0]))
            .collect()
    }

    pub fn zeros() -> Self {
        LevelNetwork {
            layers: Self::layer_shapes()
                .into_iter()
                .map(|(o, i)| ConvLayer::zeros(o, i))
                .collect(),
        }
    }

    /// Fresh initialization: weights uniform in `[-b, b]` with
    /// `b = sqrt(6/fan_in)` per layer (He bound for ReLU), zero bias.
    pub fn random(rng: &mut impl Rng) -> Self {
        let layers = Self::layer_shapes()
            .into_iter()
            .map(|(out_ch, in_ch)| {
                let fan_in = in_ch * KERNEL_SIZE * KERNEL_SIZE;
                let b = (6.0 / fan_in as f32).sqrt();
                let n = out_ch * fan_in;
                let weights = Tensor::new(
                    vec![out_ch, in_ch, KERNEL_SIZE, KERNEL_SIZE],
                    (0..n).map(|_| rng.gen_range(-b..b)).collect(),
                )
                .expect("layer shape");
                ConvLayer::new(weights, Tensor::zeros(vec![out_ch])).expect("7x7 layer")
            })
            .collect();
        LevelNetwork { layers }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::layer_shapes();
        if self.layers.len() != expected.len() {
            return Err(Error::shape(
                "LevelNetwork layers",
                expected.len(),
                self.layers.len(),
            ));
        }
        for (i, (layer, &(o, c))) in self.layers.iter().zip(&expected).enumerate() {
            if layer.out_channels() != o || layer.in_channels() != c {
                return Err(Error::shape(
                    format!("LevelNetwork layer {i}"),
                    format!("{o}x{c}"),
                    format!("{}x{}", layer.out_channels(), layer.in_channels()),
                ));
            }
        }
        debug_assert_eq!(self.param_count(), LEVEL_PARAM_COUNT);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

/// Stacks `(I1 RGB, warped I2 RGB, flow u, flow v)` into the 8-channel level
/// input. The order is frozen for checkpoint compatibility.
pub fn stack_level_input(
    i1: &Tensor,
    i2_warped: &Tensor,
    flow_up: &FlowField,
) -> Result<Tensor> {
    let (c1, h, w) = i1.chw()?;
    let (c2, h2, w2) = i2_warped.chw()?;
    if c1 != 3 || c2 != 3 {
        return Err(Error::shape("stack_level_input channels", 3, format!("{c1}/{c2}")));
    }
    if (h2, w2) != (h, w) || (flow_up.height, flow_up.width) != (h, w) {
        return Err(Error::shape(
            "stack_level_input resolution",
            format!("{h}x{w}"),
            format!("{h2}x{w2} and {}x{}", flow_up.height, flow_up.width),
        ));
    }
    let mut data = Vec::with_capacity(8 * h * w);
    data.extend_from_slice(i1.data());
    data.extend_from_slice(i2_warped.data());
    data.extend_from_slice(&flow_up.u);
    data.extend_from_slice(&flow_up.v);
    Tensor::new(vec![8, h, w], data)
}

/// Intermediate activations kept for the backward pass: the input to each
/// conv layer plus the final output. The unrolled column matrices are kept
/// too so the backward pass skips re-unrolling.
pub struct LevelForwardCache {
    pub layer_inputs: Vec<Tensor>,
    pub output: Tensor,
    cols: Vec<ndarray::Array2<f32>>,
}

/// Forward pass on a prepared 8-channel input, keeping activations.
pub fn level_forward_cached(net: &LevelNetwork, input: Tensor) -> Result<LevelForwardCache> {
    net.validate()?;
    let mut layer_inputs = Vec::with_capacity(net.layers.len());
    let mut cols = Vec::with_capacity(net.layers.len());
    let mut cur = input;
    let last = net.layers.len() - 1;
    for (i, layer) in net.layers.iter().enumerate() {
        let (out, col) = conv2d_cached(&cur, layer)?;
        layer_inputs.push(cur);
        cols.push(col);
        cur = if i == last { out } else { relu(&out) };
    }
    Ok(LevelForwardCache {
        layer_inputs,
        output: cur,
        cols,
    })
}

/// Per-layer parameter gradients of a level network, plus the gradient
/// w.r.t. its 8-channel input.
pub struct LevelGrads {
    /// `(weights, bias)` per layer, same order as `LevelNetwork::layers`.
    pub layers: Vec<(Tensor, Tensor)>,
    pub input: Tensor,
}

/// Backward pass through the five conv layers given the gradient at the
/// 2-channel output.
pub fn level_backward(
    net: &LevelNetwork,
    cache: &LevelForwardCache,
    grad_out: &Tensor,
) -> Result<LevelGrads> {
    let mut layer_grads = vec![None; net.layers.len()];
    let mut g = grad_out.clone();
    for i in (0..net.layers.len()).rev() {
        let input = &cache.layer_inputs[i];
        let (_, h, w) = input.chw()?;
        let grads = conv2d_backward_from_col(
            &cache.cols[i],
            net.layers[i].in_channels(),
            h,
            w,
            &net.layers[i],
            &g,
        )?;
        layer_grads[i] = Some((grads.weights, grads.bias));
        g = if i > 0 {
            // the input to layer i is relu output; its sign carries the mask
            relu_backward(input, &grads.input)
        } else {
            grads.input
        };
    }
    Ok(LevelGrads {
        layers: layer_grads.into_iter().map(|g| g.unwrap()).collect(),
        input: g,
    })
}

/// Residual flow at one pyramid level: Eq.-(1)-style forward pass on
/// `(I1, warped I2, upsampled flow)`.
pub fn level_forward(
    net: &LevelNetwork,
    i1: &Tensor,
    i2_warped: &Tensor,
    flow_up: &FlowField,
) -> Result<FlowField> {
    let input = stack_level_input(i1, i2_warped, flow_up)?;
    let cache = level_forward_cached(net, input)?;
    FlowField::from_tensor(&cache.output)
}

/// An ordered stack of level networks, coarsest first, plus the number of
/// pyramid levels to run at inference. Levels beyond the stored networks
/// reuse the finest network.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidModel {
    pub levels: Vec<LevelNetwork>,
    pub inference_levels: usize,
}

impl PyramidModel {
    pub fn new(levels: Vec<LevelNetwork>, inference_levels: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one level".into()));
        }
        if inference_levels < levels.len() {
            return Err(Error::InvalidConfig(format!(
                "inference_levels {} < stored networks {}",
                inference_levels,
                levels.len()
            )));
        }
        for net in &levels {
            net.validate()?;
        }
        Ok(PyramidModel {
            levels,
            inference_levels,
        })
    }

    pub fn network_for_level(&self, k: usize) -> &LevelNetwork {
        &self.levels[k.min(self.levels.len() - 1)]
    }

    /// Exact parameter counts: one entry per stored network, and the total.
    pub fn count_params(&self) -> (Vec<usize>, usize) {
        let per: Vec<usize> = self.levels.iter().map(|n| n.param_count()).collect();
        let total = per.iter().sum();
        (per, total)
    }
}

/// Full inference output with every intermediate level flow retained.
pub struct InferenceResult {
    /// Full-resolution flow (last entry of `level_flows`).
    pub flow: FlowField,
    /// Accumulated flow V_k per level, coarsest first.
    pub level_flows: Vec<FlowField>,
}

/// Coarse-to-fine inference: starts from zero flow at the coarsest level,
/// then per level upsamples the flow, warps the second frame, adds the
/// residual from the level network.
pub fn infer_detailed(model: &PyramidModel, i1: &Tensor, i2: &Tensor) -> Result<InferenceResult> {
    let (_, h, w) = i1.chw()?;
    let (_, h2, w2) = i2.chw()?;
    if (h2, w2) != (h, w) {
        return Err(Error::shape("infer frames", format!("{h}x{w}"), format!("{h2}x{w2}")));
    }
    let levels = model.inference_levels;
    let factor = 1usize << (levels - 1);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidDimensions(format!(
            "{h}x{w} not divisible by 2^(levels-1) = {factor}; pad or resize to multiples of {factor}"
        )));
    }
    let pyr1 = build_image_pyramid(i1, levels)?;
    let pyr2 = build_image_pyramid(i2, levels)?;
    let mut level_flows = Vec::with_capacity(levels);
    let mut flow: Option<FlowField> = None;
    for k in 0..levels {
        let (_, lh, lw) = pyr1[k].chw()?;
        let flow_up = match &flow {
            None => FlowField::zeros(lw, lh),
            Some(prev) => upsample_flow(prev),
        };
        let warped = warp(&pyr2[k], &flow_up)?;
        let residual = level_forward(model.network_for_level(k), &pyr1[k], &warped, &flow_up)?;
        let mut vk = flow_up;
        for i in 0..vk.num_pixels() {
            vk.u[i] += residual.u[i];
            vk.v[i] += residual.v[i];
        }
        level_flows.push(vk.clone());
        flow = Some(vk);
    }
    Ok(InferenceResult {
        flow: flow.expect("at least one level"),
        level_flows,
    })
}

/// Full-resolution flow for an image pair (see [`infer_detailed`]).
pub fn infer(model: &PyramidModel, i1: &Tensor, i2: &Tensor) -> Result<FlowField> {
    Ok(infer_detailed(model, i1, i2)?.flow)
}
