use crate::model::LevelNetwork;
use crate::nn::KERNEL_SIZE;
use crate::tensor::Tensor;

/// Renders the first-layer filters as one RGB tile grid.
///
/// One row per output channel, three tiles per row: the 3-channel filter on
/// the first frame (input channels 0-2), the one on the warped frame
/// (channels 3-5), and their difference. Each tile is min-max normalized to
/// `[0, 1]` on its own; constant tiles map to 0.5.
pub fn first_layer_filters(net: &LevelNetwork) -> Tensor {
    let layer = &net.layers[0];
    let out_ch = layer.out_channels();
    let in_ch = layer.in_channels();
    let k = KERNEL_SIZE;
    let (gh, gw) = (out_ch * k, 3 * k);
    let mut grid = Tensor::zeros(vec![3, gh, gw]);

    // tile: 3 rgb channels of k*k values
    let filter = |o: usize, c0: usize| -> Vec<f32> {
        let mut t = Vec::with_capacity(3 * k * k);
        for c in 0..3 {
            let base = ((o * in_ch + c0 + c) * k) * k;
            t.extend_from_slice(&layer.weights.data()[base..base + k * k]);
        }
        t
    };

    let normalize = |t: &mut [f32]| {
        let min = t.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = t.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        if max - min < 1e-12 {
            t.iter_mut().for_each(|v| *v = 0.5);
        } else {
            t.iter_mut().for_each(|v| *v = (*v - min) / (max - min));
        }
    };

    for o in 0..out_ch {
        let a = filter(o, 0);
        let b = filter(o, 3);
        let diff: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        for (col, tile) in [a, b, diff].into_iter().enumerate() {
            let mut tile = tile;
            normalize(&mut tile);
            for c in 0..3 {
                for y in 0..k {
                    for x in 0..k {
                        grid.set3(c, o * k + y, col * k + x, tile[(c * k + y) * k + x]);
                    }
                }
            }
        }
    }
    grid
}
