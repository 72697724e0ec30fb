//! Minimal differentiable kernels: 7x7 same-size convolution, ReLU,
//! endpoint-error loss and Adam, plus a finite-difference gradient checker.

mod adam;
mod conv;
mod epe;
mod gradcheck;

pub use adam::{adam_step, AdamState};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvLayer, KERNEL_SIZE};
pub(crate) use conv::{conv2d_backward_from_col, conv2d_cached};
pub(crate) use conv::conv2d_raw;
pub use epe::{epe_loss, EPE_EPSILON};
pub use gradcheck::{grad_check, grad_check_with_step, GradCheckReport, FD_PERTURBATION};

use crate::tensor::Tensor;

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes gradient where the forward input was positive, zero elsewhere.
/// Subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(input.shape(), grad_out.shape());
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}
