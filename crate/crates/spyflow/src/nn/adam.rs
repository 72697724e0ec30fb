use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam optimizer state for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub learning_rate: f32,
}

impl AdamState {
    pub fn new(shape: Vec<usize>, learning_rate: f32) -> Self {
        AdamState {
            step_count: 0,
            first_moment: Tensor::zeros(shape.clone()),
            second_moment: Tensor::zeros(shape),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One Adam update with bias correction. Deterministic: a fixed loop order
/// over elements, no data-dependent branching.
pub fn adam_step(params: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<()> {
    if params.shape() != grad.shape() || params.shape() != state.first_moment.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("{:?}", params.shape()),
            format!(
                "grad {:?}, moments {:?}",
                grad.shape(),
                state.first_moment.shape()
            ),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    let p = params.data_mut();
    for i in 0..p.len() {
        let g = grad.data()[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(vec![3], 1e-4);
        adam_step(&mut p, &Tensor::zeros(vec![3]), &mut st).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // hand evaluation at t=1: m_hat = g, v_hat = g^2, update = -lr*g/(|g|+eps)
        let mut p = Tensor::zeros(vec![1]);
        let mut st = AdamState::new(vec![1], 1e-4);
        adam_step(&mut p, &Tensor::full(vec![1], 1.0), &mut st).unwrap();
        assert!((p.data()[0] + 1e-4).abs() < 1e-9, "{}", p.data()[0]);
    }

    #[test]
    fn update_is_odd_in_gradient_at_first_step() {
        let g = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.01]).unwrap();
        let neg = g.map(|x| -x);
        let mut p1 = Tensor::zeros(vec![4]);
        let mut p2 = Tensor::zeros(vec![4]);
        let mut s1 = AdamState::new(vec![4], 1e-3);
        let mut s2 = AdamState::new(vec![4], 1e-3);
        adam_step(&mut p1, &g, &mut s1).unwrap();
        adam_step(&mut p2, &neg, &mut s2).unwrap();
        for i in 0..4 {
            assert_eq!(p1.data()[i], -p2.data()[i]);
        }
    }

    #[test]
    fn deterministic_bitwise() {
        let g = Tensor::new(vec![3], vec![0.1, 0.2, -0.3]).unwrap();
        let run = || {
            let mut p = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
            let mut st = AdamState::new(vec![3], 1e-2);
            for _ in 0..10 {
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut p = Tensor::zeros(vec![2]);
        let mut st = AdamState::new(vec![2], 1e-3);
        for k in 0..50 {
            let g = Tensor::new(vec![2], vec![(k as f32).sin(), -(k as f32).cos()]).unwrap();
            adam_step(&mut p, &g, &mut st).unwrap();
            assert!(st.second_moment.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(vec![2]);
        let mut st = AdamState::new(vec![2], 1e-3);
        assert!(adam_step(&mut p, &Tensor::zeros(vec![3]), &mut st).is_err());
    }
}
