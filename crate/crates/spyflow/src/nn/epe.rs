use crate::error::Result;
use crate::flow::FlowField;
use crate::tensor::Tensor;

/// Smoothing term inside the square root; keeps the loss differentiable at
/// zero residual.
pub const EPE_EPSILON: f32 = 1e-8;

/// Average endpoint-error loss between two flow fields of equal resolution.
///
/// `loss = mean over pixels of sqrt(du^2 + dv^2 + eps^2)`. Returns the loss
/// and its exact gradient w.r.t. `pred` as a `[2, H, W]` tensor.
pub fn epe_loss(pred: &FlowField, target: &FlowField) -> Result<(f32, Tensor)> {
    pred.same_resolution(target, "epe_loss")?;
    let n = pred.num_pixels();
    let inv_n = 1.0 / n as f32;
    let mut grad = Tensor::zeros(vec![2, pred.height, pred.width]);
    let (gu, gv) = grad.data_mut().split_at_mut(n);
    let mut loss = 0.0f64;
    for i in 0..n {
        let du = pred.u[i] - target.u[i];
        let dv = pred.v[i] - target.v[i];
        let r = (du * du + dv * dv + EPE_EPSILON * EPE_EPSILON).sqrt();
        loss += r as f64;
        gu[i] = du / r * inv_n;
        gv[i] = dv / r * inv_n;
    }
    Ok(((loss * inv_n as f64) as f32, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FlowField {
        let mut f = FlowField::zeros(w, h);
        for i in 0..w * h {
            f.u[i] = rng.gen_range(-3.0..3.0);
            f.v[i] = rng.gen_range(-3.0..3.0);
        }
        f
    }

    #[test]
    fn identical_fields_give_epsilon_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(&mut rng, 7, 5);
        let (loss, _) = epe_loss(&f, &f).unwrap();
        assert!(loss <= 1e-7, "loss {loss}");
    }

    #[test]
    fn three_four_five_triangle() {
        let pred = FlowField::constant(8, 8, 3.0, 4.0);
        let target = FlowField::zeros(8, 8);
        let (loss, _) = epe_loss(&pred, &target).unwrap();
        assert!((loss - 5.0).abs() < 1e-6);
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let a = FlowField::zeros(4, 4);
        let b = FlowField::zeros(4, 5);
        assert!(epe_loss(&a, &b).is_err());
    }

    #[test]
    fn matches_brute_force_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pred = random_field(&mut rng, 8, 8);
        let target = random_field(&mut rng, 8, 8);
        let (loss, grad) = epe_loss(&pred, &target).unwrap();

        // brute-force per-pixel oracle
        let mut acc = 0.0f64;
        for y in 0..8 {
            for x in 0..8 {
                let du = (pred.u_at(x, y) - target.u_at(x, y)) as f64;
                let dv = (pred.v_at(x, y) - target.v_at(x, y)) as f64;
                acc += (du * du + dv * dv + (EPE_EPSILON as f64).powi(2)).sqrt();
            }
        }
        acc /= 64.0;
        assert!((loss as f64 - acc).abs() < 1e-6);

        // finite differences on the concatenated (u, v) vector
        let n = pred.num_pixels();
        let packed: Vec<f64> = pred
            .u
            .iter()
            .chain(pred.v.iter())
            .map(|&x| x as f64)
            .collect();
        let tu: Vec<f64> = target.u.iter().map(|&x| x as f64).collect();
        let tv: Vec<f64> = target.v.iter().map(|&x| x as f64).collect();
        let f = |p: &[f64]| {
            let mut s = 0.0;
            for i in 0..n {
                let du = p[i] - tu[i];
                let dv = p[n + i] - tv[i];
                s += (du * du + dv * dv + (EPE_EPSILON as f64).powi(2)).sqrt();
            }
            s / n as f64
        };
        let analytic: Vec<f64> = grad.data().iter().map(|&g| g as f64).collect();
        let rep = grad_check(f, &packed, &analytic, None, 1e-4);
        assert!(rep.passed(), "rel err {}", rep.max_rel_error);
    }

    #[test]
    fn triangle_inequality_on_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a = random_field(&mut rng, 6, 6);
            let b = random_field(&mut rng, 6, 6);
            let c = random_field(&mut rng, 6, 6);
            let (ab, _) = epe_loss(&a, &b).unwrap();
            let (bc, _) = epe_loss(&b, &c).unwrap();
            let (ac, _) = epe_loss(&a, &c).unwrap();
            assert!(ab >= 0.0 && bc >= 0.0 && ac >= 0.0);
            assert!(ac <= ab + bc + 3.0 * EPE_EPSILON + 1e-6);
        }
    }
}
