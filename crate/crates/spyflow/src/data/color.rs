use crate::flow::FlowField;
use crate::tensor::Tensor;

/// Direction-as-hue, magnitude-as-saturation flow rendering.
///
/// Hue encodes the angle of `(u, v)`, saturation the magnitude normalized by
/// `max_mag` (the field's own maximum when absent; 1 for a zero field),
/// value is fixed at 1, so zero flow renders white.
pub fn flow_to_color(flow: &FlowField, max_mag: Option<f32>) -> Tensor {
    let norm = max_mag.unwrap_or_else(|| {
        let m = flow
            .u
            .iter()
            .zip(&flow.v)
            .map(|(&u, &v)| (u * u + v * v).sqrt())
            .fold(0.0f32, f32::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    });
    let mut out = Tensor::zeros(vec![3, flow.height, flow.width]);
    for y in 0..flow.height {
        for x in 0..flow.width {
            let u = flow.u_at(x, y);
            let v = flow.v_at(x, y);
            let mag = (u * u + v * v).sqrt();
            let sat = (mag / norm).clamp(0.0, 1.0);
            let hue = {
                let a = v.atan2(u) / (2.0 * std::f32::consts::PI);
                if a < 0.0 {
                    a + 1.0
                } else {
                    a
                }
            };
            let [r, g, b] = hsv_to_rgb(hue, sat, 1.0);
            out.set3(0, y, x, r);
            out.set3(1, y, x, g);
            out.set3(2, y, x, b);
        }
    }
    out
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let i = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(5, 4), None);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn self_normalization_is_scale_invariant() {
        let mut a = FlowField::zeros(6, 6);
        for i in 0..36 {
            a.u[i] = (i as f32).sin();
            a.v[i] = (i as f32).cos() * 2.0;
        }
        let mut b = a.clone();
        for x in b.u.iter_mut().chain(b.v.iter_mut()) {
            *x *= 3.5;
        }
        let ia = flow_to_color(&a, None);
        let ib = flow_to_color(&b, None);
        for (p, q) in ia.data().iter().zip(ib.data()) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn max_magnitude_pixel_is_fully_saturated_at_hue_zero() {
        let mut f = FlowField::zeros(3, 1);
        f.set(0, 0, 2.0, 0.0); // the max, pointing along +x
        f.set(1, 0, 1.0, 0.0);
        let img = flow_to_color(&f, None);
        // hue 0, sat 1, val 1 -> pure red
        assert!((img.at3(0, 0, 0) - 1.0).abs() < 1e-6);
        assert!(img.at3(1, 0, 0).abs() < 1e-6);
        assert!(img.at3(2, 0, 0).abs() < 1e-6);
    }
}
