use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;

/// Augmentation configuration. Applied in order: random scale, random
/// rotation, random crop, additive Gaussian noise, color jitter, per-channel
/// normalization.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Uniform scale factor range; minimum must be >= 1.
    pub scale_range: (f32, f32),
    /// Rotation range in degrees, symmetric interval.
    pub rotation_range_deg: (f32, f32),
    /// Per-sample noise level drawn uniformly from `[0, noise_sigma_max]`.
    pub noise_sigma_max: f32,
    /// Std-dev of the brightness/contrast/saturation offsets.
    pub jitter_sigma: f32,
    /// Enable random horizontal/vertical mirroring (exact, no resampling).
    pub flips: bool,
    /// When positive, replace each sample's second frame by the first frame
    /// re-rendered under a freshly drawn constant translation of at most this
    /// many pixels (the ground truth becomes that translation). This breaks
    /// any correlation between appearance and motion in a small dataset: the
    /// same texture appears under arbitrary motions, so only correspondence
    /// between the two frames predicts the flow. Zero disables.
    pub motion_resynthesis_max_disp: f32,
    pub crop_height: usize,
    pub crop_width: usize,
    /// Normalization constants (widely published ImageNet statistics by
    /// default; overridable).
    pub rgb_mean: [f32; 3],
    pub rgb_std: [f32; 3],
}

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

impl AugmentConfig {
    /// The full training augmentation: scale [1,2], rotation +-17 degrees,
    /// noise sigma up to 0.1, jitter sigma 0.4.
    pub fn full(crop_height: usize, crop_width: usize) -> Self {
        AugmentConfig {
            scale_range: (1.0, 2.0),
            rotation_range_deg: (-17.0, 17.0),
            noise_sigma_max: 0.1,
            jitter_sigma: 0.4,
            flips: true,
            motion_resynthesis_max_disp: 0.0,
            crop_height,
            crop_width,
            rgb_mean: IMAGENET_MEAN,
            rgb_std: IMAGENET_STD,
        }
    }

    /// Geometry and photometry disabled; only the centered crop and
    /// normalization remain.
    pub fn identity(crop_height: usize, crop_width: usize) -> Self {
        AugmentConfig {
            scale_range: (1.0, 1.0),
            rotation_range_deg: (0.0, 0.0),
            noise_sigma_max: 0.0,
            jitter_sigma: 0.0,
            flips: false,
            motion_resynthesis_max_disp: 0.0,
            crop_height,
            crop_width,
            rgb_mean: IMAGENET_MEAN,
            rgb_std: IMAGENET_STD,
        }
    }

    pub fn with_crop(&self, crop_height: usize, crop_width: usize) -> Self {
        AugmentConfig {
            crop_height,
            crop_width,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_range.0 < 1.0 || self.scale_range.1 < self.scale_range.0 {
            return Err(Error::InvalidConfig(format!(
                "scale range [{}, {}] must satisfy 1 <= min <= max",
                self.scale_range.0, self.scale_range.1
            )));
        }
        if self.noise_sigma_max < 0.0 || self.jitter_sigma < 0.0 {
            return Err(Error::InvalidConfig("negative sigma".into()));
        }
        if self.motion_resynthesis_max_disp < 0.0 {
            return Err(Error::InvalidConfig(
                "negative motion resynthesis displacement".into(),
            ));
        }
        if self.crop_height == 0 || self.crop_width == 0 {
            return Err(Error::InvalidConfig("zero crop size".into()));
        }
        Ok(())
    }
}

/// The random choices of one augmentation, split out so tests can force
/// specific transforms.
#[derive(Debug, Clone)]
pub struct AugmentDraws {
    pub scale: f32,
    pub angle_deg: f32,
    /// Crop top-left in the scaled image.
    pub crop_x: usize,
    pub crop_y: usize,
    /// Per-sample noise level.
    pub noise_sigma: f32,
    /// Shared brightness, contrast, saturation offsets.
    pub jitter: [f32; 3],
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentDraws {
    /// No-op transform with a centered crop.
    pub fn identity_centered(sample: &Sample, cfg: &AugmentConfig) -> Result<Self> {
        let (_, h, w) = sample.frame1.chw()?;
        Ok(AugmentDraws {
            scale: 1.0,
            angle_deg: 0.0,
            crop_x: (w.saturating_sub(cfg.crop_width)) / 2,
            crop_y: (h.saturating_sub(cfg.crop_height)) / 2,
            noise_sigma: 0.0,
            jitter: [0.0; 3],
            flip_h: false,
            flip_v: false,
        })
    }
}

fn sample_bilinear_clamped(t: &Tensor, ch: usize, xs: f32, ys: f32) -> f32 {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let xs = xs.clamp(0.0, (w - 1) as f32);
    let ys = ys.clamp(0.0, (h - 1) as f32);
    let x0 = xs.floor() as usize;
    let y0 = ys.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xs - x0 as f32;
    let fy = ys - y0 as f32;
    let top = t.at3(ch, y0, x0) * (1.0 - fx) + t.at3(ch, y0, x1) * fx;
    let bot = t.at3(ch, y1, x0) * (1.0 - fx) + t.at3(ch, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Applies a forced set of draws. `noise_rng` supplies the i.i.d. pixel
/// noise (independent per frame; the geometric transform and jitter are
/// shared between frames).
pub fn augment_with_draws(
    sample: &Sample,
    cfg: &AugmentConfig,
    draws: &AugmentDraws,
    noise_rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    cfg.validate()?;
    sample.validate()?;
    let (_, h, w) = sample.frame1.chw()?;
    let s = draws.scale;
    let scaled_w = (w as f32 * s).floor() as usize;
    let scaled_h = (h as f32 * s).floor() as usize;
    if cfg.crop_width > scaled_w || cfg.crop_height > scaled_h {
        return Err(Error::InvalidConfig(format!(
            "crop {}x{} exceeds scaled image {}x{}",
            cfg.crop_width, cfg.crop_height, scaled_w, scaled_h
        )));
    }
    if draws.crop_x + cfg.crop_width > scaled_w || draws.crop_y + cfg.crop_height > scaled_h {
        return Err(Error::InvalidConfig("crop offset out of range".into()));
    }

    let (ch, cw) = (cfg.crop_height, cfg.crop_width);
    let theta = draws.angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    // rotation happens about the scaled-image center
    let cx = (scaled_w as f32 - 1.0) / 2.0;
    let cy = (scaled_h as f32 - 1.0) / 2.0;

    // inverse map: crop pixel -> scaled/rotated coords -> source coords
    let source_pos = |px: usize, py: usize| -> (f32, f32) {
        let qx = (px + draws.crop_x) as f32 - cx;
        let qy = (py + draws.crop_y) as f32 - cy;
        let rx = cos * qx + sin * qy + cx;
        let ry = -sin * qx + cos * qy + cy;
        (rx / s, ry / s)
    };

    let mut frame1 = Tensor::zeros(vec![3, ch, cw]);
    let mut frame2 = Tensor::zeros(vec![3, ch, cw]);
    let mut flow = FlowField::zeros(cw, ch);
    for py in 0..ch {
        for px in 0..cw {
            let (sx, sy) = source_pos(px, py);
            for c in 0..3 {
                frame1.set3(c, py, px, sample_bilinear_clamped(&sample.frame1, c, sx, sy));
                frame2.set3(c, py, px, sample_bilinear_clamped(&sample.frame2, c, sx, sy));
            }
            // resample the flow field, then rotate and scale the vectors
            let fu = sample_bilinear_clamped_plane(&sample.gt_flow.u, w, h, sx, sy);
            let fv = sample_bilinear_clamped_plane(&sample.gt_flow.v, w, h, sx, sy);
            let ru = s * (cos * fu - sin * fv);
            let rv = s * (sin * fu + cos * fv);
            flow.set(px, py, ru, rv);
        }
    }

    // additive Gaussian noise, independent pixel draws per frame
    if draws.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, draws.noise_sigma).expect("sigma >= 0");
        for frame in [&mut frame1, &mut frame2] {
            for v in frame.data_mut() {
                *v += normal.sample(noise_rng);
            }
        }
    }

    // color jitter, shared between frames, pixel values clamped to [0, 1]
    let [db, dc, ds] = draws.jitter;
    for frame in [&mut frame1, &mut frame2] {
        let mean = frame.data().iter().sum::<f32>() / frame.len() as f32;
        let n = ch * cw;
        for i in 0..n {
            let (r, g, b) = (
                frame.data()[i],
                frame.data()[n + i],
                frame.data()[2 * n + i],
            );
            let lum = luminance(r, g, b);
            let adjust = |x: f32| {
                let x = mean + (1.0 + dc) * (x - mean); // contrast
                let x = x + ds * (lum - x); // saturation toward luminance
                (x + db).clamp(0.0, 1.0) // brightness, then clamp
            };
            frame.data_mut()[i] = adjust(r);
            frame.data_mut()[n + i] = adjust(g);
            frame.data_mut()[2 * n + i] = adjust(b);
        }
    }

    // exact mirroring: reverse pixel order and negate the matching flow
    // component; no resampling involved
    if draws.flip_h {
        flip_tensor(&mut frame1, true);
        flip_tensor(&mut frame2, true);
        flip_plane(&mut flow.u, cw, ch, true);
        flip_plane(&mut flow.v, cw, ch, true);
        for u in flow.u.iter_mut() {
            *u = -*u;
        }
    }
    if draws.flip_v {
        flip_tensor(&mut frame1, false);
        flip_tensor(&mut frame2, false);
        flip_plane(&mut flow.u, cw, ch, false);
        flip_plane(&mut flow.v, cw, ch, false);
        for v in flow.v.iter_mut() {
            *v = -*v;
        }
    }

    let frame1 = normalize_image(&frame1, cfg.rgb_mean, cfg.rgb_std)?;
    let frame2 = normalize_image(&frame2, cfg.rgb_mean, cfg.rgb_std)?;

    Ok(Sample {
        frame1,
        frame2,
        gt_flow: flow,
        seed: sample.seed,
    })
}

fn flip_tensor(t: &mut Tensor, horizontal: bool) {
    let (c, h, w) = t.chw().expect("rank 3");
    for ch in 0..c {
        let plane = &mut t.data_mut()[ch * h * w..(ch + 1) * h * w];
        flip_plane(plane, w, h, horizontal);
    }
}

fn flip_plane(plane: &mut [f32], w: usize, h: usize, horizontal: bool) {
    if horizontal {
        for y in 0..h {
            plane[y * w..(y + 1) * w].reverse();
        }
    } else {
        for y in 0..h / 2 {
            for x in 0..w {
                plane.swap(y * w + x, (h - 1 - y) * w + x);
            }
        }
    }
}

/// Re-renders `sample` so the second frame shows the first frame's scene
/// under the constant translation `(u, v)`, with that translation as ground
/// truth. With the correspondence `frame1(p) = frame2(p + V)`, the new second
/// frame is `frame2(q) = frame1(q - V)`, clamped bilinear at the borders.
pub fn resynthesize_motion(sample: &Sample, u: f32, v: f32) -> Result<Sample> {
    let (_, h, w) = sample.frame1.chw()?;
    let mut frame2 = Tensor::zeros(vec![3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x as f32 - u, y as f32 - v);
            for c in 0..3 {
                frame2.set3(c, y, x, sample_bilinear_clamped(&sample.frame1, c, sx, sy));
            }
        }
    }
    Ok(Sample {
        frame1: sample.frame1.clone(),
        frame2,
        gt_flow: FlowField::constant(w, h, u, v),
        seed: sample.seed,
    })
}

/// Per-channel `(x - mean) / std` on an RGB tensor. Inference inputs must go
/// through this with the same constants the model was trained with.
pub fn normalize_image(image: &Tensor, mean: [f32; 3], std: [f32; 3]) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::shape("normalize_image channels", 3, c));
    }
    let mut out = image.clone();
    let n = h * w;
    for ch in 0..3 {
        for v in &mut out.data_mut()[ch * n..(ch + 1) * n] {
            *v = (*v - mean[ch]) / std[ch];
        }
    }
    Ok(out)
}

fn sample_bilinear_clamped_plane(plane: &[f32], w: usize, h: usize, xs: f32, ys: f32) -> f32 {
    let xs = xs.clamp(0.0, (w - 1) as f32);
    let ys = ys.clamp(0.0, (h - 1) as f32);
    let x0 = xs.floor() as usize;
    let y0 = ys.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = xs - x0 as f32;
    let fy = ys - y0 as f32;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Draws scale, rotation, crop placement, noise level and jitter from `rng`
/// and applies them.
pub fn augment_sample(
    sample: &Sample,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    cfg.validate()?;
    let resynthesized;
    let sample = if cfg.motion_resynthesis_max_disp > 0.0 {
        let angle = rng.gen_range(0.0..std::f32::consts::TAU);
        let mag = rng.gen_range(0.0..=cfg.motion_resynthesis_max_disp);
        resynthesized = resynthesize_motion(sample, mag * angle.cos(), mag * angle.sin())?;
        &resynthesized
    } else {
        sample
    };
    let (_, h, w) = sample.frame1.chw()?;
    let scale = if cfg.scale_range.1 > cfg.scale_range.0 {
        rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1)
    } else {
        cfg.scale_range.0
    };
    let angle_deg = if cfg.rotation_range_deg.1 > cfg.rotation_range_deg.0 {
        rng.gen_range(cfg.rotation_range_deg.0..=cfg.rotation_range_deg.1)
    } else {
        cfg.rotation_range_deg.0
    };
    let scaled_w = (w as f32 * scale).floor() as usize;
    let scaled_h = (h as f32 * scale).floor() as usize;
    if cfg.crop_width > scaled_w || cfg.crop_height > scaled_h {
        return Err(Error::InvalidConfig(format!(
            "crop {}x{} exceeds scaled image {}x{}",
            cfg.crop_width, cfg.crop_height, scaled_w, scaled_h
        )));
    }
    let crop_x = rng.gen_range(0..=scaled_w - cfg.crop_width);
    let crop_y = rng.gen_range(0..=scaled_h - cfg.crop_height);
    let noise_sigma = if cfg.noise_sigma_max > 0.0 {
        rng.gen_range(0.0..=cfg.noise_sigma_max)
    } else {
        0.0
    };
    let jitter = if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0f32, cfg.jitter_sigma).expect("sigma > 0");
        [
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
        ]
    } else {
        [0.0; 3]
    };
    let (flip_h, flip_v) = if cfg.flips {
        (rng.gen::<bool>(), rng.gen::<bool>())
    } else {
        (false, false)
    };
    let draws = AugmentDraws {
        scale,
        angle_deg,
        crop_x,
        crop_y,
        noise_sigma,
        jitter,
        flip_h,
        flip_v,
    };
    augment_with_draws(sample, cfg, &draws, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, SynthSpec};
    use crate::pyramid::warp;
    use rand::SeedableRng;

    fn test_sample(w: usize, h: usize, u: f32, v: f32) -> Sample {
        let spec = SynthSpec::constant_translation(w, h, 0.0);
        let mut s = generate_sample(&spec, 42).unwrap();
        s.gt_flow = FlowField::constant(w, h, u, v);
        s
    }

    #[test]
    fn identity_draw_only_normalizes() {
        let spec = SynthSpec::constant_translation(32, 24, 2.0);
        let sample = generate_sample(&spec, 1).unwrap();
        let cfg = AugmentConfig::identity(24, 32);
        let draws = AugmentDraws::identity_centered(&sample, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_with_draws(&sample, &cfg, &draws, &mut rng).unwrap();
        let n = 24 * 32;
        for c in 0..3 {
            for i in 0..n {
                let expect =
                    (sample.frame1.data()[c * n + i] - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
                assert!((out.frame1.data()[c * n + i] - expect).abs() < 1e-5);
            }
        }
        for i in 0..n {
            assert!((out.gt_flow.u[i] - sample.gt_flow.u[i]).abs() < 1e-5);
            assert!((out.gt_flow.v[i] - sample.gt_flow.v[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn pure_scale_doubles_flow_values() {
        let sample = test_sample(16, 12, 3.0, 1.0);
        let cfg = AugmentConfig::identity(12, 16);
        let draws = AugmentDraws {
            scale: 2.0,
            angle_deg: 0.0,
            crop_x: 4,
            crop_y: 3,
            noise_sigma: 0.0,
            jitter: [0.0; 3],
            flip_h: false,
            flip_v: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_with_draws(&sample, &cfg, &draws, &mut rng).unwrap();
        assert!(out.gt_flow.u.iter().all(|&u| (u - 6.0).abs() < 1e-4));
        assert!(out.gt_flow.v.iter().all(|&v| (v - 2.0).abs() < 1e-4));
    }

    #[test]
    fn pure_rotation_rotates_flow_vectors() {
        let sample = test_sample(20, 20, 1.0, 0.0);
        let cfg = AugmentConfig::identity(10, 10);
        let draws = AugmentDraws {
            scale: 1.0,
            angle_deg: 90.0,
            crop_x: 5,
            crop_y: 5,
            noise_sigma: 0.0,
            jitter: [0.0; 3],
            flip_h: false,
            flip_v: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_with_draws(&sample, &cfg, &draws, &mut rng).unwrap();
        // interior of a constant field: (1, 0) rotated by 90 degrees -> (0, 1)
        for y in 2..8 {
            for x in 2..8 {
                assert!(out.gt_flow.u_at(x, y).abs() < 1e-3, "u at ({x},{y})");
                assert!((out.gt_flow.v_at(x, y) - 1.0).abs() < 1e-3, "v at ({x},{y})");
            }
        }
    }

    #[test]
    fn horizontal_flip_mirrors_pixels_and_negates_u() {
        let sample = test_sample(16, 12, 3.0, 1.0);
        let cfg = AugmentConfig::identity(12, 16);
        let draws = AugmentDraws {
            flip_h: true,
            ..AugmentDraws::identity_centered(&sample, &cfg).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_with_draws(&sample, &cfg, &draws, &mut rng).unwrap();
        assert!(out.gt_flow.u.iter().all(|&u| (u + 3.0).abs() < 1e-5));
        assert!(out.gt_flow.v.iter().all(|&v| (v - 1.0).abs() < 1e-5));
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..16 {
                    let expect = (sample.frame1.at3(c, y, 15 - x) - IMAGENET_MEAN[c])
                        / IMAGENET_STD[c];
                    assert!((out.frame1.at3(c, y, x) - expect).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn vertical_flip_mirrors_pixels_and_negates_v() {
        let sample = test_sample(16, 12, 3.0, 1.0);
        let cfg = AugmentConfig::identity(12, 16);
        let draws = AugmentDraws {
            flip_v: true,
            ..AugmentDraws::identity_centered(&sample, &cfg).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_with_draws(&sample, &cfg, &draws, &mut rng).unwrap();
        assert!(out.gt_flow.u.iter().all(|&u| (u - 3.0).abs() < 1e-5));
        assert!(out.gt_flow.v.iter().all(|&v| (v + 1.0).abs() < 1e-5));
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..16 {
                    let expect = (sample.frame2.at3(c, 11 - y, x) - IMAGENET_MEAN[c])
                        / IMAGENET_STD[c];
                    assert!((out.frame2.at3(c, y, x) - expect).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn oversized_crop_rejected() {
        let sample = test_sample(16, 12, 0.0, 0.0);
        let cfg = AugmentConfig::identity(24, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = augment_sample(&sample, &cfg, &mut rng).unwrap_err();
        assert!(err.to_string().contains("crop"), "{err}");
    }

    #[test]
    fn geometric_transform_keeps_frames_consistent() {
        // warping the augmented second frame by the augmented flow should
        // reconstruct the augmented first frame (no noise/jitter)
        let spec = SynthSpec::constant_translation(48, 40, 3.0);
        let sample = generate_sample(&spec, 9).unwrap();
        let mut cfg = AugmentConfig::identity(24, 32);
        cfg.scale_range = (1.0, 1.4);
        cfg.rotation_range_deg = (-10.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let out = augment_sample(&sample, &cfg, &mut rng).unwrap();
        let rewarped = warp(&out.frame2, &out.gt_flow).unwrap();
        // skip a border band where clamped sampling breaks correspondence
        let (hh, ww) = (24usize, 32usize);
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for c in 0..3 {
            for y in 6..hh - 6 {
                for x in 6..ww - 6 {
                    acc += (rewarped.at3(c, y, x) - out.frame1.at3(c, y, x)).abs() as f64;
                    count += 1;
                }
            }
        }
        // images are normalized, so rescale the tolerance by the std band
        let mae = acc / count as f64;
        assert!(mae < 0.05 / 0.22, "mae {mae}");
    }

    #[test]
    fn flipped_transform_keeps_frames_consistent() {
        let spec = SynthSpec::constant_translation(48, 40, 3.0);
        let sample = generate_sample(&spec, 9).unwrap();
        let cfg = AugmentConfig::identity(24, 32);
        for (flip_h, flip_v) in [(true, false), (false, true), (true, true)] {
            let draws = AugmentDraws {
                flip_h,
                flip_v,
                ..AugmentDraws::identity_centered(&sample, &cfg).unwrap()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = augment_with_draws(&sample, &cfg, &draws, &mut rng).unwrap();
            let rewarped = warp(&out.frame2, &out.gt_flow).unwrap();
            let (hh, ww) = (24usize, 32usize);
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for c in 0..3 {
                for y in 6..hh - 6 {
                    for x in 6..ww - 6 {
                        acc += (rewarped.at3(c, y, x) - out.frame1.at3(c, y, x)).abs() as f64;
                        count += 1;
                    }
                }
            }
            let mae = acc / count as f64;
            assert!(mae < 0.05 / 0.22, "flip ({flip_h},{flip_v}) mae {mae}");
        }
    }

    #[test]
    fn resynthesized_motion_is_warp_consistent() {
        let spec = SynthSpec::constant_translation(48, 40, 3.0);
        let sample = generate_sample(&spec, 9).unwrap();
        let out = resynthesize_motion(&sample, 1.7, -2.3).unwrap();
        assert!(out.gt_flow.u.iter().all(|&u| (u - 1.7).abs() < 1e-6));
        assert!(out.gt_flow.v.iter().all(|&v| (v + 2.3).abs() < 1e-6));
        let rewarped = warp(&out.frame2, &out.gt_flow).unwrap();
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for c in 0..3 {
            for y in 6..34 {
                for x in 6..42 {
                    acc += (rewarped.at3(c, y, x) - out.frame1.at3(c, y, x)).abs() as f64;
                    count += 1;
                }
            }
        }
        // double bilinear resampling; interior agreement should still be tight
        let mae = acc / count as f64;
        assert!(mae < 0.02, "mae {mae}");
    }

    #[test]
    fn noise_draws_are_independent_per_frame() {
        let sample = test_sample(16, 16, 0.0, 0.0);
        let cfg = AugmentConfig {
            noise_sigma_max: 0.1,
            ..AugmentConfig::identity(16, 16)
        };
        let draws = AugmentDraws {
            noise_sigma: 0.1,
            ..AugmentDraws::identity_centered(&sample, &cfg).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_with_draws(&sample, &cfg, &draws, &mut rng).unwrap();
        // the two frames share the scene but must not share noise
        let diff: f32 = out
            .frame1
            .data()
            .iter()
            .zip(out.frame2.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1.0);
    }
}
