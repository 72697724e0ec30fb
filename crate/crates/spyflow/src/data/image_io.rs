use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads an 8-bit RGB image into a `[3, H, W]` tensor scaled to `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (y, row) in rgb.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                data[c * h * w + y * w + x] = px.0[c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes a `[3, H, W]` tensor as an 8-bit RGB image, clamping to `[0, 1]`
/// and rounding to the nearest step. Use a lossless format (PNG).
pub fn write_image(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = tensor.chw()?;
    if c != 3 {
        return Err(Error::shape("write_image", "3 channels", c));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px: [u8; 3] = std::array::from_fn(|ch| {
                (tensor.at3(ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_color_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("solid.png");
        let t = Tensor::full(vec![3, 8, 8], 0.3333);
        write_image(&t, &p).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.shape(), &[3, 8, 8]);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn shape_contract() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.png");
        write_image(&Tensor::zeros(vec![3, 24, 32]), &p).unwrap();
        assert_eq!(read_image(&p).unwrap().shape(), &[3, 24, 32]);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = read_image("/nonexistent/zzz.png").unwrap_err();
        assert!(err.to_string().contains("zzz.png"), "{err}");
    }
}
