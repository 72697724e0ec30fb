use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pixel 2-d displacement field in pixel units at its own resolution.
///
/// `u` is horizontal (x) displacement, `v` vertical (y), both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn u_at(&self, x: usize, y: usize) -> f32 {
        self.u[y * self.width + x]
    }

    pub fn v_at(&self, x: usize, y: usize) -> f32 {
        self.v[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        self.u[y * self.width + x] = u;
        self.v[y * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn same_resolution(&self, other: &FlowField, context: &str) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(
                context,
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Stacks (u, v) into a `[2, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(2 * self.num_pixels());
        data.extend_from_slice(&self.u);
        data.extend_from_slice(&self.v);
        Tensor::new(vec![2, self.height, self.width], data).expect("consistent flow buffers")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        if c != 2 {
            return Err(Error::shape("FlowField::from_tensor", "2 channels", c));
        }
        let n = h * w;
        Ok(FlowField {
            width: w,
            height: h,
            u: t.data()[..n].to_vec(),
            v: t.data()[n..].to_vec(),
        })
    }
}
