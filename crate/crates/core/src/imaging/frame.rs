use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded RGB raster, row-major `H×W×3`, channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    pub timestamp: i64,
}

impl Frame {
    /// Builds a frame, clamping every channel into `[0, 1]`. Non-finite
    /// values are rejected.
    pub fn new(width: usize, height: usize, mut pixels: Vec<f64>, timestamp: i64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("empty frame {width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::dim(format!(
                "frame {width}x{height} needs {} values, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("frame contains non-finite values"));
        }
        for v in &mut pixels {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Frame {
            width,
            height,
            pixels,
            timestamp,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let pixels = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, pixels, 0)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels, 0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for (dst, v) in self.pixels[i..i + 3].iter_mut().zip(rgb) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    /// Rec. 601 luma per pixel, row-major `H×W`.
    pub fn luminance(&self) -> Vec<f64> {
        self.pixels
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Channel-first `[3×H×W]` tensor.
    pub fn to_chw(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut data = vec![0.0; 3 * hw];
        for (i, p) in self.pixels.chunks(3).enumerate() {
            for c in 0..3 {
                data[c * hw + i] = p[c];
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("frame extents are nonzero")
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Dense displacement field in pixels/frame; `u` rightward, `v` downward.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 || u.len() != n || v.len() != n {
            return Err(Error::dim(format!(
                "flow {width}x{height} with planes of {} and {}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::contract("flow field contains non-finite values"));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Rounds both planes to fp32 precision, the resolution of the on-disk
    /// flow cache.
    pub fn quantize_f32(&mut self) {
        for x in self.u.iter_mut().chain(self.v.iter_mut()) {
            *x = *x as f32 as f64;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}
