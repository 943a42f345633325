//! RGB images, binary masks, multi-channel feature maps and bilinear
//! sampling with pixel centers at integer coordinates.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Interleaved RGB image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o] as f64, self.data[o + 1] as f64, self.data[o + 2] as f64]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o] = rgb[0] as f32;
        self.data[o + 1] = rgb[1] as f32;
        self.data[o + 2] = rgb[2] as f32;
    }

    /// Channel values widened to `f64`, interleaved.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn from_f64(width: usize, height: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), width * height * 3);
        Self { width, height, data: data.iter().map(|&v| v as f32).collect() }
    }
}

/// Binary mask, one byte per pixel (0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![1; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Pixel lookup at the nearest pixel center; false outside the image.
    #[inline]
    pub fn contains_point(&self, u: f64, v: f64) -> bool {
        let x = math::floor(u + 0.5);
        let y = math::floor(v + 0.5);
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return false;
        }
        self.get(x as usize, y as usize)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Cell and fractional offsets of a bilinear lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCell {
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
}

#[inline]
fn locate_1d(c: f64, n: usize) -> (usize, f64) {
    let i0 = ((math::ceil(c) as isize) - 1).clamp(0, n as isize - 2) as usize;
    (i0, c - i0 as f64)
}

/// Locates continuous pixel coordinates; `None` outside `[0, w−1] × [0, h−1]`.
#[inline]
pub fn locate_pixel(u: f64, v: f64, width: usize, height: usize) -> Option<PixelCell> {
    if !(u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64) || width < 2 || height < 2 {
        return None;
    }
    let (x0, fx) = locate_1d(u, width);
    let (y0, fy) = locate_1d(v, height);
    Some(PixelCell { x0, y0, fx, fy })
}

/// Dense `height × width × channels` map of `f64` features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn from_image(img: &Image) -> Self {
        Self { width: img.width, height: img.height, channels: 3, data: img.to_f64() }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    /// Bilinear sample into `out` (length `channels`).
    #[inline]
    pub fn sample(&self, cell: &PixelCell, out: &mut [f64]) {
        let PixelCell { x0, y0, fx, fy } = *cell;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x0 + 1, y0);
        let p01 = self.pixel(x0, y0 + 1);
        let p11 = self.pixel(x0 + 1, y0 + 1);
        let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        for c in 0..self.channels {
            out[c] = w[0] * p00[c] + w[1] * p10[c] + w[2] * p01[c] + w[3] * p11[c];
        }
    }

    /// `(∂/∂u, ∂/∂v)` of `g · sample(u, v)`.
    #[inline]
    pub fn sample_grad_uv(&self, cell: &PixelCell, g: &[f64]) -> (f64, f64) {
        let PixelCell { x0, y0, fx, fy } = *cell;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x0 + 1, y0);
        let p01 = self.pixel(x0, y0 + 1);
        let p11 = self.pixel(x0 + 1, y0 + 1);
        let mut du = 0.0;
        let mut dv = 0.0;
        for c in 0..self.channels {
            du += g[c] * ((1.0 - fy) * (p10[c] - p00[c]) + fy * (p11[c] - p01[c]));
            dv += g[c] * ((1.0 - fx) * (p01[c] - p00[c]) + fx * (p11[c] - p10[c]));
        }
        (du, dv)
    }

    /// Corner pixels and bilinear weights of a lookup.
    #[inline]
    pub fn corners(cell: &PixelCell) -> [((usize, usize), f64); 4] {
        let PixelCell { x0, y0, fx, fy } = *cell;
        [
            ((x0, y0), (1.0 - fx) * (1.0 - fy)),
            ((x0 + 1, y0), fx * (1.0 - fy)),
            ((x0, y0 + 1), (1.0 - fx) * fy),
            ((x0 + 1, y0 + 1), fx * fy),
        ]
    }
}
