//! Plain row-major rasters used throughout the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(height, width);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::arg(format!(
                "raw buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies the `height`x`width` window starting at `origin`.
    pub fn crop(&self, origin: (usize, usize), height: usize, width: usize) -> RgbImage {
        let mut out = RgbImage::new(height, width);
        for r in 0..height {
            let src = ((origin.0 + r) * self.width + origin.1) * 3;
            let dst = r * width * 3;
            out.data[dst..dst + width * 3].copy_from_slice(&self.data[src..src + width * 3]);
        }
        out
    }

    /// Writes `tile` into this image with its top-left corner at `origin`.
    pub fn paste(&mut self, origin: (usize, usize), tile: &RgbImage) {
        for r in 0..tile.height {
            let dst = ((origin.0 + r) * self.width + origin.1) * 3;
            let src = r * tile.width * 3;
            self.data[dst..dst + tile.width * 3]
                .copy_from_slice(&tile.data[src..src + tile.width * 3]);
        }
    }

    /// ITU-R BT.601 luma in `[0, 255]`.
    pub fn luminance(&self) -> Grid<f64> {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect();
        Grid {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Channel-planar copy scaled to `[0, 1]`, as consumed by the network.
    pub fn to_planar_unit(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = f64::from(px[c]) / 255.0;
            }
        }
        out
    }
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

/// Single-channel row-major raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Bilinear resampling with pixel-centre alignment.
///
/// Identity targets reproduce the input exactly, and every output sample is a
/// convex combination of input samples.
pub fn resize_image(image: &RgbImage, target: (usize, usize)) -> Result<RgbImage> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::arg(format!("resize target {th}x{tw} has a zero dimension")));
    }
    if image.height == 0 || image.width == 0 {
        return Err(Error::arg("cannot resize an empty image"));
    }
    if (th, tw) == image.dims() {
        return Ok(image.clone());
    }
    let rows = axis_taps(image.height, th);
    let cols = axis_taps(image.width, tw);
    let mut out = RgbImage::new(th, tw);
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let p00 = image.get(r0, c0);
            let p01 = image.get(r0, c1);
            let p10 = image.get(r1, c0);
            let p11 = image.get(r1, c1);
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let top = f64::from(p00[ch]) * (1.0 - fc) + f64::from(p01[ch]) * fc;
                let bot = f64::from(p10[ch]) * (1.0 - fc) + f64::from(p11[ch]) * fc;
                let v = top * (1.0 - fr) + bot * fr;
                px[ch] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.put(r, c, px);
        }
    }
    Ok(out)
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, x - i0 as f64)
        })
        .collect()
}
