//! Minimal image container: planar f64 pixels in `[0, 1]`, 1 or 3 channels.

use crate::error::{Error, Result};

/// An image with planar channel layout: `data[c*w*h + y*w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        let channels = planes.len();
        if channels != 1 && channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected 1 or 3 planes, got {channels}"
            )));
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for p in &planes {
            if p.len() != width * height {
                return Err(Error::DimensionMismatch(format!(
                    "plane has {} values, expected {}",
                    p.len(),
                    width * height
                )));
            }
            data.extend_from_slice(p);
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Build a single-channel image from a function of (x, y).
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut img = Image::new(width, height, 1);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let wh = self.width * self.height;
        &self.data[c * wh..(c + 1) * wh]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let wh = self.width * self.height;
        &mut self.data[c * wh..(c + 1) * wh]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[c * self.width * self.height + y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// True when every sample is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamp every sample into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Luma conversion (BT.601 weights for color, identity for gray).
    pub fn to_luma(&self) -> Vec<f64> {
        let wh = self.width * self.height;
        if self.channels == 1 {
            return self.data[..wh].to_vec();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        (0..wh)
            .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
            .collect()
    }
}

/// Bilinear sample of a plane at real coordinates (x, y).
///
/// Coordinates outside `[0, w-1] x [0, h-1]` are clamped to the border;
/// the returned flag is false for such samples.
pub fn sample_bilinear(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> (f64, bool) {
    let in_bounds =
        x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64;
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = (xc.floor() as usize).min(width - 1);
    let y0 = (yc.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let v00 = plane[y0 * width + x0];
    let v10 = plane[y0 * width + x1];
    let v01 = plane[y1 * width + x0];
    let v11 = plane[y1 * width + x1];
    let v = v00 * (1.0 - fx) * (1.0 - fy)
        + v10 * fx * (1.0 - fy)
        + v01 * (1.0 - fx) * fy
        + v11 * fx * fy;
    (v, in_bounds)
}

/// Bilinear sample plus the analytic spatial gradient of the interpolant.
///
/// The gradient is the within-cell derivative of the bilinear surface, which
/// makes first-order expansions of the warp exact up to the cell boundary.
pub fn sample_bilinear_grad(
    plane: &[f64],
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> (f64, f64, f64, bool) {
    let in_bounds =
        x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64;
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = (xc.floor() as usize).min(width.saturating_sub(2));
    let y0 = (yc.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let v00 = plane[y0 * width + x0];
    let v10 = plane[y0 * width + x1];
    let v01 = plane[y1 * width + x0];
    let v11 = plane[y1 * width + x1];
    let v = v00 * (1.0 - fx) * (1.0 - fy)
        + v10 * fx * (1.0 - fy)
        + v01 * (1.0 - fx) * fy
        + v11 * fx * fy;
    let dvx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
    let dvy = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx;
    (v, dvx, dvy, in_bounds)
}
