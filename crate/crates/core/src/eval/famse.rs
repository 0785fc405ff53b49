//! Facial-attribute MSE over landmark-located eyes, nose and mouth crops.

use crate::backends::{AttributeEncoder, ImageTensor, LandmarkDetector, LandmarkSet};
use crate::error::{Error, Result};
use crate::nn;

pub const CROP_PADDING: f64 = 0.2;

/// `(name, first landmark, last landmark)` inclusive, 68-point convention.
pub const FAMSE_REGIONS: [(&str, usize, usize); 3] =
    [("eyes", 36, 47), ("nose", 27, 35), ("mouth", 48, 67)];

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl RegionBox {
    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

pub fn region_range(name: &str) -> Result<(usize, usize)> {
    FAMSE_REGIONS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(_, a, b)| (a, b))
        .ok_or_else(|| Error::UnknownRegion(name.to_string()))
}

/// Bounding box of a landmark subset, padded by `padding` of its size on each
/// side and clipped to the image.
pub fn region_box(
    landmarks: &LandmarkSet,
    first: usize,
    last: usize,
    padding: f64,
    width: usize,
    height: usize,
) -> RegionBox {
    let pts = &landmarks.points()[first..=last];
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (pw, ph) = (padding * (x1 - x0), padding * (y1 - y0));
    RegionBox {
        x0: (x0 - pw).max(0.0),
        y0: (y0 - ph).max(0.0),
        x1: (x1 + pw).min(width as f64),
        y1: (y1 + ph).min(height as f64),
    }
}

/// Bilinear resample of `bx` to a `size`x`size` crop, sampling at pixel
/// centres with edge clamping.
pub fn crop_resize(image: &ImageTensor, bx: &RegionBox, size: usize) -> Result<ImageTensor> {
    let (h, w) = (image.height(), image.width());
    let sy = (bx.y1 - bx.y0) / size as f64;
    let sx = (bx.x1 - bx.x0) / size as f64;
    let clamp = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64);
    let mut out = Vec::with_capacity(size * size * 3);
    for i in 0..size {
        let fy = clamp(bx.y0 + (i as f64 + 0.5) * sy - 0.5, h);
        let (ya, ty) = (fy.floor() as usize, fy - fy.floor());
        let yb = (ya + 1).min(h - 1);
        for j in 0..size {
            let fx = clamp(bx.x0 + (j as f64 + 0.5) * sx - 0.5, w);
            let (xa, tx) = (fx.floor() as usize, fx - fx.floor());
            let xb = (xa + 1).min(w - 1);
            for c in 0..3 {
                let top = image.pixel(ya, xa, c) * (1.0 - tx) + image.pixel(ya, xb, c) * tx;
                let bot = image.pixel(yb, xa, c) * (1.0 - tx) + image.pixel(yb, xb, c) * tx;
                out.push(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    ImageTensor::new(size, size, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamseBreakdown {
    pub per_region: Vec<(String, f64)>,
    pub mean: f64,
}

fn region_codes(
    image: &ImageTensor,
    detector: &dyn LandmarkDetector,
    encoder: &dyn AttributeEncoder,
) -> Result<Vec<Vec<f64>>> {
    let lm = detector.detect(image)?;
    FAMSE_REGIONS
        .iter()
        .map(|&(_, a, b)| {
            let bx = region_box(&lm, a, b, CROP_PADDING, image.width(), image.height());
            encoder.encode(&crop_resize(image, &bx, encoder.crop_size())?)
        })
        .collect()
}

pub fn famse_breakdown(
    x: &ImageTensor,
    y: &ImageTensor,
    detector: &dyn LandmarkDetector,
    encoder: &dyn AttributeEncoder,
) -> Result<FamseBreakdown> {
    let cx = region_codes(x, detector, encoder)?;
    let cy = region_codes(y, detector, encoder)?;
    let per_region: Vec<(String, f64)> = FAMSE_REGIONS
        .iter()
        .zip(cx.iter().zip(&cy))
        .map(|(&(name, _, _), (a, b))| (name.to_string(), nn::mean_squared_error(a, b)))
        .collect();
    let mean = per_region.iter().map(|(_, v)| v).sum::<f64>() / per_region.len() as f64;
    Ok(FamseBreakdown { per_region, mean })
}

pub fn famse(
    x: &ImageTensor,
    y: &ImageTensor,
    detector: &dyn LandmarkDetector,
    encoder: &dyn AttributeEncoder,
) -> Result<f64> {
    Ok(famse_breakdown(x, y, detector, encoder)?.mean)
}
