//! Multi-scale structural similarity on the luma plane.

use crate::backends::ImageTensor;
use crate::error::{Error, Result};

/// Per-scale exponents from the original multi-scale SSIM calibration.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimConfig {
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        Self {
            weights: MS_SSIM_WEIGHTS.to_vec(),
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl MsSsimConfig {
    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    /// Smallest image side that survives the downsampling cascade.
    pub fn min_side(&self) -> usize {
        (1 << (self.scales() - 1)) * self.window
    }
}

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&other.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |yy: usize, xx: usize| self.v[yy * self.w + xx];
                v.push(
                    (at(2 * y, 2 * x)
                        + at(2 * y, 2 * x + 1)
                        + at(2 * y + 1, 2 * x)
                        + at(2 * y + 1, 2 * x + 1))
                        / 4.0,
                );
            }
        }
        Plane { w, h, v }
    }

    /// Valid-mode separable convolution.
    fn filter(&self, kernel: &[f64]) -> Plane {
        let k = kernel.len();
        let w1 = self.w - k + 1;
        let h1 = self.h - k + 1;
        let mut tmp = vec![0.0; self.h * w1];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..w1 {
                tmp[y * w1 + x] = kernel.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0.0; h1 * w1];
        for y in 0..h1 {
            for x in 0..w1 {
                v[y * w1 + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * tmp[(y + i) * w1 + x])
                    .sum();
            }
        }
        Plane { w: w1, h: h1, v }
    }
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Returns `(mean cs, mean ssim)` at one scale.
fn ssim_components(x: &Plane, y: &Plane, kernel: &[f64], c1: f64, c2: f64) -> (f64, f64) {
    let mu_x = x.filter(kernel);
    let mu_y = y.filter(kernel);
    let xx = x.map(x, |a, b| a * b).filter(kernel);
    let yy = y.map(y, |a, b| a * b).filter(kernel);
    let xy = x.map(y, |a, b| a * b).filter(kernel);
    let n = mu_x.v.len();
    let mut cs_sum = 0.0;
    let mut ssim_sum = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x.v[i], mu_y.v[i]);
        let sx = xx.v[i] - mx * mx;
        let sy = yy.v[i] - my * my;
        let sxy = xy.v[i] - mx * my;
        let cs = (2.0 * sxy + c2) / (sx + sy + c2);
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    (cs_sum / n as f64, ssim_sum / n as f64)
}

pub fn ms_ssim_with(x: &ImageTensor, y: &ImageTensor, cfg: &MsSsimConfig) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::InvalidImage(format!(
            "resolution mismatch: {}x{} vs {}x{}",
            x.width(),
            x.height(),
            y.width(),
            y.height()
        )));
    }
    let min_side = cfg.min_side();
    if x.width().min(x.height()) < min_side {
        return Err(Error::ImageTooSmall {
            scales: cfg.scales(),
            min_side,
            width: x.width(),
            height: x.height(),
        });
    }
    let kernel = gaussian_kernel(cfg.window, cfg.sigma);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let mut px = Plane {
        w: x.width(),
        h: x.height(),
        v: x.luma(),
    };
    let mut py = Plane {
        w: y.width(),
        h: y.height(),
        v: y.luma(),
    };
    let last = cfg.scales() - 1;
    let mut value = 1.0;
    for (j, beta) in cfg.weights.iter().enumerate() {
        let (cs, ssim) = ssim_components(&px, &py, &kernel, c1, c2);
        let term = if j == last { ssim } else { cs };
        value *= term.max(0.0).powf(*beta);
        if j != last {
            px = px.downsample();
            py = py.downsample();
        }
    }
    Ok(value.clamp(0.0, 1.0))
}

/// Five-scale MS-SSIM with an 11-tap Gaussian window (sigma 1.5).
pub fn ms_ssim(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    ms_ssim_with(x, y, &MsSsimConfig::default())
}
