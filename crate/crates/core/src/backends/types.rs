use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, l2_norm};

pub const MIN_IMAGE_SIDE: usize = 8;
pub const LANDMARK_COUNT: usize = 68;

/// RGB image with values in `[0, 1]`, stored row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} is below the {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} minimum"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {width}x{height}x3, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Rec. 601 luma plane.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Returns a copy with every pixel in the half-open box set to zero.
    pub fn with_zeroed_box(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> ImageTensor {
        let mut out = self.clone();
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                for c in 0..3 {
                    out.data[(y * self.width + x) * 3 + c] = 0.0;
                }
            }
        }
        out
    }
}

/// Identity embedding produced by a face recognition model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTemplate {
    pub values: Vec<f64>,
    pub source_model_id: String,
}

impl FaceTemplate {
    pub fn new(values: Vec<f64>, source_model_id: impl Into<String>) -> Result<Self> {
        if !nn::all_finite(&values) {
            return Err(Error::InvalidVector("template has non-finite values".into()));
        }
        if l2_norm(&values) == 0.0 {
            return Err(Error::InvalidVector("template has zero norm".into()));
        }
        Ok(Self {
            values,
            source_model_id: source_model_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VLEmbedding {
    pub values: Vec<f64>,
    pub modality: Modality,
}

impl VLEmbedding {
    pub fn new(values: Vec<f64>, modality: Modality) -> Result<Self> {
        if !nn::all_finite(&values) || l2_norm(&values) == 0.0 {
            return Err(Error::InvalidVector(
                "embedding must be finite with non-zero norm".into(),
            ));
        }
        Ok(Self { values, modality })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f64>,
}

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !nn::all_finite(&values) {
            return Err(Error::InvalidVector("latent has non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub values: Vec<f64>,
    pub rng_seed: u64,
}

impl NoiseVector {
    /// Standard normal draw of length `dim` from the given seed.
    pub fn sample(dim: usize, rng_seed: u64) -> Self {
        let mut rng = nn::rng_from_seed(rng_seed);
        Self {
            values: nn::gaussian_vec(&mut rng, dim),
            rng_seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// 68-point facial landmarks in pixel coordinates `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>, width: usize, height: usize) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::InvalidVector(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                points.len()
            )));
        }
        let (w, h) = (width as f64, height as f64);
        if let Some(p) = points
            .iter()
            .find(|(x, y)| !(0.0..=w).contains(x) || !(0.0..=h).contains(y))
        {
            return Err(Error::InvalidVector(format!(
                "landmark {p:?} outside {width}x{height}"
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}
