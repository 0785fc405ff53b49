use super::{
    AttributeEncoder, FaceEmbedder, FaceTemplate, Generator, ImageTensor, LandmarkDetector,
    LandmarkSet, LatentCode, MappingNetwork, Modality, PerceptualNet, VLEmbedding,
    VisionLanguageEncoder, LANDMARK_COUNT,
};
use crate::error::{Error, Result};
use crate::nn::{self, derive_seed, normalize_vjp, normalized, rng_from_seed, Linear};

/// Pooling grid used by every stub that reads an image.
const POOL_GRID: usize = 8;
const GENERATOR_GRID: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubDims {
    pub d_t: usize,
    pub d_c: usize,
    pub d_w: usize,
    pub image_size: usize,
}

impl Default for StubDims {
    fn default() -> Self {
        Self {
            d_t: 16,
            d_c: 16,
            d_w: 16,
            image_size: 32,
        }
    }
}

fn cell(i: usize, n: usize, grid: usize) -> usize {
    i * grid / n
}

/// Block-average pooling onto a `grid x grid x 3` feature vector.
pub fn pool_grid(image: &ImageTensor, grid: usize) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let mut sums = vec![0.0; grid * grid * 3];
    let mut counts = vec![0usize; grid * grid];
    for y in 0..h {
        let gy = cell(y, h, grid);
        for x in 0..w {
            let gx = cell(x, w, grid);
            counts[gy * grid + gx] += 1;
            for c in 0..3 {
                sums[(gy * grid + gx) * 3 + c] += image.pixel(y, x, c);
            }
        }
    }
    for (k, s) in sums.iter_mut().enumerate() {
        let n = counts[k / 3];
        if n > 0 {
            *s /= n as f64;
        }
    }
    sums
}

/// Transpose of [`pool_grid`]: spreads feature gradients back over pixels.
pub fn pool_grid_transpose(d_feat: &[f64], grid: usize, height: usize, width: usize) -> Vec<f64> {
    let mut counts = vec![0usize; grid * grid];
    for y in 0..height {
        for x in 0..width {
            counts[cell(y, height, grid) * grid + cell(x, width, grid)] += 1;
        }
    }
    let mut out = vec![0.0; height * width * 3];
    for y in 0..height {
        let gy = cell(y, height, grid);
        for x in 0..width {
            let g = gy * grid + cell(x, width, grid);
            for c in 0..3 {
                out[(y * width + x) * 3 + c] = d_feat[g * 3 + c] / counts[g] as f64;
            }
        }
    }
    out
}

/// `proj(tanh(pool(image)))` with zero-mean projection rows, so uniform
/// images contribute nothing beyond the bias.
#[derive(Debug, Clone)]
pub struct StubImageProjector {
    pub proj: Linear,
}

impl StubImageProjector {
    pub fn new(out_dim: usize, bias_scale: f64, seed: u64) -> Self {
        let in_dim = POOL_GRID * POOL_GRID * 3;
        let mut rng = rng_from_seed(seed);
        let mut proj = Linear::gaussian(in_dim, out_dim, 1.0 / (in_dim as f64).sqrt(), &mut rng);
        for o in 0..out_dim {
            let row = &mut proj.weight[o * in_dim..(o + 1) * in_dim];
            let mean = row.iter().sum::<f64>() / in_dim as f64;
            row.iter_mut().for_each(|w| *w -= mean);
        }
        proj.bias.iter_mut().for_each(|b| *b *= bias_scale);
        Self { proj }
    }

    pub fn features(&self, image: &ImageTensor) -> Vec<f64> {
        pool_grid(image, POOL_GRID)
            .into_iter()
            .map(f64::tanh)
            .collect()
    }

    pub fn forward(&self, image: &ImageTensor) -> Vec<f64> {
        self.proj.forward(&self.features(image))
    }

    /// Pulls a gradient on the projector output back to image pixels.
    pub fn vjp(&self, image: &ImageTensor, d_out: &[f64]) -> Vec<f64> {
        let feats = self.features(image);
        let d_feat: Vec<f64> = self
            .proj
            .backward_input(d_out)
            .into_iter()
            .zip(&feats)
            .map(|(d, f)| d * (1.0 - f * f))
            .collect();
        pool_grid_transpose(&d_feat, POOL_GRID, image.height(), image.width())
    }
}

/// Face recognition stand-in: `normalize(W tanh(pool(x)) + b)`.
#[derive(Debug, Clone)]
pub struct StubFaceEmbedder {
    id: String,
    net: StubImageProjector,
}

impl StubFaceEmbedder {
    pub fn new(id: impl Into<String>, dim: usize, seed: u64) -> Self {
        Self {
            id: id.into(),
            net: StubImageProjector::new(dim, 0.1, seed),
        }
    }

    pub fn weights(&self) -> &Linear {
        &self.net.proj
    }
}

impl FaceEmbedder for StubFaceEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.net.proj.out_dim
    }

    fn embed(&self, image: &ImageTensor) -> Result<FaceTemplate> {
        let pre = self.net.forward(image);
        let values = normalized(&pre).ok_or_else(|| Error::Backend {
            id: self.id.clone(),
            reason: "zero pre-normalization embedding".into(),
        })?;
        FaceTemplate::new(values, self.id.clone())
    }

    fn embed_vjp(&self, image: &ImageTensor, d_out: &[f64]) -> Result<Vec<f64>> {
        if d_out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "embed_vjp gradient",
                expected: self.dim(),
                got: d_out.len(),
            });
        }
        let pre = self.net.forward(image);
        let d_pre = normalize_vjp(&pre, d_out);
        Ok(self.net.vjp(image, &d_pre))
    }
}

/// Vision-language stand-in. Images go through a seeded projector; text is
/// hashed together with the seed into a Gaussian direction.
#[derive(Debug, Clone)]
pub struct StubVlEncoder {
    id: String,
    dim: usize,
    seed: u64,
    image_net: StubImageProjector,
}

impl StubVlEncoder {
    pub fn new(id: impl Into<String>, dim: usize, seed: u64) -> Self {
        Self {
            id: id.into(),
            dim,
            seed,
            image_net: StubImageProjector::new(dim, 0.1, derive_seed(seed, "vl-image")),
        }
    }
}

impl VisionLanguageEncoder for StubVlEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, image: &ImageTensor) -> Result<VLEmbedding> {
        let v = normalized(&self.image_net.forward(image)).ok_or_else(|| Error::Backend {
            id: self.id.clone(),
            reason: "zero image embedding".into(),
        })?;
        VLEmbedding::new(v, Modality::Image)
    }

    fn encode_text(&self, text: &str) -> Result<VLEmbedding> {
        if text.trim().is_empty() {
            return Err(Error::Empty("prompt text".into()));
        }
        let mut rng = rng_from_seed(derive_seed(self.seed, &format!("text:{text}")));
        let v = normalized(&nn::gaussian_vec(&mut rng, self.dim)).ok_or_else(|| {
            Error::Backend {
                id: self.id.clone(),
                reason: "degenerate text draw".into(),
            }
        })?;
        VLEmbedding::new(v, Modality::Text)
    }
}

/// Generator stand-in: `0.5 (1 + tanh(upsample(A w + c)))` with a 16x16 basis
/// upsampled by nearest-neighbour blocks to the output resolution.
#[derive(Debug, Clone)]
pub struct StubGenerator {
    id: String,
    size: usize,
    basis: Linear,
}

impl StubGenerator {
    pub fn new(id: impl Into<String>, latent_dim: usize, size: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut basis = Linear::gaussian(
            latent_dim,
            GENERATOR_GRID * GENERATOR_GRID * 3,
            1.5 / (latent_dim as f64).sqrt(),
            &mut rng,
        );
        basis.bias.iter_mut().for_each(|b| *b *= 0.2 * (latent_dim as f64).sqrt());
        Self {
            id: id.into(),
            size,
            basis,
        }
    }

    fn pre_activation(&self, w: &[f64]) -> Vec<f64> {
        let low = self.basis.forward(w);
        let s = self.size;
        let mut out = Vec::with_capacity(s * s * 3);
        for y in 0..s {
            let gy = cell(y, s, GENERATOR_GRID);
            for x in 0..s {
                let g = gy * GENERATOR_GRID + cell(x, s, GENERATOR_GRID);
                out.extend_from_slice(&low[g * 3..g * 3 + 3]);
            }
        }
        out
    }

    fn check_dim(&self, w: &LatentCode) -> Result<()> {
        if w.dim() != self.basis.in_dim {
            return Err(Error::DimensionMismatch {
                context: "generator latent",
                expected: self.basis.in_dim,
                got: w.dim(),
            });
        }
        Ok(())
    }
}

impl Generator for StubGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn latent_dim(&self) -> usize {
        self.basis.in_dim
    }

    fn resolution(&self) -> (usize, usize) {
        (self.size, self.size)
    }

    fn generate(&self, w: &LatentCode) -> Result<ImageTensor> {
        self.check_dim(w)?;
        let data = self
            .pre_activation(&w.values)
            .into_iter()
            .map(|p| 0.5 * (1.0 + p.tanh()))
            .collect();
        ImageTensor::new(self.size, self.size, data)
    }

    fn generate_vjp(&self, w: &LatentCode, d_image: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        let s = self.size;
        if d_image.len() != s * s * 3 {
            return Err(Error::DimensionMismatch {
                context: "generate_vjp gradient",
                expected: s * s * 3,
                got: d_image.len(),
            });
        }
        let pre = self.pre_activation(&w.values);
        let mut d_low = vec![0.0; GENERATOR_GRID * GENERATOR_GRID * 3];
        for y in 0..s {
            let gy = cell(y, s, GENERATOR_GRID);
            for x in 0..s {
                let g = gy * GENERATOR_GRID + cell(x, s, GENERATOR_GRID);
                for c in 0..3 {
                    let k = (y * s + x) * 3 + c;
                    let t = pre[k].tanh();
                    d_low[g * 3 + c] += d_image[k] * 0.5 * (1.0 - t * t);
                }
            }
        }
        Ok(self.basis.backward_input(&d_low))
    }
}

/// Mapping network stand-in: identity, or a fixed affine map of `z`.
#[derive(Debug, Clone)]
pub struct StubMapping {
    id: String,
    z_dim: usize,
    affine: Option<Linear>,
}

impl StubMapping {
    pub fn identity(id: impl Into<String>, dim: usize) -> Self {
        Self {
            id: id.into(),
            z_dim: dim,
            affine: None,
        }
    }

    pub fn affine(id: impl Into<String>, map: Linear) -> Self {
        Self {
            id: id.into(),
            z_dim: map.in_dim,
            affine: Some(map),
        }
    }

    /// Seeded square affine map with unit-scale weights and an offset.
    pub fn seeded_affine(id: impl Into<String>, dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let map = Linear::gaussian(dim, dim, 1.0 / (dim as f64).sqrt(), &mut rng);
        Self::affine(id, map)
    }
}

impl MappingNetwork for StubMapping {
    fn id(&self) -> &str {
        &self.id
    }

    fn z_dim(&self) -> usize {
        self.z_dim
    }

    fn w_dim(&self) -> usize {
        self.affine.as_ref().map_or(self.z_dim, |a| a.out_dim)
    }

    fn map(&self, z: &[f64]) -> Result<LatentCode> {
        if z.len() != self.z_dim {
            return Err(Error::DimensionMismatch {
                context: "mapping network input",
                expected: self.z_dim,
                got: z.len(),
            });
        }
        match &self.affine {
            None => LatentCode::new(z.to_vec()),
            Some(a) => LatentCode::new(a.forward(z)),
        }
    }
}

/// Canonical 68-point layout in unit coordinates `(x, y)`, following the
/// usual ordering: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
pub fn canonical_landmarks() -> [(f64, f64); LANDMARK_COUNT] {
    let mut pts = [(0.0, 0.0); LANDMARK_COUNT];
    for (k, p) in pts.iter_mut().enumerate().take(17) {
        let theta = std::f64::consts::PI * k as f64 / 16.0;
        *p = (0.5 - 0.40 * theta.cos(), 0.36 + 0.54 * theta.sin());
    }
    for i in 0..5 {
        let arch = 0.03 * (std::f64::consts::PI * i as f64 / 4.0).sin();
        let x = 0.22 + 0.055 * i as f64;
        pts[17 + i] = (x, 0.30 - arch);
        pts[26 - i] = (1.0 - x, 0.30 - arch);
    }
    for (i, y) in [0.47, 0.51, 0.55, 0.59].into_iter().enumerate() {
        pts[27 + i] = (0.5, y);
    }
    let nose_base = [
        (0.44, 0.62),
        (0.47, 0.63),
        (0.50, 0.64),
        (0.53, 0.63),
        (0.56, 0.62),
    ];
    pts[31..36].copy_from_slice(&nose_base);
    let left_eye = [
        (0.28, 0.37),
        (0.325, 0.345),
        (0.375, 0.345),
        (0.42, 0.37),
        (0.375, 0.395),
        (0.325, 0.395),
    ];
    pts[36..42].copy_from_slice(&left_eye);
    // right eye mirrors the left one, starting from its inner corner
    let right_eye = [
        (0.58, 0.37),
        (0.625, 0.345),
        (0.675, 0.345),
        (0.72, 0.37),
        (0.675, 0.395),
        (0.625, 0.395),
    ];
    pts[42..48].copy_from_slice(&right_eye);
    let mouth = [
        (0.36, 0.76),
        (0.40, 0.735),
        (0.45, 0.72),
        (0.50, 0.725),
        (0.55, 0.72),
        (0.60, 0.735),
        (0.64, 0.76),
        (0.60, 0.79),
        (0.55, 0.805),
        (0.50, 0.81),
        (0.45, 0.805),
        (0.40, 0.79),
        (0.39, 0.76),
        (0.45, 0.745),
        (0.50, 0.748),
        (0.55, 0.745),
        (0.61, 0.76),
        (0.55, 0.775),
        (0.50, 0.778),
        (0.45, 0.775),
    ];
    pts[48..68].copy_from_slice(&mouth);
    pts
}

/// Returns the canonical layout scaled to the image size. Uniform images are
/// reported as faceless.
#[derive(Debug, Clone)]
pub struct StubLandmarkDetector {
    id: String,
}

impl StubLandmarkDetector {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }
}

impl LandmarkDetector for StubLandmarkDetector {
    fn id(&self) -> &str {
        &self.id
    }

    fn detect(&self, image: &ImageTensor) -> Result<LandmarkSet> {
        let (lo, hi) = image
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if hi - lo < 1e-9 {
            return Err(Error::NoFace);
        }
        let (w, h) = (image.width() as f64, image.height() as f64);
        let pts = canonical_landmarks()
            .iter()
            .map(|&(u, v)| (u * w, v * h))
            .collect();
        LandmarkSet::new(pts, image.width(), image.height())
    }
}

/// Perceptual distance stand-in: mean squared difference of
/// `tanh(proj(tanh(pool(x))))` feature vectors.
#[derive(Debug, Clone)]
pub struct StubPerceptualNet {
    id: String,
    net: StubImageProjector,
}

impl StubPerceptualNet {
    pub fn new(id: impl Into<String>, feature_dim: usize, seed: u64) -> Self {
        Self {
            id: id.into(),
            net: StubImageProjector::new(feature_dim, 0.0, derive_seed(seed, "perceptual")),
        }
    }

    pub fn features(&self, image: &ImageTensor) -> Vec<f64> {
        self.net.forward(image).into_iter().map(f64::tanh).collect()
    }
}

impl PerceptualNet for StubPerceptualNet {
    fn id(&self) -> &str {
        &self.id
    }

    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        Ok(nn::mean_squared_error(&self.features(a), &self.features(b)))
    }

    fn distance_vjp(&self, a: &ImageTensor, b: &ImageTensor) -> Result<Vec<f64>> {
        let fa = self.features(a);
        let fb = self.features(b);
        let k = fa.len() as f64;
        let d_pre: Vec<f64> = fa
            .iter()
            .zip(&fb)
            .map(|(x, y)| 2.0 * (y - x) / k * (1.0 - y * y))
            .collect();
        Ok(self.net.vjp(b, &d_pre))
    }
}

/// Regional attribute encoder stand-in: a seeded linear projection of the
/// flattened RGB crop.
#[derive(Debug, Clone)]
pub struct StubAttributeEncoder {
    id: String,
    crop_size: usize,
    proj: Linear,
}

impl StubAttributeEncoder {
    pub fn new(id: impl Into<String>, dim: usize, crop_size: usize, seed: u64) -> Self {
        let in_dim = crop_size * crop_size * 3;
        let mut rng = rng_from_seed(derive_seed(seed, "attribute"));
        let mut proj = Linear::gaussian(in_dim, dim, 1.0 / (in_dim as f64).sqrt(), &mut rng);
        proj.bias.fill(0.0);
        Self {
            id: id.into(),
            crop_size,
            proj,
        }
    }

    pub fn weights(&self) -> &Linear {
        &self.proj
    }
}

impl AttributeEncoder for StubAttributeEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.proj.out_dim
    }

    fn crop_size(&self) -> usize {
        self.crop_size
    }

    fn encode(&self, crop: &ImageTensor) -> Result<Vec<f64>> {
        if crop.height() != self.crop_size || crop.width() != self.crop_size {
            return Err(Error::DimensionMismatch {
                context: "attribute encoder crop side",
                expected: self.crop_size,
                got: crop.height().max(crop.width()),
            });
        }
        Ok(self.proj.forward(crop.data()))
    }
}
