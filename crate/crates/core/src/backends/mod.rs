//! Pretrained-model interfaces and deterministic stand-ins.
//!
//! Every model the pipeline depends on sits behind a narrow trait: face
//! recognition embedders, the vision-language encoder, the style generator and
//! its mapping network, the landmark detector, the perceptual distance network,
//! and the regional attribute encoder used by FAMSE. The `stub` module provides
//! seeded affine + tanh implementations small enough for unit tests.
//!
//! Backends are immutable after construction and `Send + Sync`.

mod stub;
mod types;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use stub::{
    canonical_landmarks, pool_grid, pool_grid_transpose, StubAttributeEncoder, StubDims,
    StubFaceEmbedder, StubGenerator, StubImageProjector, StubLandmarkDetector, StubMapping,
    StubPerceptualNet, StubVlEncoder,
};
pub use types::{
    FaceTemplate, ImageTensor, LandmarkSet, LatentCode, Modality, NoiseVector, VLEmbedding,
    LANDMARK_COUNT, MIN_IMAGE_SIDE,
};

use crate::error::{Error, Result};

fn unsupported(id: &str, what: &str) -> Error {
    Error::Backend {
        id: id.to_string(),
        reason: format!("{what} is not supported by this backend"),
    }
}

pub trait FaceEmbedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Unit-norm identity template.
    fn embed(&self, image: &ImageTensor) -> Result<FaceTemplate>;
    /// Pulls `d_out` (gradient w.r.t. the template) back to the image pixels.
    fn embed_vjp(&self, _image: &ImageTensor, _d_out: &[f64]) -> Result<Vec<f64>> {
        Err(unsupported(self.id(), "embed_vjp"))
    }
}

pub trait VisionLanguageEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode_image(&self, image: &ImageTensor) -> Result<VLEmbedding>;
    fn encode_text(&self, text: &str) -> Result<VLEmbedding>;
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    fn latent_dim(&self) -> usize;
    /// `(height, width)` of generated images.
    fn resolution(&self) -> (usize, usize);
    fn generate(&self, w: &LatentCode) -> Result<ImageTensor>;
    fn generate_vjp(&self, _w: &LatentCode, _d_image: &[f64]) -> Result<Vec<f64>> {
        Err(unsupported(self.id(), "generate_vjp"))
    }
}

pub trait MappingNetwork: Send + Sync {
    fn id(&self) -> &str;
    fn z_dim(&self) -> usize;
    fn w_dim(&self) -> usize;
    fn map(&self, z: &[f64]) -> Result<LatentCode>;
}

pub trait LandmarkDetector: Send + Sync {
    fn id(&self) -> &str;
    fn detect(&self, image: &ImageTensor) -> Result<LandmarkSet>;
}

pub trait PerceptualNet: Send + Sync {
    fn id(&self) -> &str;
    /// Non-negative distance, zero for identical inputs.
    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64>;
    /// Gradient of `distance(a, b)` with respect to `b`.
    fn distance_vjp(&self, _a: &ImageTensor, _b: &ImageTensor) -> Result<Vec<f64>> {
        Err(unsupported(self.id(), "distance_vjp"))
    }
}

/// Encodes a fixed-size facial region crop into an attribute vector.
pub trait AttributeEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Side length of the square crop the encoder expects.
    fn crop_size(&self) -> usize;
    fn encode(&self, crop: &ImageTensor) -> Result<Vec<f64>>;
}

pub enum VlInput<'a> {
    Image(&'a ImageTensor),
    Text(&'a str),
}

/// Every model a run needs, looked up by role (and by id for FR models).
#[derive(Clone)]
pub struct BackendRegistry {
    fr_embedders: BTreeMap<String, Arc<dyn FaceEmbedder>>,
    pub vl_encoder: Arc<dyn VisionLanguageEncoder>,
    pub generator: Arc<dyn Generator>,
    pub mapping_network: Arc<dyn MappingNetwork>,
    pub landmark_detector: Arc<dyn LandmarkDetector>,
    pub perceptual_net: Arc<dyn PerceptualNet>,
    pub attribute_encoder: Arc<dyn AttributeEncoder>,
}

impl BackendRegistry {
    pub fn new(
        vl_encoder: Arc<dyn VisionLanguageEncoder>,
        generator: Arc<dyn Generator>,
        mapping_network: Arc<dyn MappingNetwork>,
        landmark_detector: Arc<dyn LandmarkDetector>,
        perceptual_net: Arc<dyn PerceptualNet>,
        attribute_encoder: Arc<dyn AttributeEncoder>,
    ) -> Result<Self> {
        if mapping_network.w_dim() != generator.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "mapping network output vs generator latent",
                expected: generator.latent_dim(),
                got: mapping_network.w_dim(),
            });
        }
        Ok(Self {
            fr_embedders: BTreeMap::new(),
            vl_encoder,
            generator,
            mapping_network,
            landmark_detector,
            perceptual_net,
            attribute_encoder,
        })
    }

    /// All-stub registry with a single FR embedder per id in `fr_ids`.
    pub fn stub(dims: &StubDims, seed: u64, fr_ids: &[&str]) -> Self {
        let mut reg = Self::new(
            Arc::new(StubVlEncoder::new("stub-vl", dims.d_c, seed)),
            Arc::new(StubGenerator::new(
                "stub-generator",
                dims.d_w,
                dims.image_size,
                seed,
            )),
            Arc::new(StubMapping::identity("stub-mapping", dims.d_w)),
            Arc::new(StubLandmarkDetector::new("stub-landmarks")),
            Arc::new(StubPerceptualNet::new("stub-perceptual", 32, seed)),
            Arc::new(StubAttributeEncoder::new("stub-attr", 512, 32, seed)),
        )
        .expect("stub dimensions are consistent");
        for id in fr_ids {
            reg.register_fr(Arc::new(StubFaceEmbedder::new(
                *id,
                dims.d_t,
                crate::nn::derive_seed(seed, id),
            )))
                .expect("stub ids are unique");
        }
        reg
    }

    pub fn register_fr(&mut self, embedder: Arc<dyn FaceEmbedder>) -> Result<()> {
        let id = embedder.id().to_string();
        if self.fr_embedders.contains_key(&id) {
            return Err(Error::Config(format!("duplicate FR embedder id '{id}'")));
        }
        self.fr_embedders.insert(id, embedder);
        Ok(())
    }

    pub fn fr_ids(&self) -> impl Iterator<Item = &str> {
        self.fr_embedders.keys().map(String::as_str)
    }

    pub fn fr(&self, id: &str) -> Result<&Arc<dyn FaceEmbedder>> {
        self.fr_embedders
            .get(id)
            .ok_or_else(|| Error::UnknownBackend(id.to_string()))
    }

    pub fn fr_embed(&self, embedder_id: &str, image: &ImageTensor) -> Result<FaceTemplate> {
        self.fr(embedder_id)?.embed(image)
    }

    pub fn vl_encode(&self, input: VlInput<'_>) -> Result<VLEmbedding> {
        match input {
            VlInput::Image(img) => self.vl_encoder.encode_image(img),
            VlInput::Text(t) => self.vl_encoder.encode_text(t),
        }
    }

    pub fn generate(&self, w: &LatentCode) -> Result<ImageTensor> {
        self.generator.generate(w)
    }

    /// Draws `z ~ N(0, I)` from `rng_seed` and maps it into the latent space.
    pub fn sample_prior_latent(&self, rng_seed: u64) -> Result<LatentCode> {
        let mut rng = crate::nn::rng_from_seed(rng_seed);
        let z = crate::nn::gaussian_vec(&mut rng, self.mapping_network.z_dim());
        self.mapping_network.map(&z)
    }

    pub fn detect_landmarks(&self, image: &ImageTensor) -> Result<LandmarkSet> {
        self.landmark_detector.detect(image)
    }
}
