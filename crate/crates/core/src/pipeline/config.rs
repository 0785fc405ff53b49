//! Run configuration (TOML). Missing keys fall back to the `defaults`
//! profile; `toy` is a 16-D all-stub profile sized for quick runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{LossWeights, WGANConfig};
use crate::backends::{BackendRegistry, StubDims};
use crate::error::{Error, Result};
use crate::eval::STANDARD_FARS;
use crate::flp::{AttentionMode, FlpConfig};
use crate::taa::TAATrainConfig;

/// Env var pointing at pretrained weights for non-stub backends.
pub const WEIGHTS_DIR_ENV: &str = "FTI_WEIGHTS_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Only `stub` ships with this build.
    pub kind: String,
    /// Seed of the stub models' fixed weights (independent of the run seed).
    pub stub_seed: u64,
    pub fr_models: Vec<String>,
    pub f_database: String,
    pub f_loss: String,
    pub f_targets: Vec<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: "stub".into(),
            stub_seed: 7,
            fr_models: vec!["stub-fr-a".into(), "stub-fr-b".into()],
            f_database: "stub-fr-a".into(),
            f_loss: "stub-fr-a".into(),
            f_targets: vec!["stub-fr-a".into(), "stub-fr-b".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dims {
    pub d_t: usize,
    pub d_c: usize,
    pub d_n: usize,
    pub d_w: usize,
    pub d_model: usize,
    pub heads: usize,
    pub trunk_blocks: usize,
    pub trunk_width: usize,
    pub taa_hidden: usize,
    pub critic_hidden: usize,
    pub image_size: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            d_t: 512,
            d_c: 512,
            d_n: 512,
            d_w: 512,
            d_model: 512,
            heads: 1,
            trunk_blocks: 3,
            trunk_width: 2048,
            taa_hidden: 1024,
            critic_hidden: 512,
            image_size: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationToggles {
    pub enable_attr_embedding: bool,
    pub attention_mode: AttentionMode,
    pub enable_l_attr: bool,
    pub enable_l_perc: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        Self {
            enable_attr_embedding: true,
            attention_mode: AttentionMode::Conditional,
            enable_l_attr: true,
            enable_l_perc: true,
        }
    }
}

impl AblationToggles {
    /// Row label in the ablation tables.
    pub fn variant_name(&self) -> String {
        let mut parts = Vec::new();
        if !self.enable_attr_embedding {
            parts.push("w/o AttrEmb");
        }
        match self.attention_mode {
            AttentionMode::Conditional => {}
            AttentionMode::None => parts.push("w/o MHA"),
            AttentionMode::MhaSelfquery => parts.push("w/o ConMHA"),
        }
        match (self.enable_l_attr, self.enable_l_perc) {
            (true, true) => {}
            (false, true) => parts.push("w/o L_attr"),
            (true, false) => parts.push("w/o L_lpips"),
            (false, false) => parts.push("w/o L_attr, L_lpips"),
        }
        if parts.is_empty() {
            "Full".into()
        } else {
            parts.join(", ")
        }
    }

    /// The full model plus each single-axis variant.
    pub fn standard_variants() -> Vec<AblationToggles> {
        let full = AblationToggles::default();
        vec![
            full.clone(),
            AblationToggles {
                enable_attr_embedding: false,
                ..full.clone()
            },
            AblationToggles {
                attention_mode: AttentionMode::None,
                ..full.clone()
            },
            AblationToggles {
                attention_mode: AttentionMode::MhaSelfquery,
                ..full.clone()
            },
            AblationToggles {
                enable_l_attr: false,
                ..full.clone()
            },
            AblationToggles {
                enable_l_perc: false,
                ..full.clone()
            },
            AblationToggles {
                enable_l_attr: false,
                enable_l_perc: false,
                ..full
            },
        ]
    }

    pub fn table(&self) -> &'static str {
        if self.enable_l_attr && self.enable_l_perc {
            "module"
        } else {
            "loss"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub method: String,
    pub far_levels: Vec<f64>,
    /// FAR at which ablation rows report TAR.
    pub ablation_far: f64,
    pub impostor_cap: usize,
    pub noise_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            method: "Ours".into(),
            far_levels: STANDARD_FARS.to_vec(),
            ablation_far: 1e-3,
            impostor_cap: 1_000_000,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Prompt file; the built-in five-region bank when unset.
    pub prompts: Option<PathBuf>,
    pub backends: BackendConfig,
    pub dims: Dims,
    pub taa: TAATrainConfig,
    pub wgan: WGANConfig,
    pub loss: LossWeights,
    pub ablation: AblationToggles,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            prompts: None,
            backends: BackendConfig::default(),
            dims: Dims::default(),
            taa: TAATrainConfig::default(),
            wgan: WGANConfig::default(),
            loss: LossWeights::default(),
            ablation: AblationToggles::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Full-scale hyperparameters with 512-D production dimensions.
    pub fn defaults() -> Self {
        Self::default()
    }

    /// 16-D stubs, 32x32 images, short schedules.
    pub fn toy() -> Self {
        Self {
            dims: Dims {
                d_t: 16,
                d_c: 16,
                d_n: 16,
                d_w: 16,
                d_model: 16,
                heads: 1,
                trunk_blocks: 3,
                trunk_width: 64,
                taa_hidden: 32,
                critic_hidden: 16,
                image_size: 32,
            },
            taa: TAATrainConfig {
                learning_rate: 1e-2,
                epochs: 200,
                batch_size: 8,
                ..Default::default()
            },
            wgan: WGANConfig {
                learning_rate: 1e-2,
                lr_decay_every_epochs: 1000,
                epochs: 100,
                batch_size: 8,
                ..Default::default()
            },
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "defaults" => Ok(Self::defaults()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected defaults or toy)"
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.taa.rng_seed = seed;
        self.wgan.rng_seed = seed;
        self.eval.noise_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        for (name, v) in [
            ("d_t", d.d_t),
            ("d_c", d.d_c),
            ("d_n", d.d_n),
            ("d_w", d.d_w),
            ("d_model", d.d_model),
            ("heads", d.heads),
            ("trunk_width", d.trunk_width),
            ("taa_hidden", d.taa_hidden),
            ("critic_hidden", d.critic_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("dims.{name} must be positive")));
            }
        }
        if d.image_size < 8 {
            return Err(Error::Config("dims.image_size must be at least 8".into()));
        }
        self.taa.validate()?;
        self.wgan.validate()?;
        self.effective_loss_weights().validate()?;
        let b = &self.backends;
        for id in [&b.f_database, &b.f_loss].into_iter().chain(&b.f_targets) {
            if !b.fr_models.contains(id) {
                return Err(Error::Config(format!(
                    "FR model '{id}' is referenced but not listed in backends.fr_models"
                )));
            }
        }
        for far in &self.eval.far_levels {
            if !(*far > 0.0 && *far <= 1.0) {
                return Err(Error::Config(format!("FAR level {far} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// Loss weights after the ablation toggles.
    pub fn effective_loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_attr: if self.ablation.enable_l_attr {
                self.loss.lambda_attr
            } else {
                0.0
            },
            lambda_perc: if self.ablation.enable_l_perc {
                self.loss.lambda_perc
            } else {
                0.0
            },
            ..self.loss
        }
    }

    pub fn flp_config(&self, regions: usize) -> FlpConfig {
        let d = &self.dims;
        FlpConfig {
            d_model: d.d_model,
            heads: d.heads,
            trunk_blocks: d.trunk_blocks,
            trunk_width: d.trunk_width,
            attention_mode: self.ablation.attention_mode,
            use_semantics: self.ablation.enable_attr_embedding,
            ..FlpConfig::with_dims(d.d_t, d.d_c, d.d_n, regions, d.d_w)
        }
    }

    pub fn stub_dims(&self) -> StubDims {
        StubDims {
            d_t: self.dims.d_t,
            d_c: self.dims.d_c,
            d_w: self.dims.d_w,
            image_size: self.dims.image_size,
        }
    }

    /// Builds the backend registry. Only the stub kind is compiled in; other
    /// kinds report where weights would be looked up.
    pub fn build_backends(&self) -> Result<BackendRegistry> {
        match self.backends.kind.as_str() {
            "stub" => {
                let ids: Vec<&str> = self.backends.fr_models.iter().map(String::as_str).collect();
                Ok(BackendRegistry::stub(
                    &self.stub_dims(),
                    self.backends.stub_seed,
                    &ids,
                ))
            }
            other => {
                let dir = std::env::var(WEIGHTS_DIR_ENV).unwrap_or_else(|_| "<unset>".into());
                Err(Error::Config(format!(
                    "backend kind '{other}' is not available in this build \
                     ({WEIGHTS_DIR_ENV}={dir}); register external models through the library API"
                )))
            }
        }
    }
}
