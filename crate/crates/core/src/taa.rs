//! Template-to-attribute adapter: a two-layer ReLU network predicting the
//! aggregated semantic embedding from a face template.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backends::FaceTemplate;
use crate::error::{Error, Result};
use crate::nn::{self, derive_seed, linear_sections, rng_from_seed, Adam, Linear, ParamSet};
use crate::semantics::SemanticEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct TAAParams {
    pub layer1: Linear,
    pub layer2: Linear,
    pub region_order: Vec<String>,
}

impl TAAParams {
    pub fn init(
        d_t: usize,
        hidden: usize,
        region_order: Vec<String>,
        d_c: usize,
        seed: u64,
    ) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, "taa-init"));
        let out = region_order.len() * d_c;
        Self {
            layer1: Linear::kaiming_uniform(d_t, hidden, &mut rng),
            layer2: Linear::kaiming_uniform(hidden, out, &mut rng),
            region_order,
        }
    }

    pub fn template_dim(&self) -> usize {
        self.layer1.in_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.layer1.out_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layer2.out_dim
    }

    pub fn region_dim(&self) -> usize {
        self.output_dim() / self.region_order.len().max(1)
    }
}

impl ParamSet for TAAParams {
    fn sections(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut v = Vec::new();
        v.extend(linear_sections("layer1", &self.layer1));
        v.extend(linear_sections("layer2", &self.layer2));
        v
    }

    fn sections_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.layer1.weight,
            &mut self.layer1.bias,
            &mut self.layer2.weight,
            &mut self.layer2.bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TAATrainConfig {
    pub lambda_mse: f64,
    pub lambda_cos: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TAATrainConfig {
    fn default() -> Self {
        Self {
            lambda_mse: 0.7,
            lambda_cos: 0.3,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            rng_seed: 0,
        }
    }
}

impl TAATrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_mse < 0.0 || self.lambda_cos < 0.0 {
            return Err(Error::Config("TAA loss weights must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("TAA epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("TAA learning rate must be positive".into()));
        }
        Ok(())
    }
}

struct ForwardCache {
    pre1: Vec<f64>,
    hidden: Vec<f64>,
}

fn forward_cached(params: &TAAParams, t: &[f64]) -> (Vec<f64>, ForwardCache) {
    let pre1 = params.layer1.forward(t);
    let hidden: Vec<f64> = pre1.iter().map(|&x| nn::relu(x)).collect();
    let out = params.layer2.forward(&hidden);
    (out, ForwardCache { pre1, hidden })
}

/// Predicted semantic embedding `layer2(relu(layer1(t)))`.
pub fn taa_forward(params: &TAAParams, t: &FaceTemplate) -> Result<SemanticEmbedding> {
    if t.dim() != params.template_dim() {
        return Err(Error::DimensionMismatch {
            context: "TAA template input",
            expected: params.template_dim(),
            got: t.dim(),
        });
    }
    let (values, _) = forward_cached(params, &t.values);
    Ok(SemanticEmbedding {
        values,
        region_order: params.region_order.clone(),
        winner_indices: Vec::new(),
    })
}

/// `lambda_mse * ||s - s_hat||^2 + lambda_cos * (1 - cos(s, s_hat))`.
///
/// When exactly one vector is zero the cosine is taken as 0.
pub fn semantic_loss_values(
    s: &[f64],
    s_hat: &[f64],
    lambda_mse: f64,
    lambda_cos: f64,
) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "semantic loss operands",
            expected: s.len(),
            got: s_hat.len(),
        });
    }
    let sq: f64 = s.iter().zip(s_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let cos = match nn::cosine(s, s_hat) {
        Some(c) => c,
        None if nn::l2_norm(s) == 0.0 && nn::l2_norm(s_hat) == 0.0 => {
            return Err(Error::ZeroCosine)
        }
        None => 0.0,
    };
    Ok(lambda_mse * sq + lambda_cos * (1.0 - cos))
}

/// Gradient of [`semantic_loss_values`] with respect to `s_hat`.
pub fn semantic_loss_grad(
    s: &[f64],
    s_hat: &[f64],
    lambda_mse: f64,
    lambda_cos: f64,
) -> Result<Vec<f64>> {
    if s.len() != s_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "semantic loss operands",
            expected: s.len(),
            got: s_hat.len(),
        });
    }
    if nn::l2_norm(s) == 0.0 && nn::l2_norm(s_hat) == 0.0 {
        return Err(Error::ZeroCosine);
    }
    let cos_grad = nn::one_minus_cos_grad(s_hat, s);
    Ok(s.iter()
        .zip(s_hat)
        .zip(cos_grad)
        .map(|((a, b), c)| lambda_mse * 2.0 * (b - a) + lambda_cos * c)
        .collect())
}

pub fn semantic_loss(
    s: &SemanticEmbedding,
    s_hat: &SemanticEmbedding,
    cfg: &TAATrainConfig,
) -> Result<f64> {
    semantic_loss_values(&s.values, &s_hat.values, cfg.lambda_mse, cfg.lambda_cos)
}

#[derive(Debug, Clone)]
pub struct TAATrainOutcome {
    pub params: TAAParams,
    /// Mean per-sample loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
}

/// Trains the adapter with Adam on minibatches of the mean semantic loss.
pub fn train_taa(
    pairs: &[(FaceTemplate, SemanticEmbedding)],
    hidden: usize,
    cfg: &TAATrainConfig,
) -> Result<TAATrainOutcome> {
    cfg.validate()?;
    let (t0, s0) = pairs
        .first()
        .ok_or_else(|| Error::Empty("TAA training set".into()))?;
    let d_t = t0.dim();
    let out_dim = s0.values.len();
    for (t, s) in pairs {
        if t.dim() != d_t {
            return Err(Error::DimensionMismatch {
                context: "TAA training template",
                expected: d_t,
                got: t.dim(),
            });
        }
        if s.values.len() != out_dim || s.region_order != s0.region_order {
            return Err(Error::DimensionMismatch {
                context: "TAA training target",
                expected: out_dim,
                got: s.values.len(),
            });
        }
    }
    let d_c = out_dim / s0.region_count().max(1);
    let mut params = TAAParams::init(d_t, hidden, s0.region_order.clone(), d_c, cfg.rng_seed);
    let mut adam = Adam::default();
    let mut rng = rng_from_seed(derive_seed(cfg.rng_seed, "taa-shuffle"));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (t, s) = &pairs[i];
                let (pred, cache) = forward_cached(&params, &t.values);
                let loss = semantic_loss_values(&s.values, &pred, cfg.lambda_mse, cfg.lambda_cos)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        term: "semantic",
                        step: epoch,
                    });
                }
                total += loss;
                let d_out: Vec<f64> =
                    semantic_loss_grad(&s.values, &pred, cfg.lambda_mse, cfg.lambda_cos)?
                        .into_iter()
                        .map(|g| g * scale)
                        .collect();
                let d_hidden = params.layer2.backward(&cache.hidden, &d_out, &mut grads.layer2);
                let d_pre1: Vec<f64> = d_hidden
                    .iter()
                    .zip(&cache.pre1)
                    .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
                    .collect();
                params.layer1.backward(&t.values, &d_pre1, &mut grads.layer1);
            }
            adam.step(&mut params, &grads, cfg.learning_rate);
        }
        epoch_losses.push(total / pairs.len() as f64);
    }
    if !params.all_finite() {
        return Err(Error::NonFiniteLoss {
            term: "taa-parameters",
            step: cfg.epochs,
        });
    }
    Ok(TAATrainOutcome {
        params,
        epoch_losses,
    })
}
