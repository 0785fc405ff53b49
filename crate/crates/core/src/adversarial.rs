//! WGAN critic over latents, the reconstruction-guided loss, and the joint
//! projector/critic training loop.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendRegistry, FaceTemplate, ImageTensor, LatentCode, NoiseVector};
use crate::error::{Error, Result};
use crate::flp::{flp_backward, flp_forward_cached, FLPParams};
use crate::nn::{self, derive_seed, linear_sections, rng_from_seed, Adam, Linear, ParamSet};
use crate::semantics::{aggregate_semantics, PromptBank, SemanticEmbedding};
use crate::taa::{taa_forward, TAAParams};

pub const CRITIC_LEAKY_SLOPE: f64 = 0.2;

/// Three affine layers with LeakyReLU in between, scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub layers: [Linear; 3],
}

impl CriticParams {
    pub fn init(d_w: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, "critic-init"));
        Self {
            layers: [
                Linear::kaiming_uniform(d_w, hidden, &mut rng),
                Linear::kaiming_uniform(hidden, hidden, &mut rng),
                Linear::kaiming_uniform(hidden, 1, &mut rng),
            ],
        }
    }

    pub fn zeros(d_w: usize, hidden: usize) -> Self {
        Self {
            layers: [
                Linear::zeros(d_w, hidden),
                Linear::zeros(hidden, hidden),
                Linear::zeros(hidden, 1),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].out_dim
    }

    pub fn clip(&mut self, bound: f64) {
        for s in self.sections_mut() {
            s.iter_mut().for_each(|x| *x = x.clamp(-bound, bound));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn validate_shapes(&self) -> Result<()> {
        let h = self.hidden_dim();
        let ok = self.layers[1].in_dim == h
            && self.layers[1].out_dim == h
            && self.layers[2].in_dim == h
            && self.layers[2].out_dim == 1
            && self
                .layers
                .iter()
                .all(|l| l.weight.len() == l.in_dim * l.out_dim && l.bias.len() == l.out_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint("critic layer shapes are inconsistent".into()))
        }
    }
}

impl ParamSet for CriticParams {
    fn sections(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(linear_sections(&format!("layer{i}"), l));
        }
        v
    }

    fn sections_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }
}

struct CriticCache {
    inputs: [Vec<f64>; 3],
    pre: [Vec<f64>; 2],
}

fn critic_cached(params: &CriticParams, w: &[f64]) -> (f64, CriticCache) {
    let [l0, l1, l2] = &params.layers;
    let p0 = l0.forward(w);
    let h0: Vec<f64> = p0.iter().map(|&x| nn::leaky_relu(x, CRITIC_LEAKY_SLOPE)).collect();
    let p1 = l1.forward(&h0);
    let h1: Vec<f64> = p1.iter().map(|&x| nn::leaky_relu(x, CRITIC_LEAKY_SLOPE)).collect();
    let out = l2.forward(&h1)[0];
    (
        out,
        CriticCache {
            inputs: [w.to_vec(), h0, h1],
            pre: [p0, p1],
        },
    )
}

/// Accumulates `scale * dC/dparams` into `grads` and returns `scale * dC/dw`.
fn critic_backward(
    params: &CriticParams,
    cache: &CriticCache,
    scale: f64,
    grads: &mut CriticParams,
) -> Vec<f64> {
    let [g0, g1, g2] = &mut grads.layers;
    let mut d = params.layers[2].backward(&cache.inputs[2], &[scale], g2);
    d.iter_mut()
        .zip(&cache.pre[1])
        .for_each(|(g, p)| *g *= nn::leaky_relu_grad(*p, CRITIC_LEAKY_SLOPE));
    let mut d = params.layers[1].backward(&cache.inputs[1], &d, g1);
    d.iter_mut()
        .zip(&cache.pre[0])
        .for_each(|(g, p)| *g *= nn::leaky_relu_grad(*p, CRITIC_LEAKY_SLOPE));
    params.layers[0].backward(&cache.inputs[0], &d, g0)
}

/// Input gradient only, for the projector's adversarial term.
fn critic_input_grad(params: &CriticParams, cache: &CriticCache) -> Vec<f64> {
    let mut d = params.layers[2].backward_input(&[1.0]);
    d.iter_mut()
        .zip(&cache.pre[1])
        .for_each(|(g, p)| *g *= nn::leaky_relu_grad(*p, CRITIC_LEAKY_SLOPE));
    let mut d = params.layers[1].backward_input(&d);
    d.iter_mut()
        .zip(&cache.pre[0])
        .for_each(|(g, p)| *g *= nn::leaky_relu_grad(*p, CRITIC_LEAKY_SLOPE));
    params.layers[0].backward_input(&d)
}

pub fn critic_forward(params: &CriticParams, w: &LatentCode) -> Result<f64> {
    if w.dim() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "critic input",
            expected: params.input_dim(),
            got: w.dim(),
        });
    }
    Ok(critic_cached(params, &w.values).0)
}

/// WGAN quantities for one pair of batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WganLosses {
    /// `mean C(real) - mean C(fake)`; the critic ascends this.
    pub critic_objective: f64,
    /// `-mean C(fake)`; the projector descends this.
    pub projector_adv_loss: f64,
}

pub fn wgan_losses_with(
    critic: impl Fn(&LatentCode) -> Result<f64>,
    real_batch: &[LatentCode],
    fake_batch: &[LatentCode],
) -> Result<WganLosses> {
    if real_batch.is_empty() || fake_batch.is_empty() {
        return Err(Error::Empty("WGAN batch".into()));
    }
    let mean = |b: &[LatentCode]| -> Result<f64> {
        let mut s = 0.0;
        for w in b {
            s += critic(w)?;
        }
        Ok(s / b.len() as f64)
    };
    let real = mean(real_batch)?;
    let fake = mean(fake_batch)?;
    Ok(WganLosses {
        critic_objective: real - fake,
        projector_adv_loss: -fake,
    })
}

pub fn wgan_losses(
    critic: &CriticParams,
    real_batch: &[LatentCode],
    fake_batch: &[LatentCode],
) -> Result<WganLosses> {
    wgan_losses_with(|w| critic_forward(critic, w), real_batch, fake_batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_pix: f64,
    pub lambda_id: f64,
    pub lambda_attr: f64,
    pub lambda_perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pix: 1.0,
            lambda_id: 1.0,
            lambda_attr: 1.0,
            lambda_perc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.lambda_pix,
            self.lambda_id,
            self.lambda_attr,
            self.lambda_perc,
        ];
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconTerms {
    pub pix: f64,
    pub id: f64,
    pub attr: f64,
    pub perc: f64,
}

impl ReconTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.lambda_pix * self.pix
            + w.lambda_id * self.id
            + w.lambda_attr * self.attr
            + w.lambda_perc * self.perc
    }
}

/// Backend handles the reconstruction loss needs.
#[derive(Clone, Copy)]
pub struct ReconContext<'a> {
    pub backends: &'a BackendRegistry,
    /// Surrogate FR model used for the identity term.
    pub f_loss: &'a str,
    pub bank: &'a PromptBank,
}

fn recon_terms(
    ctx: &ReconContext<'_>,
    original: &ImageTensor,
    recon: &ImageTensor,
    t: &FaceTemplate,
    s_original: &SemanticEmbedding,
) -> Result<(ReconTerms, Vec<f64>)> {
    if !original.same_shape(recon) {
        return Err(Error::InvalidImage(format!(
            "resolution mismatch: {}x{} vs {}x{}",
            original.width(),
            original.height(),
            recon.width(),
            recon.height()
        )));
    }
    let pix = nn::mean_squared_error(original.data(), recon.data());
    let emb = ctx.backends.fr_embed(ctx.f_loss, recon)?;
    if emb.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            context: "identity term template",
            expected: t.dim(),
            got: emb.dim(),
        });
    }
    let cos = nn::cosine(&emb.values, &t.values).ok_or(Error::ZeroCosine)?;
    let s_recon = aggregate_semantics(recon, ctx.bank, ctx.backends.vl_encoder.as_ref())?;
    let attr = nn::mean_squared_error(&s_original.values, &s_recon.values);
    let perc = ctx.backends.perceptual_net.distance(original, recon)?;
    Ok((
        ReconTerms {
            pix,
            id: 1.0 - cos,
            attr,
            perc,
        },
        emb.values,
    ))
}

/// Weighted pixel, identity, attribute and perceptual loss between an
/// original image and its reconstruction.
pub fn reconstruction_loss(
    ctx: &ReconContext<'_>,
    original: &ImageTensor,
    recon: &ImageTensor,
    t: &FaceTemplate,
    weights: &LossWeights,
) -> Result<(f64, ReconTerms)> {
    let s_original = aggregate_semantics(original, ctx.bank, ctx.backends.vl_encoder.as_ref())?;
    let (terms, _) = recon_terms(ctx, original, recon, t, &s_original)?;
    Ok((terms.weighted_total(weights), terms))
}

/// Loss, terms, and the gradient of the weighted total w.r.t. `recon` pixels.
///
/// The attribute term selects prompts by argmax and is piecewise constant in
/// the image, so it contributes no gradient.
pub fn reconstruction_loss_grad(
    ctx: &ReconContext<'_>,
    original: &ImageTensor,
    recon: &ImageTensor,
    t: &FaceTemplate,
    s_original: &SemanticEmbedding,
    weights: &LossWeights,
) -> Result<(f64, ReconTerms, Vec<f64>)> {
    let (terms, emb) = recon_terms(ctx, original, recon, t, s_original)?;
    let n = original.data().len() as f64;
    let mut grad: Vec<f64> = original
        .data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| weights.lambda_pix * 2.0 * (b - a) / n)
        .collect();
    if weights.lambda_id != 0.0 {
        let d_emb: Vec<f64> = nn::one_minus_cos_grad(&emb, &t.values)
            .into_iter()
            .map(|g| g * weights.lambda_id)
            .collect();
        let d_img = ctx.backends.fr(ctx.f_loss)?.embed_vjp(recon, &d_emb)?;
        grad.iter_mut().zip(d_img).for_each(|(a, b)| *a += b);
    }
    if weights.lambda_perc != 0.0 {
        let d_img = ctx.backends.perceptual_net.distance_vjp(original, recon)?;
        grad.iter_mut()
            .zip(d_img)
            .for_each(|(a, b)| *a += weights.lambda_perc * b);
    }
    Ok((terms.weighted_total(weights), terms, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMode {
    WeightClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WGANConfig {
    pub critic_steps_per_projector_step: usize,
    pub lipschitz: LipschitzMode,
    pub weight_clip: f64,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many projector steps, if set.
    pub max_steps: Option<usize>,
    pub rng_seed: u64,
}

impl Default for WGANConfig {
    fn default() -> Self {
        Self {
            critic_steps_per_projector_step: 5,
            lipschitz: LipschitzMode::WeightClip,
            weight_clip: 0.01,
            learning_rate: 1e-1,
            lr_decay_factor: 0.5,
            lr_decay_every_epochs: 3,
            epochs: 12,
            batch_size: 16,
            max_steps: None,
            rng_seed: 0,
        }
    }
}

impl WGANConfig {
    pub fn validate(&self) -> Result<()> {
        if self.critic_steps_per_projector_step == 0 {
            return Err(Error::Config("critic_steps_per_projector_step must be >= 1".into()));
        }
        if !(self.weight_clip > 0.0) {
            return Err(Error::Config("weight_clip must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must lie in (0, 1]".into()));
        }
        if self.lr_decay_every_epochs == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, batch_size and lr_decay_every_epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// StepLR schedule.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate
            * self
                .lr_decay_factor
                .powi((epoch / self.lr_decay_every_epochs) as i32)
    }
}

/// One logged projector step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    /// Wasserstein estimate from the last critic update of this step.
    pub critic: f64,
    pub adversarial: f64,
    pub pix: f64,
    pub id: f64,
    pub attr: f64,
    pub perc: f64,
    pub total: f64,
    pub lr: f64,
    pub critic_max_abs: f64,
}

/// Per-image inputs that stay fixed during projector training.
pub struct TrainingSample {
    pub image: ImageTensor,
    pub template: FaceTemplate,
    pub s_hat: SemanticEmbedding,
    pub s_image: SemanticEmbedding,
}

/// Extracts surrogate templates, predicted semantics and image semantics.
pub fn prepare_samples(
    images: &[ImageTensor],
    taa: &TAAParams,
    ctx: &ReconContext<'_>,
) -> Result<Vec<TrainingSample>> {
    images
        .iter()
        .map(|img| {
            let template = ctx.backends.fr_embed(ctx.f_loss, img)?;
            let s_hat = taa_forward(taa, &template)?;
            let s_image = aggregate_semantics(img, ctx.bank, ctx.backends.vl_encoder.as_ref())?;
            Ok(TrainingSample {
                image: img.clone(),
                template,
                s_hat,
                s_image,
            })
        })
        .collect()
}

pub struct FlpTrainOutcome {
    pub flp: FLPParams,
    pub critic: CriticParams,
    pub history: Vec<TrainState>,
}

fn check_finite(v: f64, term: &'static str, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term, step })
    }
}

/// Alternates `critic_steps` clipped critic updates with one projector update
/// on the adversarial loss plus the reconstruction loss.
#[allow(clippy::too_many_arguments)]
pub fn train_flp(
    samples: &[TrainingSample],
    mut flp: FLPParams,
    mut critic: CriticParams,
    cfg: &WGANConfig,
    weights: &LossWeights,
    ctx: &ReconContext<'_>,
    mut on_step: impl FnMut(&TrainState) -> Result<()>,
) -> Result<FlpTrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("projector training set".into()));
    }
    let generator = ctx.backends.generator.as_ref();
    if critic.input_dim() != flp.config.d_w || generator.latent_dim() != flp.config.d_w {
        return Err(Error::DimensionMismatch {
            context: "projector latent vs critic/generator",
            expected: flp.config.d_w,
            got: critic.input_dim(),
        });
    }
    critic.clip(cfg.weight_clip);

    let mut rng = rng_from_seed(derive_seed(cfg.rng_seed, "flp-train"));
    let mut critic_opt = Adam::default();
    let mut flp_opt = Adam::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::new();
    let mut step = 0usize;

    let fake_latent = |flp: &FLPParams, s: &TrainingSample, noise_seed: u64| {
        let n = NoiseVector::sample(flp.config.d_n, noise_seed);
        flp_forward_cached(flp, &n, &s.template, &s.s_hat)
    };

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let b = batch.len() as f64;

            let mut wasserstein = 0.0;
            for _ in 0..cfg.critic_steps_per_projector_step {
                let mut grads = critic.zeros_like();
                let mut real_mean = 0.0;
                let mut fake_mean = 0.0;
                for &i in batch {
                    let real = ctx.backends.sample_prior_latent(rng.next_u64())?;
                    let (fake, _, _) = fake_latent(&flp, &samples[i], rng.next_u64())?;
                    let (cr, cache_r) = critic_cached(&critic, &real.values);
                    let (cf, cache_f) = critic_cached(&critic, &fake.values);
                    real_mean += cr / b;
                    fake_mean += cf / b;
                    // minimize -(mean C(real) - mean C(fake))
                    critic_backward(&critic, &cache_r, -1.0 / b, &mut grads);
                    critic_backward(&critic, &cache_f, 1.0 / b, &mut grads);
                }
                wasserstein = check_finite(real_mean - fake_mean, "critic", step)?;
                critic_opt.step(&mut critic, &grads, lr);
                critic.clip(cfg.weight_clip);
            }

            let mut grads = flp.zeros_like();
            let mut adv = 0.0;
            let mut terms_sum = ReconTerms::default();
            let mut rec_total = 0.0;
            for &i in batch {
                let s = &samples[i];
                let (w_hat, _, cache) = fake_latent(&flp, s, rng.next_u64())?;
                let (score, c_cache) = critic_cached(&critic, &w_hat.values);
                adv -= score / b;
                let recon = generator.generate(&w_hat)?;
                let (total, terms, d_img) =
                    reconstruction_loss_grad(ctx, &s.image, &recon, &s.template, &s.s_image, weights)?;
                rec_total += total / b;
                terms_sum.pix += terms.pix / b;
                terms_sum.id += terms.id / b;
                terms_sum.attr += terms.attr / b;
                terms_sum.perc += terms.perc / b;
                let d_rec = generator.generate_vjp(&w_hat, &d_img)?;
                let d_adv = critic_input_grad(&critic, &c_cache);
                let d_w: Vec<f64> = d_rec
                    .iter()
                    .zip(&d_adv)
                    .map(|(r, a)| (r - a) / b)
                    .collect();
                flp_backward(&flp, &cache, &d_w, &mut grads);
            }
            let state = TrainState {
                epoch,
                step,
                critic: wasserstein,
                adversarial: check_finite(adv, "adversarial", step)?,
                pix: check_finite(terms_sum.pix, "pix", step)?,
                id: check_finite(terms_sum.id, "id", step)?,
                attr: check_finite(terms_sum.attr, "attr", step)?,
                perc: check_finite(terms_sum.perc, "perc", step)?,
                total: check_finite(adv + rec_total, "total", step)?,
                lr,
                critic_max_abs: critic.max_abs(),
            };
            flp_opt.step(&mut flp, &grads, lr);
            if !flp.all_finite() {
                return Err(Error::NonFiniteLoss {
                    term: "projector-parameters",
                    step,
                });
            }
            on_step(&state)?;
            history.push(state);
            step += 1;
        }
    }
    Ok(FlpTrainOutcome {
        flp,
        critic,
        history,
    })
}
