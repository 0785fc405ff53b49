//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use fti_core::adversarial::{
    prepare_samples, train_flp, CriticParams, LossWeights, ReconContext, TrainState, WGANConfig,
};
use fti_core::backends::{
    BackendRegistry, ImageTensor, Modality, StubAttributeEncoder, StubFaceEmbedder,
    StubGenerator, StubLandmarkDetector, StubMapping, StubPerceptualNet, StubVlEncoder,
    VLEmbedding,
};
use fti_core::flp::{AttentionMode, FLPParams, FlpConfig};
use fti_core::nn::{gaussian_vec, rng_from_seed, Linear};
use fti_core::semantics::{build_bank, PromptBank, PromptEntry, RegionBank};
use fti_core::taa::TAAParams;
use rand::Rng;

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
    }
    ab / (norm(a) * norm(b))
}

pub fn matvec(l: &Linear, x: &[f64]) -> Vec<f64> {
    let mut y = l.bias.clone();
    for o in 0..l.out_dim {
        for i in 0..l.in_dim {
            y[o] += l.weight[o * l.in_dim + i] * x[i];
        }
    }
    y
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor {
    let mut rng = rng_from_seed(seed);
    let data = (0..h * w * 3).map(|_| rng.random_range(0.05..0.95)).collect();
    ImageTensor::new(h, w, data).unwrap()
}

/// Smooth image with some structure, so MS-SSIM is far from trivial.
pub fn smooth_image(seed: u64, h: usize, w: usize) -> ImageTensor {
    let mut rng = rng_from_seed(seed);
    let f: Vec<f64> = (0..6).map(|_| rng.random_range(0.02..0.2)).collect();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let (yf, xf) = (y as f64, x as f64);
                let v = 0.5
                    + 0.25 * (f[c] * xf + f[c + 3] * yf).sin()
                    + 0.15 * rng.random_range(-1.0..1.0);
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(h, w, data).unwrap()
}

pub fn unit_gaussian(seed: u64, d: usize) -> Vec<f64> {
    let v = gaussian_vec(&mut rng_from_seed(seed), d);
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Bank of Gaussian text embeddings built directly, bypassing the encoder.
pub fn random_bank(seed: u64, regions: usize, prompts: &[usize], d_c: usize) -> PromptBank {
    let regions = (0..regions)
        .map(|r| RegionBank {
            name: format!("region{r}"),
            prompts: (0..prompts[r])
                .map(|k| PromptEntry {
                    text: format!("prompt {r}/{k}"),
                    embedding: VLEmbedding::new(
                        unit_gaussian(seed * 1000 + (r * 50 + k) as u64, d_c),
                        Modality::Text,
                    )
                    .unwrap(),
                })
                .collect(),
        })
        .collect();
    PromptBank::from_regions("oracle".into(), regions).unwrap()
}

/// Exhaustive argmax per region (first maximum wins) and the concatenation.
pub fn oracle_semantics(image_emb: &[f64], bank: &PromptBank) -> (Vec<f64>, Vec<usize>) {
    let mut values = Vec::new();
    let mut winners = Vec::new();
    for region in &bank.regions {
        let sims: Vec<f64> = region
            .prompts
            .iter()
            .map(|p| cos(image_emb, &p.embedding.values))
            .collect();
        let best = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = sims.iter().position(|&s| s == best).unwrap();
        winners.push(k);
        values.extend_from_slice(&region.prompts[k].embedding.values);
    }
    (values, winners)
}

pub fn oracle_semantic_loss(s: &[f64], s_hat: &[f64], l_mse: f64, l_cos: f64) -> f64 {
    let mut sq = 0.0;
    for i in 0..s.len() {
        sq += (s[i] - s_hat[i]).powi(2);
    }
    l_mse * sq + l_cos * (1.0 - cos(s, s_hat))
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Attention output and weights computed head by head from the raw layers.
pub fn oracle_attention(p: &FLPParams, query_src: &[f64], tokens: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let c = &p.config;
    let dh = c.d_model / c.heads;
    let q = matvec(&p.attention.query, query_src);
    let k: Vec<Vec<f64>> = tokens.iter().map(|t| matvec(&p.attention.key, t)).collect();
    let v: Vec<Vec<f64>> = tokens.iter().map(|t| matvec(&p.attention.value, t)).collect();
    let mut concat = vec![0.0; c.d_model];
    let mut weights = Vec::new();
    for h in 0..c.heads {
        let logits: Vec<f64> = k
            .iter()
            .map(|kj| {
                let mut s = 0.0;
                for i in h * dh..(h + 1) * dh {
                    s += q[i] * kj[i];
                }
                s / (dh as f64).sqrt()
            })
            .collect();
        let a = softmax(&logits);
        for (j, aj) in a.iter().enumerate() {
            for i in h * dh..(h + 1) * dh {
                concat[i] += aj * v[j][i];
            }
        }
        weights.extend(a);
    }
    (matvec(&p.attention.output, &concat), weights)
}

/// Straight-line projector forward pass.
pub fn oracle_flp(p: &FLPParams, noise: &[f64], t: &[f64], s_hat: &[f64]) -> Vec<f64> {
    let c = &p.config;
    let n = norm(noise);
    let mut x: Vec<f64> = noise.iter().map(|v| v / n).collect();
    let t_proj = matvec(&p.template_proj, t);
    x.extend_from_slice(&t_proj);
    if c.use_semantics {
        let tokens: Vec<Vec<f64>> = s_hat
            .chunks(c.d_c)
            .map(|seg| matvec(&p.semantic_proj, seg))
            .collect();
        let mean: Vec<f64> = (0..c.d_model)
            .map(|i| tokens.iter().map(|t| t[i]).sum::<f64>() / tokens.len() as f64)
            .collect();
        let summary = match c.attention_mode {
            AttentionMode::None => mean,
            AttentionMode::Conditional => oracle_attention(p, &t_proj, &tokens).0,
            AttentionMode::MhaSelfquery => oracle_attention(p, &mean, &tokens).0,
        };
        x.extend(summary);
    } else {
        x.extend(std::iter::repeat(0.0).take(c.d_model));
    }
    let last = p.trunk.len() - 1;
    for (i, l) in p.trunk.iter().enumerate() {
        x = matvec(l, &x);
        if i != last {
            x = x.into_iter().map(|v| leaky(v, c.leaky_slope)).collect();
        }
    }
    x
}

pub fn oracle_critic(c: &CriticParams, w: &[f64]) -> f64 {
    let h0: Vec<f64> = matvec(&c.layers[0], w).into_iter().map(|v| leaky(v, 0.2)).collect();
    let h1: Vec<f64> = matvec(&c.layers[1], &h0).into_iter().map(|v| leaky(v, 0.2)).collect();
    matvec(&c.layers[2], &h1)[0]
}

/// Smallest observed score whose inclusive acceptance rate is within `far`,
/// found by scanning every distinct value.
pub fn oracle_threshold(scores: &[f64], far: f64) -> f64 {
    let n = scores.len() as f64;
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for v in candidates {
        let accepted = scores.iter().filter(|&&s| s >= v).count() as f64;
        if accepted / n <= far {
            return v;
        }
    }
    scores.iter().copied().fold(f64::NEG_INFINITY, f64::max).next_up()
}

fn luma(img: &ImageTensor) -> Vec<f64> {
    (0..img.height() * img.width())
        .map(|p| {
            let d = &img.data()[p * 3..p * 3 + 3];
            0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2]
        })
        .collect()
}

/// Direct 2-D windowed MS-SSIM with the standard constants.
pub fn oracle_ms_ssim(a: &ImageTensor, b: &ImageTensor) -> f64 {
    const W: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let g1: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g1.iter().sum();
    let mut win = [[0.0; 11]; 11];
    for i in 0..11 {
        for j in 0..11 {
            win[i][j] = g1[i] * g1[j] / (gs * gs);
        }
    }
    let (mut x, mut y) = (luma(a), luma(b));
    let (mut h, mut w) = (a.height(), a.width());
    let mut result = 1.0;
    for (scale, wt) in W.iter().enumerate() {
        let (mut cs_sum, mut ssim_sum, mut count) = (0.0, 0.0, 0.0);
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = (oy + i) * w + ox + j;
                        let g = win[i][j];
                        mx += g * x[k];
                        my += g * y[k];
                        sxx += g * x[k] * x[k];
                        syy += g * y[k] * y[k];
                        sxy += g * x[k] * y[k];
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                let cs = (2.0 * cov + c2) / (vx + vy + c2);
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                cs_sum += cs;
                ssim_sum += l * cs;
                count += 1.0;
            }
        }
        let v = if scale == W.len() - 1 { ssim_sum / count } else { cs_sum / count };
        result *= v.max(0.0).powf(*wt);
        let (h2, w2) = (h / 2, w / 2);
        let pool = |p: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(h2 * w2);
            for yy in 0..h2 {
                for xx in 0..w2 {
                    let at = |r: usize, c: usize| p[r * w + c];
                    out.push(
                        (at(2 * yy, 2 * xx)
                            + at(2 * yy, 2 * xx + 1)
                            + at(2 * yy + 1, 2 * xx)
                            + at(2 * yy + 1, 2 * xx + 1))
                            / 4.0,
                    );
                }
            }
            out
        };
        x = pool(&x);
        y = pool(&y);
        h = h2;
        w = w2;
    }
    result
}

/// All-stub registry on a 2-D latent space whose prior is an affine image of
/// a standard Gaussian.
pub fn affine_prior_registry(image_size: usize) -> BackendRegistry {
    let map = Linear {
        in_dim: 2,
        out_dim: 2,
        weight: vec![0.6, 0.2, -0.1, 0.4],
        bias: vec![1.5, -1.0],
    };
    let mut reg = BackendRegistry::new(
        Arc::new(StubVlEncoder::new("vl", 4, 1)),
        Arc::new(StubGenerator::new("gen", 2, image_size, 1)),
        Arc::new(StubMapping::affine("map", map)),
        Arc::new(StubLandmarkDetector::new("lm")),
        Arc::new(StubPerceptualNet::new("perc", 8, 1)),
        Arc::new(StubAttributeEncoder::new("attr", 8, 8, 1)),
    )
    .unwrap();
    reg.register_fr(Arc::new(StubFaceEmbedder::new("fr", 4, 2))).unwrap();
    reg
}

/// Central finite difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub const WGAN_CLIP: f64 = 0.01;

/// Adversarial-only projector training on the affine-prior toy.
pub fn wgan_toy_history() -> Vec<TrainState> {
    let reg = affine_prior_registry(16);
    let images: Vec<ImageTensor> = (100..108)
        .map(|s| reg.generate(&reg.sample_prior_latent(s).unwrap()).unwrap())
        .collect();
    let taa = TAAParams::init(4, 8, vec!["eyes".into()], 4, 3);
    let bank = build_bank(
        &[("eyes".to_string(), vec!["a".to_string(), "b".to_string()])],
        reg.vl_encoder.as_ref(),
    )
    .unwrap();
    let ctx = ReconContext { backends: &reg, f_loss: "fr", bank: &bank };
    let samples = prepare_samples(&images, &taa, &ctx).unwrap();
    let mut c = FlpConfig::with_dims(4, 4, 2, 1, 2);
    c.trunk_blocks = 2;
    c.trunk_width = 16;
    let flp = FLPParams::init(c, 5).unwrap();
    let critic = CriticParams::init(2, 16, 6);
    let cfg = WGANConfig {
        weight_clip: WGAN_CLIP,
        learning_rate: 1e-2,
        lr_decay_every_epochs: 10_000,
        epochs: 1000,
        batch_size: 32,
        max_steps: Some(300),
        rng_seed: 9,
        ..Default::default()
    };
    let weights = LossWeights { lambda_pix: 1e-9, lambda_id: 0.0, lambda_attr: 0.0, lambda_perc: 0.0 };
    train_flp(&samples, flp, critic, &cfg, &weights, &ctx, |_| Ok(())).unwrap().history
}

/// Peak of the 10-step moving-average critic gap must be positive, the last
/// 30 steps must average at most 70% of it, and clipping must hold throughout.
pub fn check_wgan_separation(history: &[TrainState]) -> Result<String, String> {
    if history.len() < 60 {
        return Err(format!("only {} steps", history.len()));
    }
    if let Some(s) = history.iter().find(|s| s.critic_max_abs > WGAN_CLIP) {
        return Err(format!("step {}: |critic weight| {} > clip", s.step, s.critic_max_abs));
    }
    let gaps: Vec<f64> = history.iter().map(|s| s.critic).collect();
    let ma: Vec<f64> = gaps.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    let peak = ma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = gaps[gaps.len() - 30..].iter().sum::<f64>() / 30.0;
    let msg = format!("peak {peak:.3e}, last-30 mean {tail:.3e}");
    if peak > 0.0 && tail <= 0.7 * peak {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Report holding reference numbers, one record per kind.
pub fn fixture_report() -> fti_core::eval::report::Report {
    use fti_core::eval::report::*;
    use fti_core::eval::Protocol;
    let mut rep = Report::new();
    rep.push(Record::Verification(VerificationRow {
        method: "Ours".into(),
        dataset: "LFW".into(),
        f_database: "ArcFace".into(),
        f_loss: "ElasticFace".into(),
        f_target: "ArcFace".into(),
        protocol: Protocol::Type1,
        far: 0.001,
        threshold: None,
        tar: 0.9937,
        skipped_identities: 0,
    }));
    rep.push(Record::Transfer(TransferRow {
        method: "Ours".into(),
        f_database: "ArcFace".into(),
        f_loss: "ElasticFace".into(),
        f_target: "HRNet".into(),
        dataset: "LFW".into(),
        far: 0.001,
        tar: 0.6523,
    }));
    rep.push(Record::RegionSimilarity(RegionRow {
        method: "Ours".into(),
        regions: [("eyes", 0.2087), ("nose", 0.2364), ("mouth", 0.2305), ("jaw", 0.2350), ("eyebrow", 0.2252)]
            .iter()
            .map(|&(r, v)| RegionScore { region: r.into(), value: v })
            .collect(),
    }));
    rep.push(Record::Threshold(ThresholdRow {
        model: "ArcFace".into(),
        dataset: "CelebA-HQ".into(),
        far: 0.01,
        threshold: 0.19997557997703552,
        tar: None,
    }));
    rep
}
