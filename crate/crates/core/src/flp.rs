//! Fusion-latent projector.
//!
//! The template and each region token of the predicted semantics are
//! projected into a shared width `d_model`. Multi-head attention runs with a
//! single query (the projected template) over the region tokens, producing a
//! semantic summary. The unit-normalized noise, the projected template and the
//! summary are concatenated and mapped by a LeakyReLU MLP trunk to a latent.

use serde::{Deserialize, Serialize};

use crate::backends::{FaceTemplate, LatentCode, NoiseVector};
use crate::error::{Error, Result};
use crate::nn::{self, derive_seed, linear_sections, rng_from_seed, Linear, ParamSet};
use crate::semantics::SemanticEmbedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Query is the projected template.
    Conditional,
    /// No attention: the summary is the mean of the region tokens.
    None,
    /// Query is the mean region token instead of the template.
    MhaSelfquery,
}

impl AttentionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionMode::Conditional => "conditional",
            AttentionMode::None => "none",
            AttentionMode::MhaSelfquery => "mha_selfquery",
        }
    }
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(AttentionMode::Conditional),
            "none" => Ok(AttentionMode::None),
            "mha_selfquery" => Ok(AttentionMode::MhaSelfquery),
            other => Err(Error::Config(format!("unknown attention_mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlpConfig {
    pub d_t: usize,
    pub d_c: usize,
    pub d_n: usize,
    pub regions: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_w: usize,
    pub trunk_blocks: usize,
    pub trunk_width: usize,
    pub leaky_slope: f64,
    pub attention_mode: AttentionMode,
    /// When false the semantic branch is dropped and its slot is zero.
    pub use_semantics: bool,
}

impl FlpConfig {
    /// Defaults for the given data dimensions: `d_model = d_c`, one head,
    /// three trunk blocks of width `4 * d_model`, slope 0.2.
    pub fn with_dims(d_t: usize, d_c: usize, d_n: usize, regions: usize, d_w: usize) -> Self {
        Self {
            d_t,
            d_c,
            d_n,
            regions,
            d_model: d_c,
            heads: 1,
            d_w,
            trunk_blocks: 3,
            trunk_width: 4 * d_c,
            leaky_slope: 0.2,
            attention_mode: AttentionMode::Conditional,
            use_semantics: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_t,
            self.d_c,
            self.d_n,
            self.regions,
            self.d_model,
            self.heads,
            self.d_w,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("projector dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by head count {}",
                self.d_model, self.heads
            )));
        }
        if self.trunk_blocks > 0 && self.trunk_width == 0 {
            return Err(Error::Config("trunk width must be positive".into()));
        }
        Ok(())
    }

    pub fn fused_dim(&self) -> usize {
        self.d_n + 2 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FLPParams {
    pub config: FlpConfig,
    pub template_proj: Linear,
    pub semantic_proj: Linear,
    pub attention: Attention,
    /// Hidden blocks followed by the final map to `d_w`.
    pub trunk: Vec<Linear>,
}

impl FLPParams {
    pub fn init(config: FlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, "flp-init"));
        let m = config.d_model;
        let template_proj = Linear::kaiming_uniform(config.d_t, m, &mut rng);
        let mut semantic_proj = Linear::kaiming_uniform(config.d_c, m, &mut rng);
        if config.d_c == m {
            // near-identity start for the region tokens
            semantic_proj.weight.iter_mut().for_each(|w| *w *= 0.1);
            for i in 0..m {
                semantic_proj.weight[i * m + i] += 1.0;
            }
            semantic_proj.bias.fill(0.0);
        }
        let attention = Attention {
            query: Linear::kaiming_uniform(m, m, &mut rng),
            key: Linear::kaiming_uniform(m, m, &mut rng),
            value: Linear::kaiming_uniform(m, m, &mut rng),
            output: Linear::kaiming_uniform(m, m, &mut rng),
        };
        let mut trunk = Vec::with_capacity(config.trunk_blocks + 1);
        let mut width = config.fused_dim();
        for _ in 0..config.trunk_blocks {
            trunk.push(Linear::kaiming_uniform(width, config.trunk_width, &mut rng));
            width = config.trunk_width;
        }
        trunk.push(Linear::kaiming_uniform(width, config.d_w, &mut rng));
        Ok(Self {
            config,
            template_proj,
            semantic_proj,
            attention,
            trunk,
        })
    }

    /// Checks that every layer shape agrees with `config`.
    pub fn validate_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let m = c.d_model;
        let check = |l: &Linear, i: usize, o: usize, what: &'static str| {
            if l.in_dim != i || l.out_dim != o || l.weight.len() != i * o || l.bias.len() != o {
                Err(Error::DimensionMismatch {
                    context: what,
                    expected: i * o,
                    got: l.weight.len(),
                })
            } else {
                Ok(())
            }
        };
        check(&self.template_proj, c.d_t, m, "template_proj")?;
        check(&self.semantic_proj, c.d_c, m, "semantic_proj")?;
        for (l, name) in [
            (&self.attention.query, "attention.query"),
            (&self.attention.key, "attention.key"),
            (&self.attention.value, "attention.value"),
            (&self.attention.output, "attention.output"),
        ] {
            check(l, m, m, name)?;
        }
        if self.trunk.len() != c.trunk_blocks + 1 {
            return Err(Error::DimensionMismatch {
                context: "trunk depth",
                expected: c.trunk_blocks + 1,
                got: self.trunk.len(),
            });
        }
        let mut width = c.fused_dim();
        for (i, l) in self.trunk.iter().enumerate() {
            let out = if i == c.trunk_blocks { c.d_w } else { c.trunk_width };
            check(l, width, out, "trunk layer")?;
            width = out;
        }
        Ok(())
    }
}

impl ParamSet for FLPParams {
    fn sections(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut v = Vec::new();
        v.extend(linear_sections("template_proj", &self.template_proj));
        v.extend(linear_sections("semantic_proj", &self.semantic_proj));
        v.extend(linear_sections("attention.query", &self.attention.query));
        v.extend(linear_sections("attention.key", &self.attention.key));
        v.extend(linear_sections("attention.value", &self.attention.value));
        v.extend(linear_sections("attention.output", &self.attention.output));
        for (i, l) in self.trunk.iter().enumerate() {
            v.extend(linear_sections(&format!("trunk.{i}"), l));
        }
        v
    }

    fn sections_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.template_proj.weight,
            &mut self.template_proj.bias,
            &mut self.semantic_proj.weight,
            &mut self.semantic_proj.bias,
            &mut self.attention.query.weight,
            &mut self.attention.query.bias,
            &mut self.attention.key.weight,
            &mut self.attention.key.bias,
            &mut self.attention.value.weight,
            &mut self.attention.value.bias,
            &mut self.attention.output.weight,
            &mut self.attention.output.bias,
        ];
        for l in &mut self.trunk {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v
    }
}

/// Attention weights, one row of `tokens` entries per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub heads: usize,
    pub tokens: usize,
    pub weights: Vec<f64>,
}

impl AttentionTrace {
    pub fn row(&self, head: usize) -> &[f64] {
        &self.weights[head * self.tokens..(head + 1) * self.tokens]
    }

    fn uniform(heads: usize, tokens: usize) -> Self {
        Self {
            heads,
            tokens,
            weights: vec![1.0 / tokens as f64; heads * tokens],
        }
    }

    fn empty() -> Self {
        Self {
            heads: 0,
            tokens: 0,
            weights: Vec::new(),
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct AttentionCache {
    query_src: Vec<f64>,
    q: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    concat: Vec<f64>,
    trace: AttentionTrace,
}

fn attention_cached(
    params: &FLPParams,
    query_src: &[f64],
    tokens: &[Vec<f64>],
) -> Result<(Vec<f64>, AttentionCache)> {
    let c = &params.config;
    if tokens.is_empty() {
        return Err(Error::Empty("attention tokens".into()));
    }
    if query_src.len() != c.d_model || tokens.iter().any(|t| t.len() != c.d_model) {
        return Err(Error::DimensionMismatch {
            context: "attention inputs",
            expected: c.d_model,
            got: query_src.len(),
        });
    }
    let att = &params.attention;
    let (h, dh, r) = (c.heads, c.head_dim(), tokens.len());
    let scale = 1.0 / (dh as f64).sqrt();
    let q = att.query.forward(query_src);
    let keys: Vec<Vec<f64>> = tokens.iter().map(|t| att.key.forward(t)).collect();
    let values: Vec<Vec<f64>> = tokens.iter().map(|t| att.value.forward(t)).collect();
    let mut concat = vec![0.0; c.d_model];
    let mut weights = Vec::with_capacity(h * r);
    for head in 0..h {
        let span = head * dh..(head + 1) * dh;
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| nn::dot(&q[span.clone()], &k[span.clone()]) * scale)
            .collect();
        let a = softmax(&logits);
        for (ar, v) in a.iter().zip(&values) {
            for (o, vi) in concat[span.clone()].iter_mut().zip(&v[span.clone()]) {
                *o += ar * vi;
            }
        }
        weights.extend(a);
    }
    let out = att.output.forward(&concat);
    Ok((
        out,
        AttentionCache {
            query_src: query_src.to_vec(),
            q,
            keys,
            values,
            concat,
            trace: AttentionTrace {
                heads: h,
                tokens: r,
                weights,
            },
        },
    ))
}

/// Scaled dot-product attention with one query token over `s_tokens`.
pub fn conditional_attention(
    params: &FLPParams,
    t_proj: &[f64],
    s_tokens: &[Vec<f64>],
) -> Result<(Vec<f64>, AttentionTrace)> {
    let (out, cache) = attention_cached(params, t_proj, s_tokens)?;
    Ok((out, cache.trace))
}

/// Returns `(d_query_src, d_tokens)` and accumulates attention parameter grads.
fn attention_backward(
    params: &FLPParams,
    cache: &AttentionCache,
    tokens: &[Vec<f64>],
    d_out: &[f64],
    grads: &mut Attention,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let c = &params.config;
    let att = &params.attention;
    let (h, dh, r) = (c.heads, c.head_dim(), tokens.len());
    let scale = 1.0 / (dh as f64).sqrt();
    let d_concat = att.output.backward(&cache.concat, d_out, &mut grads.output);
    let mut d_q = vec![0.0; c.d_model];
    let mut d_keys = vec![vec![0.0; c.d_model]; r];
    let mut d_values = vec![vec![0.0; c.d_model]; r];
    for head in 0..h {
        let span = head * dh..(head + 1) * dh;
        let a = cache.trace.row(head);
        let d_o = &d_concat[span.clone()];
        let d_a: Vec<f64> = cache
            .values
            .iter()
            .map(|v| nn::dot(d_o, &v[span.clone()]))
            .collect();
        let weighted: f64 = a.iter().zip(&d_a).map(|(x, y)| x * y).sum();
        for j in 0..r {
            for (dv, g) in d_values[j][span.clone()].iter_mut().zip(d_o) {
                *dv += a[j] * g;
            }
            let d_logit = a[j] * (d_a[j] - weighted) * scale;
            for i in span.clone() {
                d_q[i] += d_logit * cache.keys[j][i];
                d_keys[j][i] += d_logit * cache.q[i];
            }
        }
    }
    let d_query_src = att.query.backward(&cache.query_src, &d_q, &mut grads.query);
    let mut d_tokens = Vec::with_capacity(r);
    for j in 0..r {
        let mut dt = att.key.backward(&tokens[j], &d_keys[j], &mut grads.key);
        let dv = att.value.backward(&tokens[j], &d_values[j], &mut grads.value);
        dt.iter_mut().zip(dv).for_each(|(a, b)| *a += b);
        d_tokens.push(dt);
    }
    (d_query_src, d_tokens)
}

/// Intermediate values of one forward pass, kept for backprop.
pub struct FlpCache {
    template: Vec<f64>,
    semantic_segments: Vec<Vec<f64>>,
    tokens: Vec<Vec<f64>>,
    attention: Option<AttentionCache>,
    trunk_inputs: Vec<Vec<f64>>,
    trunk_pre: Vec<Vec<f64>>,
}

fn mean_token(tokens: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; tokens[0].len()];
    for t in tokens {
        m.iter_mut().zip(t).for_each(|(a, b)| *a += b);
    }
    let n = tokens.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

pub fn flp_forward_cached(
    params: &FLPParams,
    n: &NoiseVector,
    t: &FaceTemplate,
    s_hat: &SemanticEmbedding,
) -> Result<(LatentCode, AttentionTrace, FlpCache)> {
    let c = &params.config;
    if n.dim() != c.d_n {
        return Err(Error::DimensionMismatch {
            context: "projector noise",
            expected: c.d_n,
            got: n.dim(),
        });
    }
    if t.dim() != c.d_t {
        return Err(Error::DimensionMismatch {
            context: "projector template",
            expected: c.d_t,
            got: t.dim(),
        });
    }
    if s_hat.values.len() != c.regions * c.d_c {
        return Err(Error::DimensionMismatch {
            context: "projector semantic embedding (R * d_c)",
            expected: c.regions * c.d_c,
            got: s_hat.values.len(),
        });
    }
    let noise = nn::normalized(&n.values)
        .ok_or_else(|| Error::InvalidVector("noise vector has zero norm".into()))?;
    let t_proj = params.template_proj.forward(&t.values);
    let semantic_segments: Vec<Vec<f64>> = s_hat
        .values
        .chunks_exact(c.d_c)
        .map(<[f64]>::to_vec)
        .collect();

    let (summary, tokens, attention, trace) = if c.use_semantics {
        let tokens: Vec<Vec<f64>> = semantic_segments
            .iter()
            .map(|s| params.semantic_proj.forward(s))
            .collect();
        match c.attention_mode {
            AttentionMode::None => {
                let trace = AttentionTrace::uniform(c.heads, tokens.len());
                (mean_token(&tokens), tokens, None, trace)
            }
            mode => {
                let query_src = if mode == AttentionMode::Conditional {
                    t_proj.clone()
                } else {
                    mean_token(&tokens)
                };
                let (out, cache) = attention_cached(params, &query_src, &tokens)?;
                let trace = cache.trace.clone();
                (out, tokens, Some(cache), trace)
            }
        }
    } else {
        (vec![0.0; c.d_model], Vec::new(), None, AttentionTrace::empty())
    };

    let mut x = Vec::with_capacity(c.fused_dim());
    x.extend_from_slice(&noise);
    x.extend_from_slice(&t_proj);
    x.extend_from_slice(&summary);

    let mut trunk_inputs = Vec::with_capacity(params.trunk.len());
    let mut trunk_pre = Vec::with_capacity(params.trunk.len());
    let last = params.trunk.len() - 1;
    for (i, layer) in params.trunk.iter().enumerate() {
        let pre = layer.forward(&x);
        trunk_inputs.push(std::mem::take(&mut x));
        x = if i == last {
            pre.clone()
        } else {
            pre.iter().map(|&v| nn::leaky_relu(v, c.leaky_slope)).collect()
        };
        trunk_pre.push(pre);
    }
    let w = LatentCode::new(x)?;
    Ok((
        w,
        trace,
        FlpCache {
            template: t.values.clone(),
            semantic_segments,
            tokens,
            attention,
            trunk_inputs,
            trunk_pre,
        },
    ))
}

/// Maps `(noise, template, predicted semantics)` to a latent code.
pub fn flp_forward(
    params: &FLPParams,
    n: &NoiseVector,
    t: &FaceTemplate,
    s_hat: &SemanticEmbedding,
) -> Result<(LatentCode, AttentionTrace)> {
    let (w, trace, _) = flp_forward_cached(params, n, t, s_hat)?;
    Ok((w, trace))
}

/// Accumulates `dL/dparams` into `grads` given `dL/dw` for one forward pass.
pub fn flp_backward(params: &FLPParams, cache: &FlpCache, d_w: &[f64], grads: &mut FLPParams) {
    let c = &params.config;
    let last = params.trunk.len() - 1;
    let mut d = d_w.to_vec();
    for i in (0..params.trunk.len()).rev() {
        if i != last {
            d.iter_mut()
                .zip(&cache.trunk_pre[i])
                .for_each(|(g, p)| *g *= nn::leaky_relu_grad(*p, c.leaky_slope));
        }
        d = params.trunk[i].backward(&cache.trunk_inputs[i], &d, &mut grads.trunk[i]);
    }
    let m = c.d_model;
    let mut d_t_proj = d[c.d_n..c.d_n + m].to_vec();
    let d_summary = &d[c.d_n + m..c.d_n + 2 * m];

    if c.use_semantics {
        let r = cache.tokens.len();
        let mut d_tokens = vec![vec![0.0; m]; r];
        match (&cache.attention, c.attention_mode) {
            (None, _) => {
                for dt in &mut d_tokens {
                    dt.iter_mut()
                        .zip(d_summary)
                        .for_each(|(a, b)| *a = b / r as f64);
                }
            }
            (Some(att), mode) => {
                let (d_query, d_tok) =
                    attention_backward(params, att, &cache.tokens, d_summary, &mut grads.attention);
                d_tokens = d_tok;
                if mode == AttentionMode::Conditional {
                    d_t_proj.iter_mut().zip(&d_query).for_each(|(a, b)| *a += b);
                } else {
                    for dt in &mut d_tokens {
                        dt.iter_mut()
                            .zip(&d_query)
                            .for_each(|(a, b)| *a += b / r as f64);
                    }
                }
            }
        }
        for (seg, dt) in cache.semantic_segments.iter().zip(&d_tokens) {
            params.semantic_proj.backward(seg, dt, &mut grads.semantic_proj);
        }
    }
    params
        .template_proj
        .backward(&cache.template, &d_t_proj, &mut grads.template_proj);
}
