//! Dense layers, activations, vector helpers and an Adam optimizer.
//!
//! Everything here works on `f64` slices with explicit row-major weights so
//! that forward passes are bit-reproducible and backward passes can be checked
//! against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn gaussian_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity. Returns `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = l2_norm(a);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(a.iter().map(|x| x / n).collect())
}

/// Vector-Jacobian product of `x -> x / ||x||`.
pub fn normalize_vjp(x: &[f64], dy: &[f64]) -> Vec<f64> {
    let n = l2_norm(x);
    let y_dot = dot(x, dy) / (n * n);
    x.iter()
        .zip(dy)
        .map(|(xi, dyi)| (dyi - xi * y_dot) / n)
        .collect()
}

/// Gradient of `1 - cos(a, b)` with respect to `a`.
pub fn one_minus_cos_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let c = dot(a, b) / (na * nb);
    a.iter()
        .zip(b)
        .map(|(ai, bi)| -(bi / (na * nb) - c * ai / (na * na)))
        .collect()
}

pub fn mean_squared_error(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Fan-in scaled uniform init, `U(-1/sqrt(in), 1/sqrt(in))` for weights and bias.
    pub fn kaiming_uniform(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn gaussian(in_dim: usize, out_dim: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let weight = gaussian_vec(rng, in_dim * out_dim)
            .into_iter()
            .map(|x| x * scale)
            .collect();
        let bias = gaussian_vec(rng, out_dim)
            .into_iter()
            .map(|x| x * scale)
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| dot(self.row(o), x) + self.bias[o])
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = self.row(o);
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    /// `dL/dx` only, for frozen layers.
    pub fn backward_input(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, w) in dx.iter_mut().zip(self.row(o)) {
                *d += g * w;
            }
        }
        dx
    }

    /// Frobenius norm, an upper bound on the operator norm.
    pub fn frobenius_norm(&self) -> f64 {
        l2_norm(&self.weight)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// A model whose parameters are a fixed list of named flat tensors.
pub trait ParamSet: Clone {
    /// Named sections with their shapes, in a stable order.
    fn sections(&self) -> Vec<(String, Vec<usize>, &[f64])>;

    fn sections_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.sections_mut() {
            s.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.sections().iter().map(|(_, _, d)| d.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.sections()
            .into_iter()
            .flat_map(|(_, _, d)| d.iter().copied())
            .collect()
    }

    fn all_finite(&self) -> bool {
        self.sections().iter().all(|(_, _, d)| all_finite(d))
    }

    fn scale(&mut self, factor: f64) {
        for s in self.sections_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

pub(crate) fn linear_sections<'a>(
    name: &str,
    l: &'a Linear,
) -> [(String, Vec<usize>, &'a [f64]); 2] {
    [
        (
            format!("{name}.weight"),
            vec![l.out_dim, l.in_dim],
            l.weight.as_slice(),
        ),
        (format!("{name}.bias"), vec![l.out_dim], l.bias.as_slice()),
    ]
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let g: Vec<Vec<f64>> = grads
            .sections()
            .into_iter()
            .map(|(_, _, d)| d.to_vec())
            .collect();
        if self.m.is_empty() {
            self.m = g.iter().map(|s| vec![0.0; s.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.sections_mut().into_iter().enumerate() {
            let (m, v, gs) = (&mut self.m[k], &mut self.v[k], &g[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gs[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gs[i] * gs[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999)
    }
}
