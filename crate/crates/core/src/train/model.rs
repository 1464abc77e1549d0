//! The trainable stack: feature adapter, contrastive projector, bounded hash
//! head and classifier, with hand-written backward passes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::types::EmbeddingMatrix;

/// Added to every projector output coordinate before normalization so a zero
/// pre-activation still yields a finite unit vector.
pub const PROJ_EPS: f64 = 1e-8;

/// Affine map `y = W x + b`, `W` row-major `out × in`.
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

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    /// Uniform in `±1/sqrt(in_dim)`.
    pub fn random<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut l = Self::zeros(in_dim, out_dim);
        for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        l
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
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
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub proj_dim: usize,
    pub hash_bits: usize,
}

impl ModelShape {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            proj_dim: 64,
            hash_bits: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub adapter: Linear,
    pub proj_hidden: Linear,
    pub proj_out: Linear,
    pub hash1: Linear,
    pub hash2: Linear,
    pub hash3: Linear,
    pub classifier: Linear,
    /// Label of each classifier output row, ascending.
    pub class_labels: Vec<i64>,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub feature: Vec<f64>,
    proj_pre: Vec<f64>,
    proj_act: Vec<f64>,
    proj_norm: f64,
    pub proj: Vec<f64>,
    h1_pre: Vec<f64>,
    h1_act: Vec<f64>,
    h2_pre: Vec<f64>,
    h2_act: Vec<f64>,
    pub hash: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Upstream gradients for one sample.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub feature: Option<Vec<f64>>,
    pub proj: Option<Vec<f64>>,
    pub hash: Option<Vec<f64>>,
    pub logits: Option<Vec<f64>>,
}

impl ModelParams {
    /// Identity adapter, random heads. The classifier covers `class_labels`.
    pub fn init<R: Rng>(shape: ModelShape, class_labels: Vec<i64>, rng: &mut R) -> Self {
        let d = shape.input_dim;
        Self {
            adapter: Linear::identity(d),
            proj_hidden: Linear::random(d, d, rng),
            proj_out: Linear::random(d, shape.proj_dim, rng),
            hash1: Linear::random(d, d, rng),
            hash2: Linear::random(d, d, rng),
            hash3: Linear::random(d, shape.hash_bits, rng),
            classifier: Linear::random(d, class_labels.len(), rng),
            class_labels,
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.adapter.in_dim,
            proj_dim: self.proj_out.out_dim,
            hash_bits: self.hash3.out_dim,
        }
    }

    /// Same architecture, every value zero (gradient / velocity buffers).
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.in_dim, l.out_dim);
        Self {
            adapter: z(&self.adapter),
            proj_hidden: z(&self.proj_hidden),
            proj_out: z(&self.proj_out),
            hash1: z(&self.hash1),
            hash2: z(&self.hash2),
            hash3: z(&self.hash3),
            classifier: z(&self.classifier),
            class_labels: self.class_labels.clone(),
        }
    }

    fn layers(&self) -> [(&'static str, &Linear); 7] {
        [
            ("adapter", &self.adapter),
            ("proj_hidden", &self.proj_hidden),
            ("proj_out", &self.proj_out),
            ("hash1", &self.hash1),
            ("hash2", &self.hash2),
            ("hash3", &self.hash3),
            ("classifier", &self.classifier),
        ]
    }

    fn layers_mut(&mut self) -> [(&'static str, &mut Linear); 7] {
        [
            ("adapter", &mut self.adapter),
            ("proj_hidden", &mut self.proj_hidden),
            ("proj_out", &mut self.proj_out),
            ("hash1", &mut self.hash1),
            ("hash2", &mut self.hash2),
            ("hash3", &mut self.hash3),
            ("classifier", &mut self.classifier),
        ]
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(14);
        for (name, l) in self.layers() {
            out.push((format!("{name}.weight"), l.weight.as_slice()));
            out.push((format!("{name}.bias"), l.bias.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = Vec::with_capacity(14);
        for (name, l) in self.layers_mut() {
            out.push((format!("{name}.weight"), &mut l.weight));
            out.push((format!("{name}.bias"), &mut l.bias));
        }
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, l) in self.layers() {
            if l.weight.iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteParams(name));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: i64) -> Option<usize> {
        self.class_labels.binary_search(&label).ok()
    }

    /// Rebuilds the classifier for `labels` (ascending). Rows of labels that
    /// were already present are kept; new rows are drawn from `fresh`.
    pub fn remap_classifier(&mut self, labels: &[i64], mut fresh: impl FnMut() -> f64) {
        let d = self.classifier.in_dim;
        let mut next = Linear::zeros(d, labels.len());
        for (o, &l) in labels.iter().enumerate() {
            match self.class_index(l) {
                Some(old) => {
                    next.weight[o * d..(o + 1) * d]
                        .copy_from_slice(&self.classifier.weight[old * d..(old + 1) * d]);
                    next.bias[o] = self.classifier.bias[old];
                }
                None => {
                    for w in &mut next.weight[o * d..(o + 1) * d] {
                        *w = fresh();
                    }
                    next.bias[o] = fresh();
                }
            }
        }
        self.classifier = next;
        self.class_labels = labels.to_vec();
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let feature = self.adapter.forward(x);

        let proj_pre = self.proj_hidden.forward(&feature);
        let proj_act: Vec<f64> = proj_pre.iter().map(|&v| gelu(v)).collect();
        let proj_shifted: Vec<f64> = self
            .proj_out
            .forward(&proj_act)
            .into_iter()
            .map(|v| v + PROJ_EPS)
            .collect();
        let proj_norm = proj_shifted.iter().map(|v| v * v).sum::<f64>().sqrt();
        let proj = proj_shifted.iter().map(|v| v / proj_norm).collect();

        let h1_pre = self.hash1.forward(&feature);
        let h1_act: Vec<f64> = h1_pre.iter().map(|&v| gelu(v)).collect();
        let h2_pre = self.hash2.forward(&h1_act);
        let h2_act: Vec<f64> = h2_pre.iter().map(|&v| gelu(v)).collect();
        let hash = self.hash3.forward(&h2_act).into_iter().map(f64::tanh).collect();

        let logits = self.classifier.forward(&feature);
        ForwardCache {
            input: x.to_vec(),
            feature,
            proj_pre,
            proj_act,
            proj_norm,
            proj,
            h1_pre,
            h1_act,
            h2_pre,
            h2_act,
            hash,
            logits,
        }
    }

    /// Forward pass; fails if any output is non-finite.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        if x.len() != self.adapter.in_dim {
            return Err(Error::DimMismatch {
                expected: self.adapter.in_dim,
                got: x.len(),
            });
        }
        let c = self.forward_cached(x);
        let out = ForwardOutput {
            feature: c.feature,
            proj: c.proj,
            hash_pre: c.hash,
            logits: c.logits,
        };
        for (name, v) in [
            ("adapter", &out.feature),
            ("projector", &out.proj),
            ("hash_head", &out.hash_pre),
            ("classifier", &out.logits),
        ] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteParams(name));
            }
        }
        Ok(out)
    }

    /// Adapter features for every row.
    pub fn features(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(x.rows() * self.adapter.out_dim);
        for row in x.iter_rows() {
            data.extend(self.adapter.forward(row));
        }
        EmbeddingMatrix::new(self.adapter.out_dim, data).map_err(|_| Error::NonFiniteParams("adapter"))
    }

    /// Backpropagates one sample's output gradients into `grad`.
    pub fn backward(&self, cache: &ForwardCache, up: &OutputGrads, grad: &mut ModelParams) {
        let mut d_feature = up
            .feature
            .clone()
            .unwrap_or_else(|| vec![0.0; cache.feature.len()]);

        if let Some(dp) = &up.proj {
            // proj = q / ‖q‖  ⇒  dq = (dp − proj (proj·dp)) / ‖q‖
            let pd: f64 = cache.proj.iter().zip(dp).map(|(p, g)| p * g).sum();
            let dq: Vec<f64> = cache
                .proj
                .iter()
                .zip(dp)
                .map(|(p, g)| (g - p * pd) / cache.proj_norm)
                .collect();
            let d_act = self.proj_out.backward(&cache.proj_act, &dq, &mut grad.proj_out);
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&cache.proj_pre)
                .map(|(g, &x)| g * gelu_grad(x))
                .collect();
            let df = self.proj_hidden.backward(&cache.feature, &d_pre, &mut grad.proj_hidden);
            add_into(&mut d_feature, &df);
        }

        if let Some(dh) = &up.hash {
            let d3: Vec<f64> = dh
                .iter()
                .zip(&cache.hash)
                .map(|(g, h)| g * (1.0 - h * h))
                .collect();
            let d_a2 = self.hash3.backward(&cache.h2_act, &d3, &mut grad.hash3);
            let d_p2: Vec<f64> = d_a2
                .iter()
                .zip(&cache.h2_pre)
                .map(|(g, &x)| g * gelu_grad(x))
                .collect();
            let d_a1 = self.hash2.backward(&cache.h1_act, &d_p2, &mut grad.hash2);
            let d_p1: Vec<f64> = d_a1
                .iter()
                .zip(&cache.h1_pre)
                .map(|(g, &x)| g * gelu_grad(x))
                .collect();
            let df = self.hash1.backward(&cache.feature, &d_p1, &mut grad.hash1);
            add_into(&mut d_feature, &df);
        }

        if let Some(dl) = &up.logits {
            let df = self.classifier.backward(&cache.feature, dl, &mut grad.classifier);
            add_into(&mut d_feature, &df);
        }

        self.adapter.backward(&cache.input, &d_feature, &mut grad.adapter);
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub feature: Vec<f64>,
    pub proj: Vec<f64>,
    pub hash_pre: Vec<f64>,
    pub logits: Vec<f64>,
}
