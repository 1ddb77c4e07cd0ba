use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Classifier family used on the classification track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Multinomial logistic regression.
    Softmax,
    /// One hidden ReLU layer followed by a softmax layer.
    Mlp { hidden: usize },
}

impl Architecture {
    pub const DEFAULT_HIDDEN: usize = 32;
}

/// Parameter layout and forward/backward passes for an [`Architecture`].
///
/// Softmax: `W (k×d)` row-major, then `b (k)`.
/// MLP: `W1 (h×d)`, `b1 (h)`, `W2 (k×h)`, `b2 (k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Model {
    pub fn new(arch: Architecture, n_features: usize, n_classes: usize) -> Self {
        Self { arch, n_features, n_classes }
    }

    pub fn param_dim(&self) -> usize {
        let (d, k) = (self.n_features, self.n_classes);
        match self.arch {
            Architecture::Softmax => k * d + k,
            Architecture::Mlp { hidden: h } => h * d + h + k * h + k,
        }
    }

    /// Softmax starts at zero; MLP weights are uniform in `±1/√fan_in` with
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut w = vec![0.0; self.param_dim()];
        if let Architecture::Mlp { hidden: h } = self.arch {
            let (d, k) = (self.n_features, self.n_classes);
            let r1 = 1.0 / (d as f64).sqrt();
            for v in &mut w[..h * d] {
                *v = rng.random_range(-r1..r1);
            }
            let r2 = 1.0 / (h as f64).sqrt();
            let off = h * d + h;
            for v in &mut w[off..off + k * h] {
                *v = rng.random_range(-r2..r2);
            }
        }
        w.into()
    }

    fn hidden_width(&self) -> usize {
        match self.arch {
            Architecture::Softmax => 0,
            Architecture::Mlp { hidden } => hidden,
        }
    }

    /// Class logits for one sample; `hidden` receives the pre-activations.
    fn forward(&self, w: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (d, k) = (self.n_features, self.n_classes);
        match self.arch {
            Architecture::Softmax => {
                let bias = &w[k * d..];
                for c in 0..k {
                    let row = &w[c * d..(c + 1) * d];
                    logits[c] = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Architecture::Mlp { hidden: h } => {
                let b1 = &w[h * d..h * d + h];
                for j in 0..h {
                    let row = &w[j * d..(j + 1) * d];
                    hidden[j] = b1[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                let off = h * d + h;
                let b2 = &w[off + k * h..];
                for c in 0..k {
                    let row = &w[off + c * h..off + (c + 1) * h];
                    logits[c] = b2[c] + row.iter().zip(hidden.iter()).map(|(a, z)| a * z.max(0.0)).sum::<f64>();
                }
            }
        }
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut logits = vec![0.0; self.n_classes];
        self.forward(w, x, &mut hidden, &mut logits);
        argmax(&logits)
    }

    /// Cross-entropy of one sample; accumulates `scale · ∇` into `grad` when given.
    fn sample_loss(
        &self,
        w: &[f64],
        x: &[f64],
        y: usize,
        grad: Option<(&mut [f64], f64)>,
        hidden: &mut [f64],
        logits: &mut [f64],
    ) -> f64 {
        self.forward(w, x, hidden, logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        let loss = lse - logits[y];
        let Some((grad, scale)) = grad else {
            return loss;
        };
        // logits now become dL/dz = softmax − onehot
        for (c, z) in logits.iter_mut().enumerate() {
            *z = (*z - lse).exp() - if c == y { 1.0 } else { 0.0 };
        }
        let (d, k) = (self.n_features, self.n_classes);
        match self.arch {
            Architecture::Softmax => {
                for c in 0..k {
                    let dz = scale * logits[c];
                    for (g, xi) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *g += dz * xi;
                    }
                    grad[k * d + c] += dz;
                }
            }
            Architecture::Mlp { hidden: h } => {
                let off = h * d + h;
                for c in 0..k {
                    let dz = scale * logits[c];
                    for j in 0..h {
                        grad[off + c * h + j] += dz * hidden[j].max(0.0);
                    }
                    grad[off + k * h + c] += dz;
                }
                for j in 0..h {
                    if hidden[j] <= 0.0 {
                        continue;
                    }
                    let da: f64 = (0..k).map(|c| w[off + c * h + j] * logits[c]).sum::<f64>() * scale;
                    for (g, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += da * xi;
                    }
                    grad[h * d + j] += da;
                }
            }
        }
        loss
    }

    /// Mean cross-entropy over `rows` of `data`.
    pub fn mean_loss(&self, w: &[f64], data: &LabeledDataset, rows: &[usize]) -> f64 {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut logits = vec![0.0; self.n_classes];
        let total: f64 =
            rows.iter().map(|&i| self.sample_loss(w, data.row(i), data.label(i), None, &mut hidden, &mut logits)).sum();
        total / rows.len() as f64
    }

    /// Mean cross-entropy and its gradient over `rows` of `data`.
    pub fn mean_loss_grad(&self, w: &[f64], data: &LabeledDataset, rows: &[usize]) -> (f64, ParamVector) {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut logits = vec![0.0; self.n_classes];
        let mut grad = vec![0.0; self.param_dim()];
        let scale = 1.0 / rows.len() as f64;
        let mut total = 0.0;
        for &i in rows {
            total +=
                self.sample_loss(w, data.row(i), data.label(i), Some((&mut grad, scale)), &mut hidden, &mut logits);
        }
        (total * scale, grad.into())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of a classifier on one client's local samples.
#[derive(Debug, Clone)]
pub struct ClassifierObjective {
    model: Model,
    data: Arc<LabeledDataset>,
    rows: Vec<usize>,
}

impl ClassifierObjective {
    /// `rows` index into `data`; they form this client's local dataset.
    pub fn new(arch: Architecture, data: Arc<LabeledDataset>, rows: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidDataset("client holds no samples".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= data.len()) {
            return Err(Error::IndexOutOfRange { index: bad, len: data.len() });
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::InvalidConfig("MLP hidden width must be positive".into()));
        }
        let model = Model::new(arch, data.n_features(), data.n_classes());
        Ok(Self { model, data, rows })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn dataset(&self) -> &Arc<LabeledDataset> {
        &self.data
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.model.param_dim()
    }

    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        Ok(self.model.mean_loss(w, &self.data, &self.rows))
    }

    /// Mean gradient over `batch`, given as positions within the local dataset.
    pub fn grad_minibatch(&self, w: &[f64], batch: &[usize]) -> Result<ParamVector> {
        self.check(w)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut rows = Vec::with_capacity(batch.len());
        for &b in batch {
            rows.push(*self.rows.get(b).ok_or(Error::IndexOutOfRange { index: b, len: self.rows.len() })?);
        }
        Ok(self.model.mean_loss_grad(w, &self.data, &rows).1)
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: w.len() });
        }
        Ok(())
    }
}
