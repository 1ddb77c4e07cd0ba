//! Client loss functions.
//!
//! Quadratics carry exact optima and smoothness constants so the convergence
//! checks can use known values; classifiers are the empirical track.

mod classifier;
mod quadratic;

pub use classifier::{Architecture, ClassifierObjective, Model};
pub use quadratic::QuadraticObjective;

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// A client's loss `F_i`.
#[derive(Debug, Clone)]
pub enum ClientObjective {
    Quadratic(QuadraticObjective),
    Classifier(ClassifierObjective),
}

impl From<QuadraticObjective> for ClientObjective {
    fn from(q: QuadraticObjective) -> Self {
        Self::Quadratic(q)
    }
}

impl From<ClassifierObjective> for ClientObjective {
    fn from(c: ClassifierObjective) -> Self {
        Self::Classifier(c)
    }
}

impl ClientObjective {
    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic(q) => q.dim(),
            Self::Classifier(c) => c.dim(),
        }
    }

    /// Local sample count; quadratics count as a single sample.
    pub fn n_samples(&self) -> usize {
        match self {
            Self::Quadratic(_) => 1,
            Self::Classifier(c) => c.n_samples(),
        }
    }

    /// Full-data (or analytic) loss.
    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        match self {
            Self::Quadratic(q) => q.loss(w),
            Self::Classifier(c) => c.loss(w),
        }
    }

    /// Unbiased stochastic gradient. Quadratics ignore `batch` and draw noise
    /// from `rng`; classifiers average over `batch` (local positions).
    pub fn grad_minibatch<R: Rng + ?Sized>(&self, w: &[f64], batch: &[usize], rng: &mut R) -> Result<ParamVector> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        match self {
            Self::Quadratic(q) => q.noisy_gradient(w, rng),
            Self::Classifier(c) => c.grad_minibatch(w, batch),
        }
    }

    /// `F_i*`: the exact minimum for quadratics, the cross-entropy lower
    /// bound 0 for classifiers.
    pub fn f_star(&self) -> Result<f64> {
        match self {
            Self::Quadratic(q) => q.optimum().map(|(_, f)| f),
            Self::Classifier(_) => Ok(0.0),
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        match self {
            Self::Quadratic(q) => Some(q),
            Self::Classifier(_) => None,
        }
    }
}

fn check_weights(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::InvalidWeights(format!("{} weights for {n} objectives", p.len())));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// `F = Σ p_i F_i`.
///
/// Quadratics combine coefficient-wise. Classifiers over a shared dataset
/// combine into the objective on the union of their samples, which is only
/// equal to `Σ p_i F_i` for size-proportional weights; other weights are
/// rejected.
pub fn global_objective(objs: &[ClientObjective], p: &[f64]) -> Result<ClientObjective> {
    if objs.is_empty() {
        return Err(Error::InvalidWeights("no objectives".into()));
    }
    check_weights(p, objs.len())?;
    let dim = objs[0].dim();
    for o in objs {
        if o.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: o.dim() });
        }
    }
    if let Some(quads) = objs.iter().map(ClientObjective::as_quadratic).collect::<Option<Vec<_>>>() {
        let mut a = nalgebra::DMatrix::zeros(dim, dim);
        let mut b = ParamVector::zeros(dim);
        let mut c = 0.0;
        for (q, &pi) in quads.iter().zip(p) {
            a += q.matrix() * pi;
            b.axpy(pi, q.linear());
            c += pi * q.offset();
        }
        return QuadraticObjective::new(a, b, c).map(ClientObjective::Quadratic);
    }
    let classifiers: Vec<&ClassifierObjective> = objs
        .iter()
        .map(|o| match o {
            ClientObjective::Classifier(c) => Ok(c),
            ClientObjective::Quadratic(_) => Err(Error::MixedObjectives),
        })
        .collect::<Result<_>>()?;
    let first = classifiers[0];
    let total: usize = classifiers.iter().map(|c| c.n_samples()).sum();
    for (c, &pi) in classifiers.iter().zip(p) {
        if !Arc::ptr_eq(c.dataset(), first.dataset()) || c.model() != first.model() {
            return Err(Error::MixedObjectives);
        }
        let expected = c.n_samples() as f64 / total as f64;
        if (pi - expected).abs() > 1e-12 {
            return Err(Error::InvalidWeights(
                "classifier objectives combine only with size-proportional weights".into(),
            ));
        }
    }
    let rows = classifiers.iter().flat_map(|c| c.rows().iter().copied()).collect();
    ClassifierObjective::new(first.model().arch, Arc::clone(first.dataset()), rows).map(ClientObjective::Classifier)
}
