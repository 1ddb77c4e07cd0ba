//! Client-side mini-batch SGD.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::shuffle;
use crate::error::{Error, Result};
use crate::objectives::ClientObjective;
use crate::params::ParamVector;
use crate::rng::{stream, Purpose};

/// Abort threshold on loss and parameter magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `η_t = 1 / (μ (t + γ))`, indexed by global step.
    InverseTheory { mu: f64, gamma: f64 },
    /// `η_r = η₀ · decay^r`, indexed by communication round.
    Geometric { eta0: f64, decay: f64 },
    /// Fixed rate.
    Constant { eta: f64 },
}

impl LrSchedule {
    /// Inverse schedule with `γ = 4L/μ`, so that `η_0 = 1/(4L)`.
    pub fn inverse_theory(mu: f64, ell: f64) -> Self {
        Self::InverseTheory { mu, gamma: 4.0 * ell / mu }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::InverseTheory { mu, gamma } => mu > 0.0 && gamma > 0.0 && mu.is_finite() && gamma.is_finite(),
            Self::Geometric { eta0, decay } => eta0 > 0.0 && decay > 0.0 && decay <= 1.0 && eta0.is_finite(),
            Self::Constant { eta } => eta > 0.0 && eta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid learning-rate schedule {self:?}")))
        }
    }

    /// Rate at global step `t` of communication round `round`.
    pub fn rate(&self, t: u64, round: u64) -> f64 {
        match *self {
            Self::InverseTheory { mu, gamma } => 1.0 / (mu * (t as f64 + gamma)),
            Self::Geometric { eta0, decay } => eta0 * decay.powf(round as f64),
            Self::Constant { eta } => eta,
        }
    }
}

/// How much local work a client does per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "unit", content = "count", rename_all = "snake_case")]
pub enum LocalWork {
    /// A fixed number of SGD steps.
    Steps(u64),
    /// Full passes over the local data.
    Epochs(u64),
}

impl LocalWork {
    /// Steps taken for a client holding `n_samples` with batch size `batch`.
    pub fn steps(&self, n_samples: usize, batch: usize) -> u64 {
        match *self {
            Self::Steps(s) => s,
            Self::Epochs(e) => e * n_samples.div_ceil(batch) as u64,
        }
    }

    pub fn count(&self) -> u64 {
        match *self {
            Self::Steps(c) | Self::Epochs(c) => c,
        }
    }
}

/// Independent random streams consumed by one client in one round.
#[derive(Debug, Clone)]
pub struct LocalStreams {
    pub batching: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl LocalStreams {
    pub fn derive(seed: u64, client: usize, round: u64) -> Self {
        Self {
            batching: stream(seed, Purpose::Batching, client as u64, round),
            noise: stream(seed, Purpose::GradientNoise, client as u64, round),
        }
    }
}

/// Outcome of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRunRecord {
    pub w_end: ParamVector,
    /// Largest stochastic-gradient norm seen.
    pub max_grad_norm: f64,
    pub steps_taken: u64,
    /// Local full-data loss at `w_end`.
    pub end_loss: f64,
    /// Iterates `w_{t0}, …, w_{t0+steps}` when requested.
    pub trajectory: Option<Vec<ParamVector>>,
}

/// Seeded shuffle per epoch, then contiguous `batch`-sized slices; the last
/// short slice is kept.
struct Batcher {
    order: Vec<usize>,
    batch: usize,
    pos: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize) -> Self {
        Self { order: (0..n).collect(), batch, pos: n }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[usize] {
        if self.pos >= self.order.len() {
            shuffle(&mut self.order, rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let slice = &self.order[self.pos..end];
        self.pos = end;
        slice
    }
}

/// Run local SGD from `w_start`: `w ← w − η_t g(w)` at global steps
/// `t0, t0+1, …`.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    obj: &ClientObjective,
    w_start: &ParamVector,
    schedule: &LrSchedule,
    work: LocalWork,
    batch_size: usize,
    t0: u64,
    round: u64,
    client: usize,
    streams: &mut LocalStreams,
    keep_trajectory: bool,
) -> Result<LocalRunRecord> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if work.count() == 0 {
        return Err(Error::InvalidConfig("local work must be positive".into()));
    }
    w_start.check_dim(obj.dim())?;
    let n = obj.n_samples();
    let steps = work.steps(n, batch_size);
    let mut batcher = Batcher::new(n, batch_size);
    let mut w = w_start.clone();
    let mut trajectory = keep_trajectory.then(|| {
        let mut v = Vec::with_capacity(steps as usize + 1);
        v.push(w.clone());
        v
    });
    let mut max_grad_norm = 0.0_f64;
    for k in 0..steps {
        let t = t0 + k;
        let batch = batcher.next(&mut streams.batching);
        let g = obj.grad_minibatch(&w, batch, &mut streams.noise)?;
        if !g.is_finite() {
            return Err(Error::Diverged { client, step: t, reason: "non-finite gradient".into() });
        }
        max_grad_norm = max_grad_norm.max(g.norm_sq().sqrt());
        w.axpy(-schedule.rate(t, round), &g);
        if !w.is_finite() || w.max_abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { client, step: t, reason: format!("parameter magnitude {:e}", w.max_abs()) });
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push(w.clone());
        }
    }
    let end_loss = obj.loss(&w)?;
    if !end_loss.is_finite() || end_loss > DIVERGENCE_LIMIT {
        return Err(Error::Diverged {
            client,
            step: t0 + steps.saturating_sub(1),
            reason: format!("loss {end_loss:e}"),
        });
    }
    Ok(LocalRunRecord { w_end: w, max_grad_norm, steps_taken: steps, end_loss, trajectory })
}
