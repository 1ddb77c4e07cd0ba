//! Accuracy, rounds-to-threshold and Student-t confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::objectives::Model;

pub const DEFAULT_THRESHOLD: f64 = 0.60;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Fraction of argmax-correct predictions; 0 on an empty set.
pub fn accuracy(model: &Model, w: &[f64], test: &LabeledDataset) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let correct = (0..test.len()).filter(|&i| model.predict(w, test.row(i)) == test.label(i)).count();
    correct as f64 / test.len() as f64
}

/// Per-round values of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub seed: u64,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(seed: u64, values: Vec<f64>) -> Self {
        Self { seed, values }
    }

    pub fn rounds_to(&self, threshold: f64) -> Option<usize> {
        rounds_to_threshold(&self.values, threshold)
    }
}

/// 1-based index of the first value `≥ threshold`.
pub fn rounds_to_threshold(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&a| a >= threshold).map(|i| i + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mean: f64,
    pub ci_half_width: f64,
    pub n_runs: usize,
    pub level: f64,
}

impl RunStats {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half_width
    }

    pub fn overlaps(&self, other: &RunStats) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

/// `mean ± t_{(1+level)/2, n−1} · s / √n`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<RunStats> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { needed: 2, got: n });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence level {level} outside (0, 1)")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    Ok(RunStats { mean, ci_half_width: t * var.sqrt() / (n as f64).sqrt(), n_runs: n, level })
}

/// Mean and standard error of the mean.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
