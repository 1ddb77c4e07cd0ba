//! Labeled datasets and their partition across clients.

mod idx;
mod partition;

pub use idx::{load_idx, write_idx_images, write_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{client_weights, partition_iid, partition_shards, Partition, ShardConfig};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Row-major feature matrix with one integer label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        }
        if n_features == 0 || n_classes == 0 {
            return Err(Error::InvalidDataset("feature and class counts must be positive".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::InvalidDataset(format!(
                "{} feature values do not fill {} rows of {} features",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidDataset(format!("label {bad} outside [0, {n_classes})")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(Self { features, labels, n_features, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Per-class sample counts.
    pub fn histogram(&self) -> Vec<usize> {
        histogram(self.labels.iter().copied(), self.n_classes)
    }

    /// Histogram of the labels found at `indices`.
    pub fn histogram_of(&self, indices: &[usize]) -> Vec<usize> {
        histogram(indices.iter().map(|&i| self.labels[i]), self.n_classes)
    }

    /// A new dataset holding the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.n_features, self.n_classes)
    }

    /// Multiply feature `j` of every row by `scales[j]`.
    pub fn rescale_features(&self, scales: &[f64]) -> Result<Self> {
        if scales.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, actual: scales.len() });
        }
        let features =
            self.features.chunks(self.n_features).flat_map(|row| row.iter().zip(scales).map(|(x, s)| x * s)).collect();
        Self::new(features, self.labels.clone(), self.n_features, self.n_classes)
    }
}

/// Log-spaced scales from `1/√c` to `√c`, so the largest-to-smallest ratio
/// is `c`.
pub fn log_spaced_scales(dim: usize, condition: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    (0..dim).map(|j| condition.powf(j as f64 / (dim - 1) as f64 - 0.5)).collect()
}

fn histogram(labels: impl Iterator<Item = usize>, n_classes: usize) -> Vec<usize> {
    let mut h = vec![0; n_classes];
    for l in labels {
        h[l] += 1;
    }
    h
}

/// Gaussian class clusters. Class means are drawn from a standard normal
/// scaled by `sqrt(dim)`-independent unit variance; samples add isotropic
/// noise with standard deviation `spread`. Samples are ordered by class.
pub fn generate_blobs(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidDataset("all blob counts must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidDataset(format!("invalid spread {spread}")));
    }
    let mut rng = stream(seed, Purpose::DataGeneration, 0, 0);
    let means: Vec<Vec<f64>> =
        (0..n_classes).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let noise = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut features = Vec::with_capacity(n_classes * per_class * dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let eps = if spread == 0.0 { 0.0 } else { noise.sample(&mut rng) };
                features.push(m + eps);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, dim, n_classes)
}

/// Blob training and test sets sharing the same class means.
pub fn generate_blob_split(
    n_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let all = generate_blobs(n_classes, train_per_class + test_per_class, dim, spread, seed)?;
    let per = train_per_class + test_per_class;
    let mut train = Vec::with_capacity(n_classes * train_per_class);
    let mut test = Vec::with_capacity(n_classes * test_per_class);
    for c in 0..n_classes {
        train.extend(c * per..c * per + train_per_class);
        test.extend(c * per + train_per_class..(c + 1) * per);
    }
    Ok((all.subset(&train)?, all.subset(&test)?))
}

/// Shuffle helper shared by the partitioners.
pub(crate) fn shuffle<R: Rng + ?Sized>(v: &mut [usize], rng: &mut R) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}
