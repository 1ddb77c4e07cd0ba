//! Experiment spec files.

use std::path::{Path, PathBuf};

use fedweight_core::local_update::{LocalWork, LrSchedule};
use fedweight_core::protocol::LossEval;
use fedweight_core::strategies::Strategy;
use fedweight_core::Architecture;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

fn default_repeats() -> usize {
    1
}

fn default_threshold() -> f64 {
    fedweight_core::metrics::DEFAULT_THRESHOLD
}

fn default_strategy() -> String {
    "fedavg".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub rounds: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    /// Accuracy threshold for the rounds-to-threshold metric.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub federation: FederationSpec,
    pub local: LocalSpec,
    pub schedule: ScheduleSpec,
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSpec {
    pub clients: usize,
    #[serde(default = "one")]
    pub participation: f64,
    #[serde(default)]
    pub loss_eval: LossEval,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    pub batch_size: usize,
}

impl LocalSpec {
    pub fn work(&self) -> Result<LocalWork, CliError> {
        match (self.steps, self.epochs) {
            (Some(s), None) => Ok(LocalWork::Steps(s)),
            (None, Some(e)) => Ok(LocalWork::Epochs(e)),
            _ => Err(CliError::config("[local] needs exactly one of `steps` or `epochs`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `μ` and `γ` default to the quadratic problem's `min μ_i` and `4L/μ`.
    InverseTheory {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
    },
    Geometric {
        eta0: f64,
        decay: f64,
    },
    Constant {
        eta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Random quadratic clients; the theory track.
    Quadratic {
        dim: usize,
        eig_min: f64,
        eig_max: f64,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        identical: bool,
        /// Every coordinate of the starting model.
        #[serde(default)]
        init: f64,
        /// Fixed problem seed; absent means one problem per repeat.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Gaussian class clusters.
    Blobs {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        dim: usize,
        spread: f64,
        /// Largest-to-smallest feature scale ratio.
        #[serde(default = "one")]
        anisotropy: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// IDX image/label files; relative paths resolve against the spec file.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
}

impl DataSpec {
    pub fn is_quadratic(&self) -> bool {
        matches!(self, Self::Quadratic { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    /// Equal-size clients with the global label mix.
    Iid,
    /// Label-sorted shards, `min..=max` per client.
    Shards {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shards: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_shards: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_shards: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
}

fn default_smooth_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_smooth_samples")]
    pub smooth_samples: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self { enabled: false, smooth_samples: default_smooth_samples() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("fedweight-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

/// Command-line values that replace spec fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub repeats: Option<usize>,
    pub strategy: Option<String>,
    pub base_seed: Option<u64>,
    pub rounds: Option<u64>,
    pub threshold: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    /// Apply to `spec`, returning `key=value` lines for the echo.
    pub fn apply(&self, spec: &mut ExperimentSpec) -> Vec<String> {
        let mut log = Vec::new();
        if let Some(r) = self.repeats {
            spec.repeats = r;
            log.push(format!("repeats={r}"));
        }
        if let Some(s) = &self.strategy {
            spec.strategy = s.clone();
            log.push(format!("strategy={s}"));
        }
        if let Some(s) = self.base_seed {
            spec.base_seed = s;
            log.push(format!("base_seed={s}"));
        }
        if let Some(r) = self.rounds {
            spec.rounds = r;
            log.push(format!("rounds={r}"));
        }
        if let Some(t) = self.threshold {
            spec.threshold = t;
            log.push(format!("threshold={t}"));
        }
        if let Some(d) = &self.out_dir {
            spec.output.dir = d.clone();
            log.push(format!("output.dir={}", d.display()));
        }
        log
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("spec: {e}")))
    }

    /// Load a spec file; relative IDX paths are made relative to its folder.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut spec = Self::from_toml(&text)?;
        if let DataSpec::Idx { train_images, train_labels, test_images, test_labels, .. } = &mut spec.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn parsed_strategy(&self) -> Result<Strategy, CliError> {
        let s: Strategy = self.strategy.parse().map_err(|e| CliError::config(format!("{e}")))?;
        s.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(s)
    }

    /// Checks everything that does not need data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::config(m));
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.federation.clients == 0 {
            return bad("federation.clients must be positive".into());
        }
        let c = self.federation.participation;
        if !(c > 0.0 && c <= 1.0) {
            return bad(format!("participation {c} outside (0, 1]"));
        }
        if self.local.batch_size == 0 {
            return bad("local.batch_size must be positive".into());
        }
        let work = self.local.work()?;
        if work.count() == 0 {
            return bad("local work must be positive".into());
        }
        self.parsed_strategy()?;
        match &self.data {
            DataSpec::Quadratic { dim, eig_min, eig_max, noise_std, .. } => {
                if *dim == 0 || !(*eig_min > 0.0 && eig_min <= eig_max) || !(*noise_std >= 0.0) {
                    return bad("quadratic data needs dim > 0, 0 < eig_min <= eig_max, noise_std >= 0".into());
                }
                if !matches!(work, LocalWork::Steps(_)) {
                    return bad("quadratic data needs local.steps".into());
                }
                if self.partition.is_some() || self.model.is_some() {
                    return bad("quadratic data takes no [partition] or [model]".into());
                }
            }
            DataSpec::Blobs { classes, train_per_class, test_per_class, dim, spread, anisotropy, .. } => {
                if *classes < 2 || *train_per_class == 0 || *test_per_class == 0 || *dim == 0 {
                    return bad("blob data needs >= 2 classes and positive counts".into());
                }
                if !(*spread > 0.0 && *anisotropy >= 1.0) {
                    return bad("blob data needs spread > 0 and anisotropy >= 1".into());
                }
            }
            DataSpec::Idx { .. } => {}
        }
        if !self.data.is_quadratic() {
            if self.partition.is_none() {
                return bad("classification data needs a [partition] table".into());
            }
            if self.diagnostics.enabled {
                return bad("diagnostics need quadratic data".into());
            }
            if let ScheduleSpec::InverseTheory { mu: None, .. } | ScheduleSpec::InverseTheory { gamma: None, .. } =
                self.schedule
            {
                return bad("inverse_theory on classification data needs explicit mu and gamma".into());
            }
        }
        match self.schedule {
            ScheduleSpec::InverseTheory { mu, gamma } => {
                if mu.is_some_and(|m| !(m > 0.0)) || gamma.is_some_and(|g| !(g > 0.0)) {
                    return bad("inverse_theory needs mu > 0 and gamma > 0".into());
                }
            }
            ScheduleSpec::Geometric { eta0, decay } => {
                if !(eta0 > 0.0 && decay > 0.0 && decay <= 1.0) {
                    return bad("geometric needs eta0 > 0 and decay in (0, 1]".into());
                }
            }
            ScheduleSpec::Constant { eta } => {
                if !(eta > 0.0) {
                    return bad("constant schedule needs eta > 0".into());
                }
            }
        }
        Ok(())
    }

    /// Schedule with problem-derived defaults filled in.
    pub fn lr_schedule(&self, mu_ell: Option<(f64, f64)>) -> Result<LrSchedule, CliError> {
        Ok(match self.schedule {
            ScheduleSpec::InverseTheory { mu, gamma } => {
                let (m0, l0) = mu_ell.unwrap_or((f64::NAN, f64::NAN));
                let mu = mu.unwrap_or(m0);
                let gamma = gamma.unwrap_or(4.0 * l0 / m0);
                if !(mu > 0.0 && gamma > 0.0) {
                    return Err(CliError::config("cannot derive inverse_theory constants"));
                }
                LrSchedule::InverseTheory { mu, gamma }
            }
            ScheduleSpec::Geometric { eta0, decay } => LrSchedule::Geometric { eta0, decay },
            ScheduleSpec::Constant { eta } => LrSchedule::Constant { eta },
        })
    }

    /// SHA-256 of the resolved spec without its output location.
    pub fn config_hash(&self) -> String {
        let mut s = self.clone();
        s.output.dir = PathBuf::new();
        hex::encode(Sha256::digest(s.to_toml().as_bytes()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|k| self.base_seed + k).collect()
    }
}
