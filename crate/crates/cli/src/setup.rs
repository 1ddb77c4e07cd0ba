//! Turning a spec and a seed into clients, weights and a test set.

use std::sync::Arc;

use fedweight_core::datasets::{
    client_weights, generate_blob_split, load_idx, log_spaced_scales, partition_iid, partition_shards, ShardConfig,
};
use fedweight_core::diagnostics::{heterogeneous_clients, identical_clients};
use fedweight_core::protocol::{FedConfig, Federation, Track};
use fedweight_core::rng::{stream, Purpose};
use fedweight_core::{ClassifierObjective, ClientObjective, LabeledDataset, Model, ParamVector, QuadraticObjective};

use crate::error::CliError;
use crate::spec::{DataSpec, ExperimentSpec, PartitionSpec};

/// Owned inputs of one seeded run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub clients: Vec<ClientObjective>,
    pub weights: Vec<f64>,
    pub initial_model: ParamVector,
    pub test: Option<(LabeledDataset, Model)>,
    pub config: FedConfig,
}

impl Setup {
    pub fn federation(&self) -> Federation<'_> {
        Federation {
            clients: &self.clients,
            weights: &self.weights,
            initial_model: self.initial_model.clone(),
            test: self.test.as_ref().map(|(d, m)| (d, *m)),
        }
    }

    pub fn quadratics(&self) -> Option<Vec<QuadraticObjective>> {
        self.clients.iter().map(|c| c.as_quadratic().cloned()).collect()
    }
}

fn smoothness(qs: &[QuadraticObjective]) -> (f64, f64) {
    let mu = qs.iter().map(|q| q.smoothness_constants().0).fold(f64::INFINITY, f64::min);
    let ell = qs.iter().map(|q| q.smoothness_constants().1).fold(0.0, f64::max);
    (mu, ell)
}

fn limit(ds: LabeledDataset, n: Option<usize>) -> Result<LabeledDataset, CliError> {
    match n {
        Some(n) if n < ds.len() => Ok(ds.subset(&(0..n).collect::<Vec<_>>())?),
        _ => Ok(ds),
    }
}

fn load_classification(data: &DataSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    match data {
        DataSpec::Blobs { classes, train_per_class, test_per_class, dim, spread, anisotropy, seed: fixed } => {
            let (train, test) =
                generate_blob_split(*classes, *train_per_class, *test_per_class, *dim, *spread, fixed.unwrap_or(seed))?;
            if *anisotropy == 1.0 {
                return Ok((train, test));
            }
            let scales = log_spaced_scales(*dim, *anisotropy);
            Ok((train.rescale_features(&scales)?, test.rescale_features(&scales)?))
        }
        DataSpec::Idx { train_images, train_labels, test_images, test_labels, train_limit, test_limit } => {
            let train = limit(load_idx(train_images, train_labels)?, *train_limit)?;
            let test = limit(load_idx(test_images, test_labels)?, *test_limit)?;
            if train.n_features() != test.n_features() {
                return Err(CliError::config("train and test images differ in size"));
            }
            let k = train.n_classes().max(test.n_classes());
            let widen = |d: LabeledDataset| -> Result<LabeledDataset, CliError> {
                if d.n_classes() == k {
                    return Ok(d);
                }
                let f: Vec<f64> = (0..d.len()).flat_map(|i| d.row(i).to_vec()).collect();
                Ok(LabeledDataset::new(f, d.labels().to_vec(), d.n_features(), k)?)
            };
            Ok((widen(train)?, widen(test)?))
        }
        DataSpec::Quadratic { .. } => unreachable!("classification loader called on quadratic data"),
    }
}

/// Build everything one run with `seed` needs.
pub fn build(spec: &ExperimentSpec, seed: u64) -> Result<Setup, CliError> {
    spec.validate()?;
    let strategy = spec.parsed_strategy()?;
    let n = spec.federation.clients;
    let work = spec.local.work()?;
    let (clients, weights, initial_model, test, schedule, track) = match &spec.data {
        DataSpec::Quadratic { dim, eig_min, eig_max, noise_std, identical, init, seed: fixed } => {
            let problem_seed = fixed.unwrap_or(seed);
            let qs = if *identical {
                identical_clients(n, *dim, *eig_min, *eig_max, *noise_std, problem_seed)?
            } else {
                heterogeneous_clients(n, *dim, *eig_min, *eig_max, *noise_std, problem_seed)?
            };
            let schedule = spec.lr_schedule(Some(smoothness(&qs)))?;
            let clients: Vec<ClientObjective> = qs.into_iter().map(Into::into).collect();
            (
                clients,
                vec![1.0 / n as f64; n],
                ParamVector::from(vec![*init; *dim]),
                None,
                schedule,
                Track::TheoryQuadratic,
            )
        }
        data => {
            let (train, test) = load_classification(data, seed)?;
            let train = Arc::new(train);
            let partition = match spec.partition.as_ref().expect("validated") {
                PartitionSpec::Iid => {
                    let each = train.len() / n;
                    if each == 0 {
                        return Err(CliError::config(format!("{} samples cannot feed {n} clients", train.len())));
                    }
                    partition_iid(&train, &vec![each; n], seed)?
                }
                PartitionSpec::Shards { shards, min_shards, max_shards, seed: fixed } => {
                    let d = ShardConfig::default_for(n);
                    let cfg = ShardConfig {
                        n_shards: shards.unwrap_or(d.n_shards),
                        min_shards: min_shards.unwrap_or(d.min_shards),
                        max_shards: max_shards.unwrap_or(d.max_shards),
                    };
                    partition_shards(&train, n, cfg, fixed.unwrap_or(seed))?
                }
            };
            let arch = spec.model.as_ref().map(|m| m.architecture).unwrap_or(fedweight_core::Architecture::Softmax);
            let model = Model::new(arch, train.n_features(), train.n_classes());
            let weights = client_weights(&partition);
            let clients = (0..n)
                .map(|c| {
                    ClassifierObjective::new(arch, train.clone(), partition.client(c).to_vec())
                        .map(ClientObjective::from)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let w0 = model.init(&mut stream(seed, Purpose::ModelInit, 0, 0));
            (clients, weights, w0, Some((test, model)), spec.lr_schedule(None)?, Track::Classification)
        }
    };
    let config = FedConfig {
        n_clients: n,
        participation: spec.federation.participation,
        rounds: spec.rounds,
        local_work: work,
        batch_size: spec.local.batch_size,
        schedule,
        strategy,
        seed,
        loss_eval: spec.federation.loss_eval,
        track,
    };
    config.validate()?;
    Ok(Setup { clients, weights, initial_model, test, config })
}
