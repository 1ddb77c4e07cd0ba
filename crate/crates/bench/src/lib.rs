//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use fedweight_core::datasets::{client_weights, generate_blobs, partition_shards, ShardConfig};
use fedweight_core::{
    Architecture, ClassifierObjective, ClientObjective, FedConfig, LocalWork, LossEval, LrSchedule, ParamVector,
    RoundContext, Strategy, Track,
};

/// A context with `n` clients and spread-out, deterministic gaps.
pub fn context(n: usize) -> RoundContext {
    let raw: Vec<f64> = (0..n).map(|i| 1.0 + (i * 7 % 13) as f64).collect();
    let s: f64 = raw.iter().sum();
    RoundContext {
        round: 5,
        client_ids: (0..n).collect(),
        p: raw.iter().map(|x| x / s).collect(),
        local_models: Vec::new(),
        eval_losses: (0..n).map(|i| 0.5 + (i * 31 % 17) as f64 * 0.1).collect(),
        f_star: vec![0.0; n],
        accuracy_history: vec![0.3, 0.4],
        global_model_prev: ParamVector::zeros(1),
    }
}

/// Softmax clients on shard-partitioned blobs, with size-proportional weights.
pub fn classification_clients(n_clients: usize) -> (Vec<ClientObjective>, Vec<f64>, usize) {
    let ds = Arc::new(generate_blobs(10, 60 * n_clients / 10 + 6, 10, 1.0, 3).expect("blobs"));
    let part = partition_shards(&ds, n_clients, ShardConfig::default_for(n_clients), 3).expect("shards");
    let clients: Vec<ClientObjective> = part
        .assignments()
        .iter()
        .map(|rows| {
            ClassifierObjective::new(Architecture::Softmax, Arc::clone(&ds), rows.clone()).expect("client").into()
        })
        .collect();
    let dim = clients[0].dim();
    (clients, client_weights(&part), dim)
}

pub fn round_config(n_clients: usize, strategy: Strategy, rounds: u64) -> FedConfig {
    FedConfig {
        n_clients,
        participation: 1.0,
        rounds,
        local_work: LocalWork::Epochs(1),
        batch_size: 32,
        schedule: LrSchedule::Constant { eta: 0.05 },
        strategy,
        seed: 0,
        loss_eval: LossEval::LocalAtRoundEnd,
        track: Track::Classification,
    }
}
