//! IID and label-sorted shard partitioners.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{shuffle, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Client-to-sample assignment over a parent dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
    /// Shard ids held by each client, for shard partitions.
    shards: Option<Vec<Vec<usize>>>,
    shard_size: Option<usize>,
}

impl Partition {
    /// Validates disjointness, non-emptiness and index bounds.
    pub fn new(assignments: Vec<Vec<usize>>, n_samples: usize) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::InfeasiblePartition("no clients".into()));
        }
        let mut seen = vec![false; n_samples];
        for (client, idx) in assignments.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InfeasiblePartition(format!("client {client} is empty")));
            }
            for &i in idx {
                if i >= n_samples {
                    return Err(Error::IndexOutOfRange { index: i, len: n_samples });
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InfeasiblePartition(format!("sample {i} assigned twice")));
                }
            }
        }
        Ok(Self { assignments, shards: None, shard_size: None })
    }

    pub fn client_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn client(&self, i: usize) -> &[usize] {
        &self.assignments[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn shards(&self) -> Option<&[Vec<usize>]> {
        self.shards.as_deref()
    }

    pub fn shard_size(&self) -> Option<usize> {
        self.shard_size
    }
}

/// Per-class quotas for a client of `size` samples, proportional to the
/// global histogram. Remainders go to the largest fractional parts, with
/// ties rotated by client so that no single label absorbs every remainder.
fn quotas(global: &[usize], total: usize, size: usize, client: usize) -> Vec<usize> {
    let k = global.len();
    let exact: Vec<f64> = global.iter().map(|&n| size as f64 * n as f64 / total as f64).collect();
    let mut q: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = q.iter().sum();
    let mut order: Vec<usize> = (0..k).map(|j| (client + j) % k).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &c in order.iter().take(size - assigned) {
        q[c] += 1;
    }
    q
}

/// Split the dataset so that every client's label histogram matches the
/// global one up to integer rounding. Unused samples are dropped.
pub fn partition_iid(ds: &LabeledDataset, sizes: &[usize], seed: u64) -> Result<Partition> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InfeasiblePartition("client sizes must be positive".into()));
    }
    let requested: usize = sizes.iter().sum();
    if requested > ds.len() {
        return Err(Error::InfeasiblePartition(format!("sum of sizes {requested} > {} samples", ds.len())));
    }
    let global = ds.histogram();
    let mut rng = stream(seed, Purpose::Partition, 0, 0);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for i in 0..ds.len() {
        pools[ds.label(i)].push(i);
    }
    for pool in &mut pools {
        shuffle(pool, &mut rng);
    }
    let mut cursor = vec![0usize; ds.n_classes()];
    let mut assignments = Vec::with_capacity(sizes.len());
    for (client, &size) in sizes.iter().enumerate() {
        let q = quotas(&global, ds.len(), size, client);
        let mut mine = Vec::with_capacity(size);
        for (class, &want) in q.iter().enumerate() {
            let have = pools[class].len() - cursor[class];
            if want > have {
                return Err(Error::InfeasiblePartition(format!(
                    "client {client} needs {want} samples of label {class}, only {have} left"
                )));
            }
            mine.extend_from_slice(&pools[class][cursor[class]..cursor[class] + want]);
            cursor[class] += want;
        }
        assignments.push(mine);
    }
    Partition::new(assignments, ds.len())
}

/// Shard layout for [`partition_shards`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardConfig {
    pub n_shards: usize,
    pub min_shards: usize,
    pub max_shards: usize,
}

impl ShardConfig {
    /// `2N` shards, one to three per client.
    pub fn default_for(n_clients: usize) -> Self {
        Self { n_shards: 2 * n_clients, min_shards: 1, max_shards: 3 }
    }
}

/// Sort by label, cut into equal contiguous shards and deal whole shards to
/// clients, each receiving between `min_shards` and `max_shards`.
pub fn partition_shards(ds: &LabeledDataset, n_clients: usize, cfg: ShardConfig, seed: u64) -> Result<Partition> {
    let ShardConfig { n_shards, min_shards, max_shards } = cfg;
    if n_clients == 0 {
        return Err(Error::InfeasiblePartition("n_clients must be positive".into()));
    }
    if min_shards < 1 {
        return Err(Error::InfeasiblePartition("min_shards >= 1 violated".into()));
    }
    if max_shards < min_shards {
        return Err(Error::InfeasiblePartition(format!(
            "max_shards >= min_shards violated ({max_shards} < {min_shards})"
        )));
    }
    if n_shards < n_clients * min_shards {
        return Err(Error::InfeasiblePartition(format!(
            "n_shards >= n_clients * min_shards violated ({n_shards} < {n_clients} * {min_shards})"
        )));
    }
    if n_shards > n_clients * max_shards {
        return Err(Error::InfeasiblePartition(format!(
            "n_shards <= n_clients * max_shards violated ({n_shards} > {n_clients} * {max_shards})"
        )));
    }
    if n_shards > ds.len() {
        return Err(Error::InfeasiblePartition(format!("n_shards <= n_samples violated ({n_shards} > {})", ds.len())));
    }

    let mut sorted: Vec<usize> = (0..ds.len()).collect();
    sorted.sort_by_key(|&i| (ds.label(i), i));
    let shard_size = ds.len() / n_shards;

    let mut rng = stream(seed, Purpose::Partition, 1, 0);
    let mut counts = vec![min_shards; n_clients];
    let mut open: Vec<usize> = if max_shards > min_shards { (0..n_clients).collect() } else { Vec::new() };
    for _ in 0..n_shards - n_clients * min_shards {
        let slot = rng.random_range(0..open.len());
        let c = open[slot];
        counts[c] += 1;
        if counts[c] == max_shards {
            open.swap_remove(slot);
        }
    }

    let mut shard_ids: Vec<usize> = (0..n_shards).collect();
    shuffle(&mut shard_ids, &mut rng);
    let mut next = 0;
    let mut held = Vec::with_capacity(n_clients);
    let mut assignments = Vec::with_capacity(n_clients);
    for &count in &counts {
        let mut mine: Vec<usize> = shard_ids[next..next + count].to_vec();
        next += count;
        mine.sort_unstable();
        let samples = mine.iter().flat_map(|&s| sorted[s * shard_size..(s + 1) * shard_size].iter().copied()).collect();
        assignments.push(samples);
        held.push(mine);
    }
    let mut p = Partition::new(assignments, ds.len())?;
    p.shards = Some(held);
    p.shard_size = Some(shard_size);
    Ok(p)
}

/// Size-proportional client weights `p_i = n_i / Σ n_j`.
pub fn client_weights(partition: &Partition) -> Vec<f64> {
    let total = partition.total() as f64;
    partition.assignments.iter().map(|a| a.len() as f64 / total).collect()
}
