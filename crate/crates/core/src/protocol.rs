//! The federated round loop: sample, broadcast, train locally, aggregate.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::diagnostics::weighting_skew;
use crate::error::{Error, Result};
use crate::local_update::{client_update, LocalRunRecord, LocalStreams, LocalWork, LrSchedule};
use crate::metrics::accuracy;
use crate::objectives::{global_objective, ClientObjective, Model};
use crate::params::ParamVector;
use crate::rng::{stream, Purpose};
use crate::strategies::{aggregate, CoefficientVector, RoundContext, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    TheoryQuadratic,
    Classification,
}

/// Where the client losses fed to the strategy are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossEval {
    /// `F_i(w_t)` at the incoming global model.
    #[default]
    GlobalAtRoundStart,
    /// `F_i(w_{t+E}^i)` at each client's own end-of-round model.
    LocalAtRoundEnd,
}

/// Parameters of one federated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub n_clients: usize,
    pub participation: f64,
    pub rounds: u64,
    pub local_work: LocalWork,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub strategy: Strategy,
    pub seed: u64,
    pub loss_eval: LossEval,
    pub track: Track,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 || self.rounds == 0 || self.batch_size == 0 || self.local_work.count() == 0 {
            return Err(Error::InvalidConfig(
                "client count, rounds, batch size and local work must be positive".into(),
            ));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidConfig(format!("participation {} outside (0, 1]", self.participation)));
        }
        self.schedule.validate()?;
        self.strategy.validate()
    }

    /// Clients selected per round, `max(round(C·N), 1)`.
    pub fn clients_per_round(&self) -> usize {
        selection_size(self.n_clients, self.participation)
    }
}

fn selection_size(n: usize, c: f64) -> usize {
    ((c * n as f64).round() as usize).clamp(1, n)
}

/// Uniform `m`-subset without replacement, ascending.
pub fn sample_clients<R: Rng + ?Sized>(rng: &mut R, n: usize, participation: f64) -> Vec<usize> {
    let m = selection_size(n, participation);
    if m == n {
        return (0..n).collect();
    }
    let mut ids = sample(rng, n, m).into_vec();
    ids.sort_unstable();
    ids
}

/// Per-round quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// Global step counter at round start.
    pub t_step: u64,
    pub selected: Vec<usize>,
    pub alpha: CoefficientVector,
    /// `F(w)` of the aggregated model.
    pub global_loss: f64,
    /// Test accuracy of the aggregated model (classification track).
    pub accuracy: Option<f64>,
    /// Weighting skew at the round-start model; `None` when undefined.
    pub rho_wt: Option<f64>,
    /// Weighting skew at the global optimum (theory track).
    pub rho_wstar: Option<f64>,
    /// `‖w_{t+E} − w*‖²` of the aggregated model (theory track).
    pub opt_dist_sq: Option<f64>,
    /// Largest stochastic-gradient norm seen by any client this round.
    pub max_grad_norm: f64,
}

/// Per-step client iterates retained for the analysis checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrajectory {
    pub round: u64,
    pub t0: u64,
    pub client_ids: Vec<usize>,
    pub p: Vec<f64>,
    pub alpha: CoefficientVector,
    /// `η_t` for each local step of the round.
    pub etas: Vec<f64>,
    /// `paths[i][k]` is client `i`'s iterate after `k` steps.
    pub paths: Vec<Vec<ParamVector>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamKey {
    pub purpose: u64,
    pub client: u64,
    pub round: u64,
}

/// Which random streams a round consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundProvenance {
    pub round: u64,
    pub sampling: StreamKey,
    pub batching: Vec<StreamKey>,
    pub noise: Vec<StreamKey>,
}

/// Known optimum data of a quadratic federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInfo {
    pub w_star: ParamVector,
    pub f_star: f64,
    pub client_f_star: Vec<f64>,
    /// `F* − Σ p_i F_i*`.
    pub heterogeneity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Diverged { round: u64, client: usize, step: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: FedConfig,
    pub records: Vec<RoundRecord>,
    pub final_model: ParamVector,
    pub outcome: Outcome,
    /// Running maximum of `‖g_i‖` over the run.
    pub g_hat: f64,
    pub theory: Option<TheoryInfo>,
    pub trajectories: Option<Vec<RoundTrajectory>>,
    pub provenance: Vec<RoundProvenance>,
}

impl ExperimentResult {
    pub fn diverged(&self) -> bool {
        matches!(self.outcome, Outcome::Diverged { .. })
    }

    pub fn accuracy_curve(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.accuracy).collect()
    }
}

/// Everything a run needs besides its configuration.
#[derive(Debug, Clone)]
pub struct Federation<'a> {
    pub clients: &'a [ClientObjective],
    /// Client weights `p_i`, summing to one.
    pub weights: &'a [f64],
    pub initial_model: ParamVector,
    /// Held-out set and classifier layout for per-round accuracy.
    pub test: Option<(&'a LabeledDataset, Model)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads for client updates; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Keep every client's per-step iterates.
    pub retain_trajectories: bool,
}

/// Weighting skew `Σ α_i gap_i / Σ p_i gap_i` over the selected clients.
pub fn skew(alpha: &[f64], p: &[f64], gaps: &[f64]) -> Option<f64> {
    let den: f64 = p.iter().zip(gaps).map(|(a, g)| a * g).sum();
    weighting_skew(alpha, gaps, den)
}

/// Run the federated loop.
///
/// Divergence of any client stops the run; the records gathered so far are
/// returned with [`Outcome::Diverged`].
pub fn run_federated(config: &FedConfig, fed: &Federation<'_>, opts: RunOptions) -> Result<ExperimentResult> {
    config.validate()?;
    let n = fed.clients.len();
    if n != config.n_clients {
        return Err(Error::InvalidConfig(format!("config names {} clients, federation holds {n}", config.n_clients)));
    }
    if fed.weights.len() != n {
        return Err(Error::InvalidWeights(format!("{} weights for {n} clients", fed.weights.len())));
    }
    let dim = fed.initial_model.dim();
    for c in fed.clients {
        if c.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: c.dim() });
        }
    }

    let pool = match opts.workers {
        Some(w) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let body = || run_loop(config, fed, opts);
    match pool {
        Some(p) => p.install(body),
        None => body(),
    }
}

fn theory_info(fed: &Federation<'_>) -> Result<Option<(TheoryInfo, ClientObjective)>> {
    if fed.clients.iter().any(|c| c.as_quadratic().is_none()) {
        return Ok(None);
    }
    let global = global_objective(fed.clients, fed.weights)?;
    let (w_star, f_star) = global.as_quadratic().expect("quadratic").optimum()?;
    let client_f_star = fed.clients.iter().map(|c| c.f_star()).collect::<Result<Vec<_>>>()?;
    let weighted: f64 = fed.weights.iter().zip(&client_f_star).map(|(p, f)| p * f).sum();
    Ok(Some((TheoryInfo { w_star, f_star, client_f_star, heterogeneity: f_star - weighted }, global)))
}

fn run_loop(config: &FedConfig, fed: &Federation<'_>, opts: RunOptions) -> Result<ExperimentResult> {
    let n = fed.clients.len();
    let theory = theory_info(fed)?;
    let client_f_star: Vec<f64> = match &theory {
        Some((info, _)) => info.client_f_star.clone(),
        None => fed.clients.iter().map(|c| c.f_star()).collect::<Result<_>>()?,
    };
    let gaps_star_all: Option<Vec<f64>> = match &theory {
        Some((info, _)) => Some(
            fed.clients
                .iter()
                .zip(&client_f_star)
                .map(|(c, f)| c.loss(&info.w_star).map(|l| l - f))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let all_losses = |w: &ParamVector| -> Result<Vec<f64>> { fed.clients.par_iter().map(|c| c.loss(w)).collect() };
    let global_loss = |losses: &[f64]| -> f64 { fed.weights.iter().zip(losses).map(|(p, l)| p * l).sum() };

    let mut w = fed.initial_model.clone();
    let mut losses_at_w = all_losses(&w)?;
    let mut t: u64 = 0;
    let mut g_hat = 0.0_f64;
    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut trajectories = opts.retain_trajectories.then(Vec::new);
    let mut provenance = Vec::with_capacity(config.rounds as usize);
    let mut accuracy_history = Vec::new();
    let mut outcome = Outcome::Completed;

    for round in 0..config.rounds {
        let mut sampler = stream(config.seed, Purpose::ClientSampling, 0, round);
        let selected = sample_clients(&mut sampler, n, config.participation);
        let p_raw: Vec<f64> = selected.iter().map(|&i| fed.weights[i]).collect();
        let p_sum: f64 = p_raw.iter().sum();
        let p: Vec<f64> = p_raw.iter().map(|x| x / p_sum).collect();

        let updates: Vec<Result<LocalRunRecord>> = selected
            .par_iter()
            .map(|&i| {
                let mut streams = LocalStreams::derive(config.seed, i, round);
                client_update(
                    &fed.clients[i],
                    &w,
                    &config.schedule,
                    config.local_work,
                    config.batch_size,
                    t,
                    round,
                    i,
                    &mut streams,
                    opts.retain_trajectories,
                )
            })
            .collect();

        let mut runs = Vec::with_capacity(selected.len());
        for u in updates {
            match u {
                Ok(r) => runs.push(r),
                Err(Error::Diverged { client, step, reason }) => {
                    outcome = Outcome::Diverged { round, client, step, reason };
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !matches!(outcome, Outcome::Completed) {
            break;
        }

        let gaps_at_w: Vec<f64> = selected.iter().map(|&i| losses_at_w[i] - client_f_star[i]).collect();
        let eval_losses = match config.loss_eval {
            LossEval::GlobalAtRoundStart => selected.iter().map(|&i| losses_at_w[i]).collect(),
            LossEval::LocalAtRoundEnd => runs.iter().map(|r| r.end_loss).collect(),
        };
        let f_star_sel: Vec<f64> = selected.iter().map(|&i| client_f_star[i]).collect();
        let round_max_grad = runs.iter().map(|r| r.max_grad_norm).fold(0.0, f64::max);
        g_hat = g_hat.max(round_max_grad);
        let steps_this_round = runs.iter().map(|r| r.steps_taken).max().unwrap_or(0);

        let mut paths = Vec::new();
        let mut local_models = Vec::with_capacity(runs.len());
        for r in runs {
            if let Some(tr) = r.trajectory {
                paths.push(tr);
            }
            local_models.push(r.w_end);
        }

        let ctx = RoundContext {
            round,
            client_ids: selected.clone(),
            p: p.clone(),
            local_models,
            eval_losses,
            f_star: f_star_sel,
            accuracy_history: accuracy_history.clone(),
            global_model_prev: w.clone(),
        };
        let alpha = config.strategy.coefficients(&ctx)?;
        let w_next = aggregate(&ctx, &alpha)?;

        let rho_wt = skew(alpha.as_slice(), &p, &gaps_at_w);
        let (rho_wstar, opt_dist_sq) = match &theory {
            Some((info, _)) => {
                let all = gaps_star_all.as_ref().expect("theory track");
                let gaps_star: Vec<f64> = selected.iter().map(|&i| all[i]).collect();
                (skew(alpha.as_slice(), &p, &gaps_star), Some(w_next.dist_sq(&info.w_star)))
            }
            None => (None, None),
        };

        let next_losses = all_losses(&w_next)?;
        let loss_value = match &theory {
            Some((_, global)) => global.loss(&w_next)?,
            None => global_loss(&next_losses),
        };
        let acc = fed.test.as_ref().map(|(ds, model)| accuracy(model, &w_next, ds));
        if let Some(a) = acc {
            accuracy_history.push(a);
        }

        if let Some(trs) = trajectories.as_mut() {
            let etas = (0..steps_this_round).map(|k| config.schedule.rate(t + k, round)).collect();
            trs.push(RoundTrajectory {
                round,
                t0: t,
                client_ids: selected.clone(),
                p: p.clone(),
                alpha: alpha.clone(),
                etas,
                paths,
            });
        }
        provenance.push(RoundProvenance {
            round,
            sampling: StreamKey { purpose: Purpose::ClientSampling as u64, client: 0, round },
            batching: selected
                .iter()
                .map(|&i| StreamKey { purpose: Purpose::Batching as u64, client: i as u64, round })
                .collect(),
            noise: selected
                .iter()
                .map(|&i| StreamKey { purpose: Purpose::GradientNoise as u64, client: i as u64, round })
                .collect(),
        });
        records.push(RoundRecord {
            round,
            t_step: t,
            selected,
            alpha,
            global_loss: loss_value,
            accuracy: acc,
            rho_wt,
            rho_wstar,
            opt_dist_sq,
            max_grad_norm: round_max_grad,
        });

        w = w_next;
        losses_at_w = next_losses;
        t += steps_this_round;
    }

    Ok(ExperimentResult {
        config: config.clone(),
        records,
        final_model: w,
        outcome,
        g_hat,
        theory: theory.map(|(info, _)| info),
        trajectories,
        provenance,
    })
}

/// One run per seed, in parallel; results are in seed order.
pub fn run_seeds(
    config: &FedConfig,
    fed: &Federation<'_>,
    seeds: &[u64],
    opts: RunOptions,
) -> Result<Vec<ExperimentResult>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = FedConfig { seed, ..config.clone() };
            run_federated(&cfg, fed, RunOptions { workers: None, ..opts })
        })
        .collect()
}

/// Analysis-only iterate `w_t = Σ α_r^i w_t^i` at every global step, with
/// the round's coefficients; for `α = p` this is exactly
/// `w_{t+1} = w_t − η_t Σ p_i g_i(w_t^i)`. At round boundaries it equals the
/// served global model. The last entry is the final aggregated model.
pub fn virtual_iterate(result: &ExperimentResult) -> Result<Vec<ParamVector>> {
    let trs = result.trajectories.as_ref().ok_or(Error::MissingTrajectories)?;
    let mut out = Vec::new();
    for tr in trs {
        let steps = tr.etas.len();
        if tr.paths.iter().any(|p| p.len() != steps + 1) {
            return Err(Error::Precondition("virtual iterate needs the same local step count on every client".into()));
        }
        for k in 0..steps {
            let models: Vec<&[f64]> = tr.paths.iter().map(|p| p[k].as_slice()).collect();
            out.push(crate::params::weighted_sum(tr.alpha.as_slice(), &models)?);
        }
    }
    out.push(result.final_model.clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::QuadraticObjective;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(n: usize, strategy: Strategy, rounds: u64, steps: u64, schedule: LrSchedule) -> FedConfig {
        FedConfig {
            n_clients: n,
            participation: 1.0,
            rounds,
            local_work: LocalWork::Steps(steps),
            batch_size: 1,
            schedule,
            strategy,
            seed: 3,
            loss_eval: LossEval::GlobalAtRoundStart,
            track: Track::TheoryQuadratic,
        }
    }

    #[test]
    fn sampling_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_clients(&mut rng, 5, 1.0), vec![0, 1, 2, 3, 4]);
        let s = sample_clients(&mut rng, 100, 0.1);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_clients(&mut rng, 3, 0.01).len(), 1);
    }

    #[test]
    fn skew_basics() {
        assert_eq!(skew(&[0.5, 0.5], &[0.5, 0.5], &[2.0, 4.0]), Some(1.0));
        let r = skew(&[0.0, 1.0], &[0.5, 0.5], &[2.0, 4.0]).unwrap();
        assert!((r - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(skew(&[0.5, 0.5], &[0.5, 0.5], &[0.0, 0.0]), None);
    }

    #[test]
    fn single_client_equals_centralised_sgd() {
        let q = QuadraticObjective::diagonal(&[1.0, 3.0], vec![1.0, 2.0], 0.0).unwrap().with_noise(0.2).unwrap();
        let clients: Vec<ClientObjective> = vec![q.clone().into()];
        let fed = Federation { clients: &clients, weights: &[1.0], initial_model: ParamVector::zeros(2), test: None };
        let sched = LrSchedule::inverse_theory(1.0, 3.0);
        let cfg = config(1, Strategy::FedWorse, 4, 3, sched);
        let res = run_federated(&cfg, &fed, RunOptions::default()).unwrap();
        assert!(res.records.iter().all(|r| r.alpha.as_slice() == [1.0]));

        let mut w = ParamVector::zeros(2);
        let obj: ClientObjective = q.into();
        for round in 0..4 {
            let mut s = LocalStreams::derive(3, 0, round);
            w = client_update(&obj, &w, &sched, LocalWork::Steps(3), 1, round * 3, round, 0, &mut s, false)
                .unwrap()
                .w_end;
        }
        assert_eq!(res.final_model, w);
    }

    #[test]
    fn identical_clients_make_strategies_agree() {
        let q: ClientObjective = QuadraticObjective::diagonal(&[2.0, 1.0], vec![1.0, -1.0], 0.0).unwrap().into();
        let clients = vec![q.clone(), q.clone(), q];
        let weights = [0.2, 0.3, 0.5];
        let fed = Federation { clients: &clients, weights: &weights, initial_model: vec![4.0, 4.0].into(), test: None };
        let sched = LrSchedule::Constant { eta: 0.1 };
        let a = run_federated(&config(3, Strategy::FedAvg, 10, 2, sched), &fed, RunOptions::default()).unwrap();
        let b = run_federated(&config(3, Strategy::FedWorse, 10, 2, sched), &fed, RunOptions::default()).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!((x.global_loss - y.global_loss).abs() < 1e-12);
        }
        assert!(a.final_model.dist_sq(&b.final_model) < 1e-24);
    }

    #[test]
    fn divergence_keeps_partial_records() {
        let q: ClientObjective = QuadraticObjective::diagonal(&[10.0], vec![0.0], 0.0).unwrap().into();
        let clients = vec![q];
        let fed = Federation { clients: &clients, weights: &[1.0], initial_model: vec![1.0].into(), test: None };
        // |1 - 0.3 * 10| = 2 per step: blows past 1e12 after ~40 steps
        let cfg = config(1, Strategy::FedAvg, 100, 1, LrSchedule::Constant { eta: 0.3 });
        let res = run_federated(&cfg, &fed, RunOptions::default()).unwrap();
        assert!(res.diverged());
        assert!(!res.records.is_empty() && res.records.len() < 100);
    }

    #[test]
    fn rejects_inconsistent_federation() {
        let q: ClientObjective = QuadraticObjective::diagonal(&[1.0], vec![0.0], 0.0).unwrap().into();
        let clients = vec![q];
        let fed = Federation { clients: &clients, weights: &[1.0], initial_model: vec![1.0, 2.0].into(), test: None };
        let cfg = config(1, Strategy::FedAvg, 1, 1, LrSchedule::Constant { eta: 0.1 });
        assert!(matches!(run_federated(&cfg, &fed, RunOptions::default()), Err(Error::DimensionMismatch { .. })));
        let cfg = config(2, Strategy::FedAvg, 1, 1, LrSchedule::Constant { eta: 0.1 });
        assert!(run_federated(&cfg, &fed, RunOptions::default()).is_err());
    }

    #[test]
    fn virtual_iterate_requires_trajectories() {
        let q: ClientObjective = QuadraticObjective::diagonal(&[1.0], vec![0.0], 0.0).unwrap().into();
        let clients = vec![q];
        let fed = Federation { clients: &clients, weights: &[1.0], initial_model: vec![1.0].into(), test: None };
        let cfg = config(1, Strategy::FedAvg, 2, 1, LrSchedule::Constant { eta: 0.1 });
        let res = run_federated(&cfg, &fed, RunOptions::default()).unwrap();
        assert_eq!(virtual_iterate(&res).unwrap_err(), Error::MissingTrajectories);
    }
}
