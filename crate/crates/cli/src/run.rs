//! Running a spec: seeded repeats, summary statistics and the output bundle.

use std::path::{Path, PathBuf};

use fedweight_core::diagnostics::{
    bound_V_E, check_corollary_rate, check_discrepancy, check_lemma_smooth, check_theorem_recursion, CheckReport,
    SkewTrajectory, TheoryConstants, TheoryReport,
};
use fedweight_core::metrics::{confidence_interval, rounds_to_threshold, DEFAULT_LEVEL};
use fedweight_core::objectives::global_objective;
use fedweight_core::protocol::{run_federated, ExperimentResult, Outcome, RunOptions};
use fedweight_core::rng::{stream, Purpose};
use fedweight_core::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, EXIT_CHECK_FAILED, EXIT_DIVERGED, EXIT_OK};
use crate::output::{curve_csv, write_atomic};
use crate::setup::{build, Setup};
use crate::spec::{ExperimentSpec, Overrides};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tail slope required by the rate check.
pub const MAX_TAIL_SLOPE: f64 = -0.8;
/// Fraction of steps the recursion check may miss.
pub const RECURSION_ALLOWANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// `None` with fewer than two runs.
    pub ci_half_width: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let ci = confidence_interval(samples, DEFAULT_LEVEL).ok().map(|s| s.ci_half_width);
        Some(Self { mean, ci_half_width: ci, n: samples.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStat {
    pub threshold: f64,
    /// Runs that never reached the threshold count as `rounds + 1`.
    pub censored_at: u64,
    pub not_reached: usize,
    pub stat: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub rounds_run: usize,
    pub rounds_to_threshold: Option<usize>,
    pub final_accuracy: Option<f64>,
    pub final_loss: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tool: String,
    pub version: String,
    pub name: String,
    pub config_hash: String,
    pub overrides: Vec<String>,
    pub strategy: String,
    pub ci_method: String,
    pub seeds: Vec<u64>,
    pub rounds_to_threshold: Option<ThresholdStat>,
    pub final_accuracy: Option<Stat>,
    pub final_loss: Option<Stat>,
    pub diverged_seeds: Vec<u64>,
    pub per_seed: Vec<SeedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCheck {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryDocument {
    pub version: String,
    pub config_hash: String,
    pub report: TheoryReport,
    pub skipped: Vec<SkippedCheck>,
}

impl TheoryDocument {
    pub fn all_pass(&self) -> bool {
        self.report.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub overrides: Vec<String>,
    pub results: Vec<ExperimentResult>,
    pub summary: Summary,
    pub theory: Option<TheoryDocument>,
}

impl Experiment {
    pub fn exit_code(&self) -> i32 {
        if !self.summary.diverged_seeds.is_empty() {
            EXIT_DIVERGED
        } else if self.theory.as_ref().is_some_and(|t| !t.all_pass()) {
            EXIT_CHECK_FAILED
        } else {
            EXIT_OK
        }
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    b.build().map_err(|e| CliError::internal(format!("thread pool: {e}")))
}

/// Apply overrides, validate, and run every repeat. Nothing is written.
pub fn execute(
    mut spec: ExperimentSpec,
    overrides: &Overrides,
    workers: Option<usize>,
) -> Result<Experiment, CliError> {
    let log = overrides.apply(&mut spec);
    spec.validate()?;
    if spec.diagnostics.enabled {
        if let crate::spec::DataSpec::Quadratic { seed: None, .. } = spec.data {
            return Err(CliError::config("diagnostics need a fixed data.seed so repeats share one problem"));
        }
    }
    let retain = spec.diagnostics.enabled;
    let seeds = spec.seeds();
    let runs: Vec<(Setup, ExperimentResult)> = pool(workers)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let setup = build(&spec, seed)?;
                let result = run_federated(
                    &setup.config,
                    &setup.federation(),
                    RunOptions { workers: None, retain_trajectories: retain },
                )?;
                Ok((setup, result))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let summary = summarize(&spec, &log, &runs);
    let theory = if retain && summary.diverged_seeds.is_empty() { Some(theory_document(&spec, &runs)?) } else { None };
    Ok(Experiment { spec, overrides: log, results: runs.into_iter().map(|(_, r)| r).collect(), summary, theory })
}

fn summarize(spec: &ExperimentSpec, overrides: &[String], runs: &[(Setup, ExperimentResult)]) -> Summary {
    let classification = !spec.data.is_quadratic();
    let mut per_seed = Vec::with_capacity(runs.len());
    for (setup, r) in runs {
        let acc = r.accuracy_curve();
        let final_loss = r.records.last().map(|x| x.global_loss).unwrap_or(f64::NAN);
        per_seed.push(SeedSummary {
            seed: setup.config.seed,
            rounds_run: r.records.len(),
            rounds_to_threshold: rounds_to_threshold(&acc, spec.threshold),
            final_accuracy: acc.last().copied(),
            final_loss,
            outcome: r.outcome.clone(),
        });
    }
    let completed: Vec<&SeedSummary> = per_seed.iter().filter(|s| matches!(s.outcome, Outcome::Completed)).collect();
    let censored_at = spec.rounds + 1;
    let rounds_to_threshold = classification.then(|| {
        let vals: Vec<f64> =
            completed.iter().map(|s| s.rounds_to_threshold.map(|r| r as f64).unwrap_or(censored_at as f64)).collect();
        ThresholdStat {
            threshold: spec.threshold,
            censored_at,
            not_reached: completed.iter().filter(|s| s.rounds_to_threshold.is_none()).count(),
            stat: Stat::of(&vals),
        }
    });
    let accs: Vec<f64> = completed.iter().filter_map(|s| s.final_accuracy).collect();
    let losses: Vec<f64> = completed.iter().map(|s| s.final_loss).collect();
    Summary {
        tool: "fedweight".into(),
        version: VERSION.into(),
        name: spec.name.clone(),
        config_hash: spec.config_hash(),
        overrides: overrides.to_vec(),
        strategy: runs.first().map(|(s, _)| s.config.strategy.to_string()).unwrap_or_default(),
        ci_method: format!("student-t, {}%", DEFAULT_LEVEL * 100.0),
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        rounds_to_threshold,
        final_accuracy: Stat::of(&accs),
        final_loss: Stat::of(&losses),
        diverged_seeds: per_seed.iter().filter(|s| !matches!(s.outcome, Outcome::Completed)).map(|s| s.seed).collect(),
        per_seed,
    }
}

fn skip_or<T>(
    name: &str,
    r: fedweight_core::Result<T>,
    skipped: &mut Vec<SkippedCheck>,
) -> Result<Option<T>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (CoreError::Precondition(_) | CoreError::MissingTrajectories)) => {
            skipped.push(SkippedCheck { name: name.into(), reason: e.to_string() });
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn theory_document(spec: &ExperimentSpec, runs: &[(Setup, ExperimentResult)]) -> Result<TheoryDocument, CliError> {
    let setup = &runs[0].0;
    let results: Vec<ExperimentResult> = runs.iter().map(|(_, r)| r.clone()).collect();
    let constants = TheoryConstants::from_runs(&setup.clients, &setup.weights, &setup.initial_model, &results)?;
    let trajs = results
        .iter()
        .map(|r| SkewTrajectory::from_records(&r.records, &setup.weights))
        .collect::<fedweight_core::Result<Vec<_>>>()?;
    let (rho_bar, rho_tilde) = SkewTrajectory::extremes(&trajs);
    let tau = setup.config.local_work.count();
    let mut checks: Vec<CheckReport> = Vec::new();
    let mut skipped = Vec::new();

    let global = global_objective(&setup.clients, &setup.weights)?;
    let q = global.as_quadratic().expect("quadratic track");
    let mut rng = stream(spec.base_seed, Purpose::DataGeneration, 0, 0);
    checks.push(check_lemma_smooth(q, spec.diagnostics.smooth_samples, &mut rng)?);
    if let Some(c) = skip_or("discrepancy", check_discrepancy(&results, &constants), &mut skipped)? {
        checks.push(c);
    }
    let bounds = match rho_bar {
        Some(bar) => {
            let tilde = rho_tilde.unwrap_or(bar);
            if let Some(c) = skip_or(
                "theorem_recursion",
                check_theorem_recursion(&results, &constants, bar, tilde, RECURSION_ALLOWANCE, 1e-9),
                &mut skipped,
            )? {
                checks.push(c);
            }
            match skip_or("bounds", bound_V_E(&constants, bar, tilde, tau), &mut skipped)? {
                Some(b) => {
                    if let Some((c, _)) = skip_or(
                        "corollary_rate",
                        check_corollary_rate(&results, &constants, &b, MAX_TAIL_SLOPE),
                        &mut skipped,
                    )? {
                        checks.push(c);
                    }
                    Some(b)
                }
                None => None,
            }
        }
        None => {
            skipped
                .push(SkippedCheck { name: "theorem_recursion".into(), reason: "rho undefined in every round".into() });
            None
        }
    };
    Ok(TheoryDocument {
        version: VERSION.into(),
        config_hash: spec.config_hash(),
        report: TheoryReport {
            constants,
            tau,
            rho_bar,
            rho_tilde,
            pi: trajs.iter().map(|t| t.pi).fold(f64::INFINITY, f64::min),
            big_pi: trajs.iter().map(|t| t.big_pi).fold(f64::NEG_INFINITY, f64::max),
            bounds,
            rho_wt: trajs.iter().map(|t| t.rho_wt.clone()).collect(),
            rho_wstar: trajs.iter().map(|t| t.rho_wstar.clone()).collect(),
            checks,
        },
        skipped,
    })
}

/// Header comments plus the resolved spec.
pub fn resolved_config(exp: &Experiment) -> String {
    let mut s = format!("# fedweight {VERSION}\n# config_hash = {}\n", exp.summary.config_hash);
    for o in &exp.overrides {
        s.push_str(&format!("# override: {o}\n"));
    }
    s.push_str(&exp.spec.to_toml());
    s
}

/// Write the bundle into the spec's output directory; returns written paths.
pub fn write_bundle(exp: &Experiment) -> Result<Vec<PathBuf>, CliError> {
    let dir: &Path = &exp.spec.output.dir;
    let mut written = Vec::new();
    for r in &exp.results {
        let p = dir.join(format!("curve_seed{}.csv", r.config.seed));
        write_atomic(&p, &curve_csv(r)?)?;
        written.push(p);
    }
    let p = dir.join("summary.json");
    write_atomic(&p, to_json(&exp.summary)?.as_bytes())?;
    written.push(p);
    let p = dir.join("resolved_config.toml");
    write_atomic(&p, resolved_config(exp).as_bytes())?;
    written.push(p);
    if let Some(t) = &exp.theory {
        let p = dir.join("theory_report.json");
        write_atomic(&p, to_json(t)?.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::internal(e.to_string()))
}
