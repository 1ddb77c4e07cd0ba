//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits nonzero when a criterion fails that is not in `KNOWN_UNATTAINED`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedweight_cli::compare::check_comparable;
use fedweight_cli::output::curve_csv;
use fedweight_cli::presets;
use fedweight_cli::run::{execute, write_bundle, Experiment};
use fedweight_cli::Overrides;
use fedweight_core::datasets::{generate_blobs, partition_iid, partition_shards, ShardConfig};
use fedweight_core::diagnostics::{
    bound_V_E, check_corollary_rate, check_discrepancy, check_theorem_recursion, heterogeneous_clients,
    identical_clients, random_quadratic, smoothness_ratio, weighting_skew, CheckReport, SkewTrajectory,
    TheoryConstants,
};
use fedweight_core::strategies::{LambdaSchedule, Phase, Trigger};
use fedweight_core::{
    run_federated, run_seeds, ClientObjective, ExperimentResult, FedConfig, Federation, LocalWork, LossEval,
    LrSchedule, ParamVector, QuadraticObjective, RoundContext, RunOptions, Strategy, Track,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale R60 orderings that do not hold on any task tried.
const KNOWN_UNATTAINED: [usize; 2] = [9, 10];

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64, detail: String) -> Verdict {
    let secs = elapsed.as_secs_f64();
    ensure(secs < limit_s as f64, format!("{detail}; {secs:.2}s (limit {limit_s}s)"))
}

fn random_context(rng: &mut ChaCha8Rng) -> RoundContext {
    let n = rng.random_range(1..20);
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..10.0)).collect();
    let s: f64 = raw.iter().sum();
    let f_star: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let gaps: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-4.0..2.0))).collect();
    RoundContext {
        round: rng.random_range(0..60),
        client_ids: (0..n).collect(),
        p: raw.iter().map(|x| x / s).collect(),
        local_models: Vec::new(),
        eval_losses: f_star.iter().zip(&gaps).map(|(f, g)| f + g).collect(),
        f_star,
        accuracy_history: (0..rng.random_range(0..5)).map(|_| rng.random::<f64>()).collect(),
        global_model_prev: ParamVector::zeros(1),
    }
}

fn constructors(rng: &mut ChaCha8Rng) -> Vec<Strategy> {
    let t = 10f64.powf(rng.random_range(-6.0..3.0));
    let k = rng.random_range(0.01..=1.0);
    vec![
        Strategy::FedAvg,
        Strategy::FedWorse,
        Strategy::FedBetter,
        Strategy::FedWorseK { k },
        Strategy::FedBetterK { k },
        Strategy::FedSoftWorse { temperature: t },
        Strategy::FedSoftBetter { temperature: t },
        Strategy::Discrete(vec![
            Phase { strategy: Strategy::FedSoftBetter { temperature: t }, until: Some(Trigger::RoundBelow(20)) },
            Phase { strategy: Strategy::FedAvg, until: Some(Trigger::AccuracyBelow(0.5)) },
            Phase { strategy: Strategy::FedWorse, until: None },
        ]),
        Strategy::Anneal {
            base: Box::new(Strategy::FedAvg),
            target: Box::new(Strategy::FedSoftWorse { temperature: t }),
            lambda: LambdaSchedule::Linear { from: 0.0, to: 1.0, rounds: 30 },
        },
    ]
}

fn simplex_suite() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let ctx = random_context(&mut rng);
        for s in constructors(&mut rng) {
            let a = s.coefficients(&ctx).map_err(|e| format!("{s}: {e}"))?;
            let dev = (a.as_slice().iter().sum::<f64>() - 1.0).abs();
            worst = worst.max(dev);
            if a.len() != ctx.len() || a.as_slice().iter().any(|&x| x < 0.0) || dev > 1e-12 {
                bad += 1;
            }
        }
    }
    let detail = format!("90000 outputs, {bad} off-simplex, max |sum-1| {worst:.1e}");
    if bad > 0 {
        return Err(detail);
    }
    within(start.elapsed(), 10, detail)
}

fn argmax(x: &[f64]) -> usize {
    x.iter().enumerate().fold(0, |b, (i, &v)| if v > x[b] { i } else { b })
}

fn soft_limits() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tested = 0;
    let (mut sel_bad, mut flat_bad) = (0, 0);
    let mut worst_flat: f64 = 0.0;
    while tested < 1000 {
        let mut ctx = random_context(&mut rng);
        if ctx.len() < 2 {
            continue;
        }
        let gaps: Vec<f64> = (0..ctx.len()).map(|_| rng.random_range(0.0..10.0)).collect();
        ctx.eval_losses = ctx.f_star.iter().zip(&gaps).map(|(f, g)| f + g).collect();
        let mut sorted = gaps.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        if sorted[n - 1] - sorted[n - 2] < 1e-3 || sorted[1] - sorted[0] < 1e-3 {
            continue;
        }
        tested += 1;
        for (soft, hard) in [
            (Strategy::FedSoftWorse { temperature: 1e-6 }, Strategy::FedWorse),
            (Strategy::FedSoftBetter { temperature: 1e-6 }, Strategy::FedBetter),
        ] {
            let a = soft.coefficients(&ctx).map_err(|e| e.to_string())?;
            let h = hard.coefficients(&ctx).map_err(|e| e.to_string())?;
            if argmax(a.as_slice()) != argmax(h.as_slice()) {
                sel_bad += 1;
            }
        }
        for s in [Strategy::FedSoftWorse { temperature: 1e9 }, Strategy::FedSoftBetter { temperature: 1e9 }] {
            let a = s.coefficients(&ctx).map_err(|e| e.to_string())?;
            let d = a.as_slice().iter().zip(&ctx.p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst_flat = worst_flat.max(d);
            if d > 1e-6 {
                flat_bad += 1;
            }
        }
    }
    ensure(
        sel_bad == 0 && flat_bad == 0,
        format!("1000 contexts: {sel_bad} selection mismatches, {flat_bad} far from p (max {worst_flat:.1e})"),
    )
}

fn lemma_smooth() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut top_bad) = (0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.random_range(1..12);
        let hi = rng.random_range(0.2..50.0);
        let q = random_quadratic(dim, 0.1, hi, 3.0, 0.0, &mut rng).map_err(|e| e.to_string())?;
        let (w_star, _) = q.optimum().map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let s = 10f64.powf(rng.random_range(-3.0..3.0));
            let w: Vec<f64> = w_star.iter().map(|x| x + s * rng.random_range(-1.0..1.0)).collect();
            if let Some(r) = smoothness_ratio(&q, &w_star, &w).map_err(|e| e.to_string())? {
                worst = worst.max(r);
                if r > 1.0 + 1e-9 {
                    violations += 1;
                }
            }
        }
        let eig = q.matrix().clone().symmetric_eigen();
        let v = eig.eigenvectors.column(eig.eigenvalues.imax());
        let w: Vec<f64> = w_star.iter().zip(v.iter()).map(|(x, y)| x + 0.7 * y).collect();
        let r = smoothness_ratio(&q, &w_star, &w).map_err(|e| e.to_string())?.unwrap_or(f64::NAN);
        if (r - 1.0).abs() > 1e-9 || r.is_nan() {
            top_bad += 1;
        }
    }
    let detail =
        format!("10000 pairs, {violations} violations, max ratio {worst:.12}; top eigenvector off in {top_bad}/100");
    if violations > 0 || top_bad > 0 {
        return Err(detail);
    }
    within(start.elapsed(), 5, detail)
}

fn theory_config(qs: &[QuadraticObjective], strategy: Strategy, rounds: u64, steps: u64) -> FedConfig {
    let mu = qs.iter().map(|q| q.smoothness_constants().0).fold(f64::INFINITY, f64::min);
    let ell = qs.iter().map(|q| q.smoothness_constants().1).fold(0.0, f64::max);
    FedConfig {
        n_clients: qs.len(),
        participation: 1.0,
        rounds,
        local_work: LocalWork::Steps(steps),
        batch_size: 1,
        schedule: LrSchedule::inverse_theory(mu, ell),
        strategy,
        seed: 0,
        loss_eval: LossEval::GlobalAtRoundStart,
        track: Track::TheoryQuadratic,
    }
}

struct TheoryRun {
    clients: Vec<ClientObjective>,
    p: Vec<f64>,
    w0: ParamVector,
    runs: Vec<ExperimentResult>,
}

impl TheoryRun {
    fn new(
        qs: Vec<QuadraticObjective>,
        strategy: Strategy,
        rounds: u64,
        steps: u64,
        seeds: u64,
        keep: bool,
    ) -> Result<Self, String> {
        let clients: Vec<ClientObjective> = qs.iter().cloned().map(Into::into).collect();
        let p = vec![1.0 / qs.len() as f64; qs.len()];
        let w0 = ParamVector::from(vec![2.0; qs[0].dim()]);
        let fed = Federation { clients: &clients, weights: &p, initial_model: w0.clone(), test: None };
        let cfg = theory_config(&qs, strategy, rounds, steps);
        let seeds: Vec<u64> = (0..seeds).collect();
        let runs = run_seeds(&cfg, &fed, &seeds, RunOptions { workers: None, retain_trajectories: keep })
            .map_err(|e| e.to_string())?;
        Ok(Self { clients, p, w0, runs })
    }

    fn constants(&self) -> Result<TheoryConstants, String> {
        TheoryConstants::from_runs(&self.clients, &self.p, &self.w0, &self.runs).map_err(|e| e.to_string())
    }

    fn recursion(&self, tol: f64) -> Result<CheckReport, String> {
        let trajs = self
            .runs
            .iter()
            .map(|r| SkewTrajectory::from_records(&r.records, &self.p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let (bar, tilde) = SkewTrajectory::extremes(&trajs);
        let bar = bar.ok_or("rho undefined")?;
        check_theorem_recursion(&self.runs, &self.constants()?, bar, tilde.unwrap_or(bar), 0.05, tol)
            .map_err(|e| e.to_string())
    }
}

fn pair(noise: f64) -> Result<Vec<QuadraticObjective>, String> {
    heterogeneous_clients(2, 10, 1.0, 4.0, noise, 17).map_err(|e| e.to_string())
}

fn lemma_discrepancy() -> Verdict {
    let start = Instant::now();
    let t = TheoryRun::new(pair(0.3)?, Strategy::FedAvg, 50, 5, 100, true)?;
    let rep = check_discrepancy(&t.runs, &t.constants()?).map_err(|e| e.to_string())?;
    let detail =
        format!("{} interior steps, {} violations, worst margin {:.3e}", rep.tested, rep.violations, rep.worst_margin);
    if rep.violations > 0 {
        return Err(detail);
    }
    within(start.elapsed(), 60, detail)
}

fn theorem() -> Verdict {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for s in [Strategy::FedAvg, Strategy::FedWorse] {
        let rep = TheoryRun::new(pair(0.3)?, s.clone(), 50, 5, 100, true)?.recursion(1e-9)?;
        ok &= rep.pass_rate() >= 0.95;
        parts.push(format!("{s}: {:.1}% of {} steps", 100.0 * rep.pass_rate(), rep.tested));
    }
    let rep = TheoryRun::new(pair(0.0)?, Strategy::FedAvg, 50, 1, 1, true)?.recursion(1e-9)?;
    ok &= rep.violations == 0;
    parts.push(format!("exact fixture: {} violations in {}", rep.violations, rep.tested));
    let detail = parts.join("; ");
    if !ok {
        return Err(detail);
    }
    within(start.elapsed(), 120, detail)
}

fn corollary() -> Verdict {
    let start = Instant::now();
    let qs = identical_clients(2, 10, 1.0, 4.0, 0.3, 5).map_err(|e| e.to_string())?;
    let t = TheoryRun::new(qs, Strategy::FedAvg, 500, 5, 100, false)?;
    let c = t.constants()?;
    let b = bound_V_E(&c, 1.0, 1.0, 5).map_err(|e| e.to_string())?;
    let (rep, fit) = check_corollary_rate(&t.runs, &c, &b, -0.8).map_err(|e| e.to_string())?;
    let slope = fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let detail = format!("{} envelope violations over {} points, tail slope {slope:.3}", rep.violations, rep.tested);
    if !rep.pass {
        return Err(detail);
    }
    within(start.elapsed(), 120, detail)
}

fn rho_identities() -> Verdict {
    let qs = pair(0.3)?;
    let clients: Vec<ClientObjective> = qs.iter().cloned().map(Into::into).collect();
    let p = [0.3, 0.7];
    let fed =
        Federation { clients: &clients, weights: &p, initial_model: ParamVector::from(vec![2.0; 10]), test: None };
    let cfg = theory_config(&qs, Strategy::FedAvg, 50, 5);
    let run = run_federated(&cfg, &fed, RunOptions::default()).map_err(|e| e.to_string())?;
    let worst =
        run.records.iter().map(|r| r.rho_wt.map(|x| (x - 1.0).abs()).unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let ctx = RoundContext {
        round: 0,
        client_ids: vec![0, 1],
        p: vec![0.5, 0.5],
        local_models: Vec::new(),
        eval_losses: vec![2.0, 4.0],
        f_star: vec![0.0, 0.0],
        accuracy_history: Vec::new(),
        global_model_prev: ParamVector::zeros(1),
    };
    let a = Strategy::FedWorse.coefficients(&ctx).map_err(|e| e.to_string())?;
    let rho = weighting_skew(a.as_slice(), &[2.0, 4.0], 0.5 * 2.0 + 0.5 * 4.0).unwrap_or(f64::NAN);
    ensure(
        worst <= 1e-10 && (rho - 4.0 / 3.0).abs() <= 1e-10,
        format!("fedavg max |rho-1| {worst:.1e} over {} rounds; fedworse rho {rho:.12}", run.records.len()),
    )
}

fn partitioners() -> Verdict {
    let (mut iid_bad, mut shard_bad) = (0, 0);
    for seed in 0..100u64 {
        let ds = generate_blobs(10, 60, 3, 1.0, seed).map_err(|e| e.to_string())?;
        let part = partition_iid(&ds, &[60; 10], seed).map_err(|e| e.to_string())?;
        if (0..10).any(|c| ds.histogram_of(part.client(c)) != vec![6; 10]) {
            iid_bad += 1;
        }
        let clients = 5 + (seed as usize % 20);
        let cfg = ShardConfig::default_for(clients);
        let part = partition_shards(&ds, clients, cfg, seed).map_err(|e| e.to_string())?;
        let shards = part.shards().ok_or("no shard record")?;
        let mut ids: Vec<usize> = shards.iter().flatten().copied().collect();
        ids.sort_unstable();
        let mut samples: Vec<usize> = part.assignments().iter().flatten().copied().collect();
        let n = samples.len();
        samples.sort_unstable();
        samples.dedup();
        let counts_ok = shards.iter().all(|s| (cfg.min_shards..=cfg.max_shards).contains(&s.len()));
        let covered = n == part.shard_size().unwrap_or(0) * cfg.n_shards;
        if ids != (0..cfg.n_shards).collect::<Vec<_>>() || samples.len() != n || !counts_ok || !covered {
            shard_bad += 1;
        }
    }
    ensure(iid_bad + shard_bad == 0, format!("100 seeds: {iid_bad} iid failures, {shard_bad} shard failures"))
}

fn noniid(strategy: &str) -> Result<Experiment, String> {
    let spec = presets::preset("noniid-fmnist-like").map_err(|e| e.to_string())?;
    let o = Overrides { strategy: Some(strategy.into()), repeats: Some(20), ..Default::default() };
    execute(spec, &o, None).map_err(|e| e.to_string())
}

fn r60(e: &Experiment) -> (f64, f64, usize) {
    let r = e.summary.rounds_to_threshold.as_ref().expect("classification");
    let s = r.stat.expect("runs");
    (s.mean, s.ci_half_width.unwrap_or(f64::NAN), r.not_reached)
}

fn ordering(candidate: &Experiment, baseline: &Experiment, start: Instant) -> Verdict {
    let (cm, cc, cn) = r60(candidate);
    let (bm, bc, bn) = r60(baseline);
    let detail = format!(
        "{}: {cm:.2} ± {cc:.2} ({cn}/20 censored); fedavg: {bm:.2} ± {bc:.2} ({bn}/20 censored)",
        candidate.summary.strategy
    );
    if cm > bm {
        return Err(detail);
    }
    within(start.elapsed(), 900, detail)
}

fn reproducible(dir: &Path) -> Verdict {
    let mut files = 0;
    for name in presets::names() {
        let spec = presets::preset(name).map_err(|e| e.to_string())?;
        let repeats = if spec.diagnostics.enabled { 10 } else { 2 };
        let mut bytes = Vec::new();
        for workers in [1, 8] {
            let out = dir.join(format!("{name}-w{workers}"));
            let o = Overrides { repeats: Some(repeats), out_dir: Some(out.clone()), ..Default::default() };
            let exp = execute(spec.clone(), &o, Some(workers)).map_err(|e| e.to_string())?;
            write_bundle(&exp).map_err(|e| e.to_string())?;
            let mut these = Vec::new();
            for r in &exp.results {
                let f = out.join(format!("curve_seed{}.csv", r.config.seed));
                let on_disk = std::fs::read(&f).map_err(|e| e.to_string())?;
                if on_disk != curve_csv(r).map_err(|e| e.to_string())? {
                    return Err(format!("{} differs from its in-memory rendering", f.display()));
                }
                these.push(on_disk);
            }
            bytes.push(these);
        }
        if bytes[0] != bytes[1] {
            return Err(format!("{name}: CSVs differ between 1 and 8 workers"));
        }
        files += bytes[0].len();
    }
    Ok(format!("{files} CSVs identical at 1 and 8 workers across all presets"))
}

fn main() -> ExitCode {
    let mut unexpected = 0;
    let mut report = |id: usize, name: &str, v: Verdict| {
        let (tag, detail) = match v {
            Ok(d) => ("PASS", d),
            Err(d) if KNOWN_UNATTAINED.contains(&id) => ("FAIL (known unattained)", d),
            Err(d) => {
                unexpected += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} {name:<24} {tag}: {detail}");
    };
    report(1, "simplex", simplex_suite());
    report(2, "soft limits", soft_limits());
    report(3, "smoothness sweep", lemma_smooth());
    report(4, "local discrepancy", lemma_discrepancy());
    report(5, "one-step recursion", theorem());
    report(6, "envelope and rate", corollary());
    report(7, "skew identities", rho_identities());
    report(8, "partitioners", partitioners());

    let start = Instant::now();
    let runs = noniid("fedavg").and_then(|a| noniid("fedsoftbetter(T=0.2)").map(|b| (a, b)));
    match &runs {
        Ok((avg, soft)) => report(9, "R60 soft-better vs avg", ordering(soft, avg, start)),
        Err(e) => report(9, "R60 soft-better vs avg", Err(e.clone())),
    }
    let start = Instant::now();
    let hybrid = runs.and_then(|(avg, soft)| {
        check_comparable(&[avg.spec.clone(), soft.spec.clone()]).map_err(|e| e.to_string())?;
        noniid("fedsoftbetteravg(switch=20)").map(|h| (avg, h))
    });
    match hybrid {
        Ok((avg, h)) => report(10, "R60 hybrid vs avg", ordering(&h, &avg, start)),
        Err(e) => report(10, "R60 hybrid vs avg", Err(e)),
    }

    let dir = std::env::temp_dir().join(format!("fedweight-acceptance-{}", std::process::id()));
    report(11, "reproducibility", reproducible(&dir));
    let _ = std::fs::remove_dir_all(&dir);

    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    }
}
