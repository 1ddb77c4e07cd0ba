//! Empirical checks of the smoothness, discrepancy, recursion and rate
//! inequalities over seed-averaged runs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Bounds, TheoryConstants};
use crate::error::{Error, Result};
use crate::local_update::LrSchedule;
use crate::metrics::mean_se;
use crate::objectives::QuadraticObjective;
use crate::params::ParamVector;
use crate::protocol::{virtual_iterate, ExperimentResult};

/// Outcome of one inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub tested: usize,
    pub violations: usize,
    pub allowed_violations: usize,
    /// Smallest `rhs − lhs` seen; negative means violated.
    pub worst_margin: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn from_margins(name: &str, margins: &[f64], allowed_violations: usize) -> Self {
        let violations = margins.iter().filter(|&&m| m < 0.0).count();
        Self {
            name: name.to_string(),
            tested: margins.len(),
            violations,
            allowed_violations,
            worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
            pass: violations <= allowed_violations,
            notes: Vec::new(),
        }
    }

    pub fn pass_rate(&self) -> f64 {
        if self.tested == 0 {
            1.0
        } else {
            1.0 - self.violations as f64 / self.tested as f64
        }
    }
}

/// `‖∇F(w)‖² / (2L (F(w) − F*))`; `None` at the optimum.
pub fn smoothness_ratio(q: &QuadraticObjective, w_star: &[f64], w: &[f64]) -> Result<Option<f64>> {
    let g = q.gradient(w)?;
    let d: Vec<f64> = w.iter().zip(w_star).map(|(a, b)| a - b).collect();
    let gap = 0.5 * d.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>();
    if gap <= 0.0 {
        return Ok(None);
    }
    let (_, ell) = q.smoothness_constants();
    Ok(Some(g.norm_sq() / (2.0 * ell * gap)))
}

/// Samples `w = w* + s·z` with `z` Gaussian and `s` log-uniform in
/// `[1e-3, 1e3]`; a violation is a ratio above `1 + 1e-9`.
pub fn check_lemma_smooth<R: Rng + ?Sized>(
    q: &QuadraticObjective,
    n_samples: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let (w_star, _) = q.optimum()?;
    let mut margins = Vec::with_capacity(n_samples);
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        let w: Vec<f64> = w_star.iter().map(|x| x + s * rng.sample::<f64, _>(StandardNormal)).collect();
        if let Some(r) = smoothness_ratio(q, &w_star, &w)? {
            worst = worst.max(r);
            margins.push(1.0 + 1e-9 - r);
        }
    }
    let mut rep = CheckReport::from_margins("lemma_smooth", &margins, 0);
    rep.notes.push(format!("worst ratio {worst:.12}"));
    Ok(rep)
}

/// Seed statistics at one global step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStat {
    pub t: u64,
    pub round: u64,
    /// Local step within the round; 0 is the synchronisation barrier.
    pub k: u64,
    pub mean: f64,
    pub se: f64,
    pub eta_t0: f64,
}

fn require_trajectories(runs: &[ExperimentResult]) -> Result<usize> {
    if runs.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    let mut rounds = usize::MAX;
    for r in runs {
        if r.diverged() {
            return Err(Error::Precondition("diverged run".into()));
        }
        let trs = r.trajectories.as_ref().ok_or(Error::MissingTrajectories)?;
        rounds = rounds.min(trs.len());
    }
    Ok(rounds)
}

/// Seed-averaged `Σ α_i ‖w_t − w_t^i‖²` at every local step, with `w_t` the
/// `α`-weighted virtual iterate.
pub fn discrepancy_profile(runs: &[ExperimentResult]) -> Result<Vec<StepStat>> {
    let rounds = require_trajectories(runs)?;
    let first = runs[0].trajectories.as_ref().expect("checked");
    let mut out = Vec::new();
    for (r, round) in first.iter().enumerate().take(rounds) {
        let steps = round.etas.len();
        for k in 0..steps {
            let mut samples = Vec::with_capacity(runs.len());
            for run in runs {
                let tr = &run.trajectories.as_ref().expect("checked")[r];
                let models: Vec<&[f64]> = tr.paths.iter().map(|p| p[k].as_slice()).collect();
                let avg = crate::params::weighted_sum(tr.alpha.as_slice(), &models)?;
                let d: f64 = tr.alpha.as_slice().iter().zip(&models).map(|(a, m)| a * avg.dist_sq(m)).sum();
                samples.push(d);
            }
            let (mean, se) = mean_se(&samples);
            out.push(StepStat {
                t: round.t0 + k as u64,
                round: round.round,
                k: k as u64,
                mean,
                se,
                eta_t0: round.etas[0],
            });
        }
    }
    Ok(out)
}

fn require_full_participation(runs: &[ExperimentResult]) -> Result<()> {
    if runs.iter().any(|r| r.config.participation < 1.0) {
        return Err(Error::Precondition("check needs full participation".into()));
    }
    Ok(())
}

/// Every interior step must satisfy `mean ≤ 16 η_{t0}² E² Ĝ² + 3 SE`.
pub fn check_discrepancy(runs: &[ExperimentResult], c: &TheoryConstants) -> Result<CheckReport> {
    require_full_participation(runs)?;
    let profile = discrepancy_profile(runs)?;
    let e = runs[0].config.local_work.count() as f64;
    let margins: Vec<f64> = profile
        .iter()
        .filter(|s| s.k > 0)
        .map(|s| 16.0 * s.eta_t0 * s.eta_t0 * e * e * c.g_hat * c.g_hat + 3.0 * s.se - s.mean)
        .collect();
    let mut rep = CheckReport::from_margins("discrepancy", &margins, 0);
    rep.notes.push(format!("{} seeds, G_hat {:.6}", runs.len(), c.g_hat));
    Ok(rep)
}

fn check_schedule(runs: &[ExperimentResult], c: &TheoryConstants) -> Result<()> {
    for r in runs {
        match r.config.schedule {
            LrSchedule::InverseTheory { .. } => {}
            _ => return Err(Error::Precondition("check needs the inverse-theory schedule".into())),
        }
        let eta0 = r.config.schedule.rate(0, 0);
        if eta0 > (1.0 + 1e-12) / (4.0 * c.ell) {
            return Err(Error::Precondition(format!("eta_0 = {eta0} exceeds 1/(4L) = {}", 1.0 / (4.0 * c.ell))));
        }
    }
    Ok(())
}

fn w_star_of(runs: &[ExperimentResult]) -> Result<&ParamVector> {
    runs[0]
        .theory
        .as_ref()
        .map(|t| &t.w_star)
        .ok_or_else(|| Error::Precondition("check needs a quadratic federation".into()))
}

/// Per step `t`, checks the seed mean of
/// `‖w_{t+1} − w*‖² − (1 − η_t μ (1 + 3ρ̄/8)) ‖w_t − w*‖²` against
/// `η_t² (32E²G² + 6ρ̄LΓ + σ²) + 2η_t Γ (ρ̃ − ρ̄)` plus 3 SE and a relative
/// tolerance `tol`. Passes when at most `allowed_fraction` of steps fail.
pub fn check_theorem_recursion(
    runs: &[ExperimentResult],
    c: &TheoryConstants,
    rho_bar: f64,
    rho_tilde: f64,
    allowed_fraction: f64,
    tol: f64,
) -> Result<CheckReport> {
    require_trajectories(runs)?;
    require_full_participation(runs)?;
    check_schedule(runs, c)?;
    let w_star = w_star_of(runs)?;
    let seqs: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| virtual_iterate(r).map(|v| v.iter().map(|w| w.dist_sq(w_star)).collect()))
        .collect::<Result<_>>()?;
    let len = seqs.iter().map(Vec::len).min().unwrap_or(0);
    let e = runs[0].config.local_work.count() as f64;
    let schedule = runs[0].config.schedule;
    let steps_per_round = runs[0].config.local_work.count();
    let mut margins = Vec::with_capacity(len.saturating_sub(1));
    for t in 0..len.saturating_sub(1) {
        let eta = schedule.rate(t as u64, t as u64 / steps_per_round);
        let coef = 1.0 - eta * c.mu * (1.0 + 3.0 * rho_bar / 8.0);
        let additive =
            eta * eta * (32.0 * e * e * c.g_hat * c.g_hat + 6.0 * rho_bar * c.ell * c.heterogeneity + c.sigma2)
                + 2.0 * eta * c.heterogeneity * (rho_tilde - rho_bar);
        let d: Vec<f64> = seqs.iter().map(|s| s[t + 1] - coef * s[t]).collect();
        let next: Vec<f64> = seqs.iter().map(|s| s[t + 1]).collect();
        let (mean, se) = mean_se(&d);
        let scale = mean_se(&next).0.max(1.0);
        margins.push(additive + 3.0 * se + tol * scale - mean);
    }
    let allowed = (allowed_fraction * margins.len() as f64).floor() as usize;
    let mut rep = CheckReport::from_margins("theorem_recursion", &margins, allowed);
    rep.notes.push(format!("rho_bar {rho_bar:.6}, rho_tilde {rho_tilde:.6}, {} seeds", runs.len()));
    Ok(rep)
}

/// Least-squares line through `(ln(T + γ), ln(gap − E_err))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> Option<RateFit> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some(RateFit { slope, intercept: my - slope * mx, points: n })
}

/// Envelope `mean(F(w_T) − F*) ≤ V/(T + γ) + E_err` at every round end, and
/// tail slope of the excess over `E_err` `≤ max_slope` over rounds from `R/5`
/// on. When fewer than half of those rounds sit above `E_err` the slope is
/// reported but not required.
pub fn check_corollary_rate(
    runs: &[ExperimentResult],
    c: &TheoryConstants,
    bounds: &Bounds,
    max_slope: f64,
) -> Result<(CheckReport, Option<RateFit>)> {
    if runs.is_empty() {
        return Err(Error::NotEnoughSamples { needed: 1, got: 0 });
    }
    if runs.iter().any(|r| r.diverged()) {
        return Err(Error::Precondition("diverged run".into()));
    }
    check_schedule(runs, c)?;
    let f_star = runs[0]
        .theory
        .as_ref()
        .map(|t| t.f_star)
        .ok_or_else(|| Error::Precondition("check needs a quadratic federation".into()))?;
    let rounds = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
    let steps = runs[0].config.local_work.count();
    let mut margins = Vec::with_capacity(rounds);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let tail_len = rounds - rounds / 5;
    for i in 0..rounds {
        let gaps: Vec<f64> = runs.iter().map(|r| r.records[i].global_loss - f_star).collect();
        let (mean, _) = mean_se(&gaps);
        let t = (runs[0].records[i].t_step + steps) as f64;
        margins.push(bounds.at(c, t) - mean);
        let excess = mean - bounds.e_err;
        if i >= rounds / 5 && excess > 0.0 {
            xs.push((t + c.gamma).ln());
            ys.push(excess.ln());
        }
    }
    let fit = fit_line(&xs, &ys);
    let mut rep = CheckReport::from_margins("corollary_rate", &margins, 0);
    if 2 * xs.len() < tail_len {
        rep.notes.push(format!("{} of {tail_len} tail rounds above the residual floor; slope not required", xs.len()));
        return Ok((rep, fit));
    }
    match fit {
        Some(f) => {
            rep.pass &= f.slope <= max_slope;
            rep.notes.push(format!("tail slope {:.4} over {} points", f.slope, f.points));
        }
        None => {
            rep.pass = false;
            rep.notes.push("tail slope undefined".into());
        }
    }
    Ok((rep, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_on_eigen_directions() {
        let q = QuadraticObjective::diagonal(&[1.0, 4.0], vec![0.0, 0.0], 0.0).unwrap();
        let top = smoothness_ratio(&q, &[0.0, 0.0], &[0.0, 2.0]).unwrap().unwrap();
        assert!((top - 1.0).abs() < 1e-12);
        let bottom = smoothness_ratio(&q, &[0.0, 0.0], &[3.0, 0.0]).unwrap().unwrap();
        assert!((bottom - 0.25).abs() < 1e-12);
        assert_eq!(smoothness_ratio(&q, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), None);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let xs: Vec<f64> = (1..20).map(|i| (i as f64).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - x).collect();
        let f = fit_line(&xs, &ys).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
    }
}
