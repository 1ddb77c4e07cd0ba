//! Analysis constants, weighting skew, bound evaluation and empirical checks
//! on quadratic federations.

mod checks;
mod suite;

pub use checks::{
    check_corollary_rate, check_discrepancy, check_lemma_smooth, check_theorem_recursion, discrepancy_profile,
    smoothness_ratio, CheckReport, RateFit, StepStat,
};
pub use suite::{heterogeneous_clients, identical_clients, random_quadratic, random_spd};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{global_objective, ClientObjective, QuadraticObjective};
use crate::protocol::{ExperimentResult, RoundRecord};

/// Floor substituted for zero coefficients before forming `κ = α / p`.
pub const KAPPA_FLOOR: f64 = 1e-9;

/// Constants of a quadratic federation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub mu: f64,
    #[serde(rename = "L")]
    pub ell: f64,
    pub sigma2: f64,
    pub g_hat: f64,
    #[serde(rename = "Gamma")]
    pub heterogeneity: f64,
    pub gamma: f64,
    pub w0_dist2: f64,
}

impl TheoryConstants {
    /// `μ = min μ_i`, `L = max L_i`, `σ² = max σ_i²`.
    pub fn new(clients: &[QuadraticObjective], p: &[f64], w0: &[f64], g_hat: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidConfig("no clients".into()));
        }
        let mu = clients.iter().map(|q| q.smoothness_constants().0).fold(f64::INFINITY, f64::min);
        let ell = clients.iter().map(|q| q.smoothness_constants().1).fold(0.0, f64::max);
        let sigma2 = clients.iter().map(|q| q.noise_variance()).fold(0.0, f64::max);
        let objs: Vec<ClientObjective> = clients.iter().cloned().map(Into::into).collect();
        let global = global_objective(&objs, p)?;
        let (w_star, _) = global.as_quadratic().expect("quadratic").optimum()?;
        Ok(Self {
            mu,
            ell,
            sigma2,
            g_hat,
            heterogeneity: heterogeneity(clients, p)?.max(0.0),
            gamma: 4.0 * ell / mu,
            w0_dist2: w_star.dist_sq(w0),
        })
    }

    /// Constants of the federation behind `results`, with `Ĝ` the largest
    /// gradient norm any of them observed.
    pub fn from_runs(clients: &[ClientObjective], p: &[f64], w0: &[f64], results: &[ExperimentResult]) -> Result<Self> {
        let qs: Vec<QuadraticObjective> =
            clients.iter().map(|c| c.as_quadratic().cloned().ok_or(Error::MixedObjectives)).collect::<Result<_>>()?;
        let g_hat = results.iter().map(|r| r.g_hat).fold(0.0, f64::max);
        Self::new(&qs, p, w0, g_hat)
    }
}

/// `Γ = F* − Σ p_i F_i*`.
pub fn heterogeneity(clients: &[QuadraticObjective], p: &[f64]) -> Result<f64> {
    let objs: Vec<ClientObjective> = clients.iter().cloned().map(Into::into).collect();
    let global = global_objective(&objs, p)?;
    let (_, f_star) = global.as_quadratic().expect("quadratic").optimum()?;
    let mut weighted = 0.0;
    for (q, pi) in clients.iter().zip(p) {
        weighted += pi * q.optimum()?.1;
    }
    Ok(f_star - weighted)
}

/// `ρ = Σ α_i gap_i / denominator`; `None` when the denominator is
/// numerically zero.
pub fn weighting_skew(alpha: &[f64], gaps: &[f64], denominator: f64) -> Option<f64> {
    let num: f64 = alpha.iter().zip(gaps).map(|(a, g)| a * g).sum();
    if denominator.abs() < 1e-12 * num.abs().max(1.0) {
        None
    } else {
        Some(num / denominator)
    }
}

/// `(min κ_i, max κ_i)` with `κ_i = α_i / p_i`, after flooring zero
/// coefficients at [`KAPPA_FLOOR`] and rescaling the positive ones.
pub fn kappa_stats(alpha: &[f64], p: &[f64]) -> Result<(f64, f64)> {
    if alpha.len() != p.len() || p.is_empty() {
        return Err(Error::DimensionMismatch { expected: p.len(), actual: alpha.len() });
    }
    if p.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidWeights("kappa needs positive p".into()));
    }
    let zeros = alpha.iter().filter(|&&a| a <= 0.0).count();
    let positive: f64 = alpha.iter().filter(|&&a| a > 0.0).sum();
    let scale = (1.0 - zeros as f64 * KAPPA_FLOOR) / positive;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&a, &pi) in alpha.iter().zip(p) {
        let a = if a > 0.0 { a * scale } else { KAPPA_FLOOR };
        let k = a / pi;
        lo = lo.min(k);
        hi = hi.max(k);
    }
    Ok((lo, hi))
}

/// Per-round skew and κ statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewTrajectory {
    pub rho_wt: Vec<Option<f64>>,
    pub rho_wstar: Vec<Option<f64>>,
    pub rho_bar: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub pi_t: Vec<f64>,
    pub big_pi_t: Vec<f64>,
    pub pi: f64,
    pub big_pi: f64,
}

impl SkewTrajectory {
    /// `weights` are the full-population `p_i`; each round renormalises them
    /// over its selected clients.
    pub fn from_records(records: &[RoundRecord], weights: &[f64]) -> Result<Self> {
        let mut pi_t = Vec::with_capacity(records.len());
        let mut big_pi_t = Vec::with_capacity(records.len());
        for r in records {
            let raw: Vec<f64> = r.selected.iter().map(|&i| weights[i]).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let (lo, hi) = kappa_stats(r.alpha.as_slice(), &p)?;
            pi_t.push(lo);
            big_pi_t.push(hi);
        }
        let rho_wt: Vec<Option<f64>> = records.iter().map(|r| r.rho_wt).collect();
        let rho_wstar: Vec<Option<f64>> = records.iter().map(|r| r.rho_wstar).collect();
        Ok(Self {
            rho_bar: rho_wt.iter().flatten().copied().reduce(f64::min),
            rho_tilde: rho_wstar.iter().flatten().copied().reduce(f64::max),
            pi: pi_t.iter().copied().fold(f64::INFINITY, f64::min),
            big_pi: big_pi_t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            rho_wt,
            rho_wstar,
            pi_t,
            big_pi_t,
        })
    }

    /// `ρ̄` and `ρ̃` over several runs.
    pub fn extremes(trajs: &[SkewTrajectory]) -> (Option<f64>, Option<f64>) {
        let bar = trajs.iter().filter_map(|t| t.rho_bar).reduce(f64::min);
        let tilde = trajs.iter().filter_map(|t| t.rho_tilde).reduce(f64::max);
        (bar, tilde)
    }
}

/// Convergence-speed term `V`, residual error `E_err` and the
/// strategy-independent floor `V_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub v: f64,
    pub e_err: f64,
    pub v_min: f64,
}

impl Bounds {
    /// `V / (T + γ) + E_err`.
    pub fn at(&self, c: &TheoryConstants, t: f64) -> f64 {
        self.v / (t + c.gamma) + self.e_err
    }
}

fn lambda1(c: &TheoryConstants, e_steps: u64) -> f64 {
    let e = e_steps as f64;
    4.0 * c.ell * (32.0 * e * e * c.g_hat * c.g_hat + c.sigma2) / (3.0 * c.mu * c.mu)
}

fn lambda2(c: &TheoryConstants) -> f64 {
    8.0 * c.ell * c.heterogeneity / (3.0 * c.mu)
}

fn v_min(c: &TheoryConstants) -> f64 {
    8.0 * c.ell * c.ell * c.heterogeneity / (c.mu * c.mu) + c.ell * c.gamma * c.w0_dist2 / 2.0
}

#[allow(non_snake_case)]
pub fn bound_V_E(c: &TheoryConstants, rho_bar: f64, rho_tilde: f64, e_steps: u64) -> Result<Bounds> {
    if !(rho_bar > 0.0) {
        return Err(Error::Precondition(format!("rho_bar must be positive, got {rho_bar}")));
    }
    let v_min = v_min(c);
    Ok(Bounds { v: lambda1(c, e_steps) / rho_bar + v_min, e_err: lambda2(c) * (rho_tilde / rho_bar - 1.0), v_min })
}

/// `(C + λ₁/π) / (T + γ) + λ₂ (1/(π p_min) − N)`.
pub fn final_bound(
    pi: f64,
    p_min: f64,
    n_clients: usize,
    c: &TheoryConstants,
    e_steps: u64,
    t_rounds: f64,
) -> Result<f64> {
    if !(pi > 0.0 && p_min > 0.0) {
        return Err(Error::Precondition("pi and p_min must be positive".into()));
    }
    Ok((v_min(c) + lambda1(c, e_steps) / pi) / (t_rounds + c.gamma)
        + lambda2(c) * (1.0 / (pi * p_min) - n_clients as f64))
}

/// Structured document describing one theory-track experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub constants: TheoryConstants,
    /// Local step count used for `τ` in `V`.
    pub tau: u64,
    pub rho_bar: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub pi: f64,
    pub big_pi: f64,
    pub bounds: Option<Bounds>,
    pub rho_wt: Vec<Vec<Option<f64>>>,
    pub rho_wstar: Vec<Vec<Option<f64>>>,
    pub checks: Vec<CheckReport>,
}
