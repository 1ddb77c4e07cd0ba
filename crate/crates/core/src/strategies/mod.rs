//! Aggregation-coefficient strategies and the aggregation barrier.
//!
//! Every strategy maps a [`RoundContext`] to a point on the probability
//! simplex over the selected clients. Loss gaps `F_i − F_i*` drive the
//! Worse/Better families: Worse variants weight high-gap clients up, Better
//! variants weight low-gap clients up.

mod parse;

pub use parse::ParseError;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{weighted_sum, ParamVector};

/// Default softmax temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
/// Default switch round of the named discrete hybrids.
pub const DEFAULT_SWITCH_ROUND: u64 = 20;

/// Everything a strategy may read at the aggregation barrier. Per-client
/// vectors are indexed by position in `client_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContext {
    pub round: u64,
    /// Selected clients, ascending.
    pub client_ids: Vec<usize>,
    /// Client weights restricted to the selection and renormalized.
    pub p: Vec<f64>,
    /// End-of-round local models; may be empty when only coefficients are needed.
    pub local_models: Vec<ParamVector>,
    pub eval_losses: Vec<f64>,
    pub f_star: Vec<f64>,
    /// Global-model accuracy after each past round.
    pub accuracy_history: Vec<f64>,
    pub global_model_prev: ParamVector,
}

impl RoundContext {
    pub fn len(&self) -> usize {
        self.client_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.client_ids.is_empty()
    }

    /// `F_i − F_i*` per selected client.
    pub fn gaps(&self) -> Vec<f64> {
        self.eval_losses.iter().zip(&self.f_star).map(|(l, f)| l - f).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.client_ids.len();
        if n == 0 {
            return Err(Error::InvalidWeights("no selected clients".into()));
        }
        if self.p.len() != n || self.eval_losses.len() != n || self.f_star.len() != n {
            return Err(Error::InvalidWeights(format!(
                "context lengths disagree: {} ids, {} weights, {} losses, {} optima",
                n,
                self.p.len(),
                self.eval_losses.len(),
                self.f_star.len()
            )));
        }
        if self.p.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidWeights("client weights must be positive".into()));
        }
        if self.eval_losses.iter().chain(&self.f_star).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("evaluation losses".into()));
        }
        Ok(())
    }
}

/// Aggregation coefficients, one per selected client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    /// Checks non-negativity and `|Σα − 1| ≤ 1e-12`.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::InvalidWeights("negative or NaN coefficient".into()));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("coefficients sum to {sum}")));
        }
        Ok(Self(alpha))
    }

    fn normalized(mut v: Vec<f64>) -> Self {
        let sum: f64 = v.iter().sum();
        for x in &mut v {
            *x /= sum;
        }
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&a| a > 0.0).map(|a| a * a.ln()).sum::<f64>()
    }
}

impl std::ops::Index<usize> for CoefficientVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// When a discrete-hybrid phase hands over to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    /// Active while `round < n`.
    RoundBelow(u64),
    /// Active until any past accuracy reached the threshold.
    AccuracyBelow(f64),
}

impl Trigger {
    fn fired(&self, ctx: &RoundContext) -> bool {
        match *self {
            Self::RoundBelow(r) => ctx.round >= r,
            Self::AccuracyBelow(a) => ctx.accuracy_history.iter().any(|&x| x >= a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub strategy: Strategy,
    /// `None` keeps the phase active forever.
    pub until: Option<Trigger>,
}

/// Mixing weight `λ_r` of an annealed hybrid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaSchedule {
    /// `from + (to − from)·min(r, rounds)/rounds`.
    Linear {
        from: f64,
        to: f64,
        rounds: u64,
    },
    Constant(f64),
}

impl LambdaSchedule {
    pub fn at(&self, round: u64) -> f64 {
        match *self {
            Self::Linear { from, to, rounds } => {
                let frac = if rounds == 0 { 1.0 } else { round.min(rounds) as f64 / rounds as f64 };
                from + (to - from) * frac
            }
            Self::Constant(x) => x,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = match *self {
            Self::Linear { from, to, .. } => unit(from) && unit(to) && from <= to,
            Self::Constant(x) => unit(x),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("lambda schedule {self:?} must stay in [0,1] and be non-decreasing")))
        }
    }
}

/// Aggregation strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// `α = p`.
    FedAvg,
    /// One-hot on the largest gap.
    FedWorse,
    /// One-hot on the smallest gap.
    FedBetter,
    /// `p` renormalized over the `⌈k·n⌋` largest gaps.
    FedWorseK { k: f64 },
    /// `p` renormalized over the `⌈k·n⌋` smallest gaps.
    FedBetterK { k: f64 },
    /// `α ∝ p·exp(gap/T)`.
    FedSoftWorse { temperature: f64 },
    /// `α ∝ p·exp(−gap/T)`.
    FedSoftBetter { temperature: f64 },
    /// First phase whose trigger has not fired.
    Discrete(Vec<Phase>),
    /// `(1 − λ_r)·α_base + λ_r·α_target`.
    Anneal { base: Box<Strategy>, target: Box<Strategy>, lambda: LambdaSchedule },
}

impl Strategy {
    /// Phase-switched hybrid `first` → `second` at `switch_round`.
    pub fn switch_at(first: Strategy, second: Strategy, switch_round: u64) -> Self {
        Self::Discrete(vec![
            Phase { strategy: first, until: Some(Trigger::RoundBelow(switch_round)) },
            Phase { strategy: second, until: None },
        ])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FedAvg | Self::FedWorse | Self::FedBetter => Ok(()),
            Self::FedWorseK { k } | Self::FedBetterK { k } => {
                if *k > 0.0 && *k <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("fraction k={k} outside (0, 1]")))
                }
            }
            Self::FedSoftWorse { temperature } | Self::FedSoftBetter { temperature } => {
                if *temperature > 0.0 && temperature.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("temperature T={temperature} must be > 0")))
                }
            }
            Self::Discrete(phases) => {
                if phases.is_empty() {
                    return Err(Error::InvalidConfig("discrete hybrid needs at least one phase".into()));
                }
                phases.iter().try_for_each(|p| p.strategy.validate())
            }
            Self::Anneal { base, target, lambda } => {
                base.validate()?;
                target.validate()?;
                lambda.validate()
            }
        }
    }

    /// Coefficients for this round.
    pub fn coefficients(&self, ctx: &RoundContext) -> Result<CoefficientVector> {
        ctx.validate()?;
        self.validate()?;
        Ok(self.compute(ctx))
    }

    fn compute(&self, ctx: &RoundContext) -> CoefficientVector {
        match self {
            Self::FedAvg => CoefficientVector::normalized(ctx.p.clone()),
            Self::FedWorse => one_hot(ctx.len(), extreme(&ctx.gaps(), true)),
            Self::FedBetter => one_hot(ctx.len(), extreme(&ctx.gaps(), false)),
            Self::FedWorseK { k } => top_k(ctx, *k, true),
            Self::FedBetterK { k } => top_k(ctx, *k, false),
            Self::FedSoftWorse { temperature } => soft(ctx, *temperature, true),
            Self::FedSoftBetter { temperature } => soft(ctx, *temperature, false),
            Self::Discrete(phases) => {
                let active =
                    phases.iter().position(|ph| !ph.until.is_some_and(|t| t.fired(ctx))).unwrap_or(phases.len() - 1);
                phases[active].strategy.compute(ctx)
            }
            Self::Anneal { base, target, lambda } => {
                let l = lambda.at(ctx.round);
                let a = base.compute(ctx);
                let b = target.compute(ctx);
                CoefficientVector(a.0.iter().zip(&b.0).map(|(x, y)| (1.0 - l) * x + l * y).collect())
            }
        }
    }
}

fn one_hot(n: usize, i: usize) -> CoefficientVector {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    CoefficientVector(v)
}

/// Position of the largest (or smallest) gap; first occurrence wins ties.
fn extreme(gaps: &[f64], largest: bool) -> usize {
    let mut best = 0;
    for (i, &g) in gaps.iter().enumerate().skip(1) {
        let better = if largest { g > gaps[best] } else { g < gaps[best] };
        if better {
            best = i;
        }
    }
    best
}

/// Number of clients kept by the top-k variants.
pub fn top_k_count(k: f64, n: usize) -> usize {
    ((k * n as f64).round() as usize).clamp(1, n)
}

fn top_k(ctx: &RoundContext, k: f64, largest: bool) -> CoefficientVector {
    let gaps = ctx.gaps();
    let mut order: Vec<usize> = (0..ctx.len()).collect();
    // stable sort keeps lower positions (lower ids) first on ties
    order.sort_by(|&a, &b| {
        let ord = gaps[a].partial_cmp(&gaps[b]).unwrap_or(std::cmp::Ordering::Equal);
        if largest {
            ord.reverse()
        } else {
            ord
        }
    });
    let m = top_k_count(k, ctx.len());
    let mut alpha = vec![0.0; ctx.len()];
    for &i in &order[..m] {
        alpha[i] = ctx.p[i];
    }
    CoefficientVector::normalized(alpha)
}

fn soft(ctx: &RoundContext, temperature: f64, worse: bool) -> CoefficientVector {
    let gaps = ctx.gaps();
    let sign = if worse { 1.0 } else { -1.0 };
    let shift = gaps.iter().map(|g| sign * g).fold(f64::NEG_INFINITY, f64::max);
    let alpha = ctx.p.iter().zip(&gaps).map(|(p, g)| p * ((sign * g - shift) / temperature).exp()).collect();
    CoefficientVector::normalized(alpha)
}

/// `Σ α_i w_i` over the context's local models.
pub fn aggregate(ctx: &RoundContext, alpha: &CoefficientVector) -> Result<ParamVector> {
    if ctx.local_models.len() != alpha.len() {
        return Err(Error::DimensionMismatch { expected: alpha.len(), actual: ctx.local_models.len() });
    }
    let models: Vec<&[f64]> = ctx.local_models.iter().map(|m| m.as_slice()).collect();
    weighted_sum(alpha.as_slice(), &models)
}

impl FromStr for Strategy {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, ParseError> {
        parse::parse_strategy(s)
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RoundBelow(r) => write!(f, "round<{r}"),
            Self::AccuracyBelow(a) => write!(f, "acc<{a}"),
        }
    }
}

impl fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { from, to, rounds } => write!(f, "linear({from},{to},{rounds})"),
            Self::Constant(x) => write!(f, "const({x})"),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FedAvg => write!(f, "fedavg"),
            Self::FedWorse => write!(f, "fedworse"),
            Self::FedBetter => write!(f, "fedbetter"),
            Self::FedWorseK { k } => write!(f, "fedworse_k(k={k})"),
            Self::FedBetterK { k } => write!(f, "fedbetter_k(k={k})"),
            Self::FedSoftWorse { temperature } => write!(f, "fedsoftworse(T={temperature})"),
            Self::FedSoftBetter { temperature } => write!(f, "fedsoftbetter(T={temperature})"),
            Self::Discrete(phases) => {
                write!(f, "discrete[")?;
                for (i, ph) in phases.iter().enumerate() {
                    if i > 0 {
                        write!(f, " -> ")?;
                    }
                    write!(f, "{}", ph.strategy)?;
                    if let Some(t) = ph.until {
                        write!(f, "@{t}")?;
                    }
                }
                write!(f, "]")
            }
            Self::Anneal { base, target, lambda } => {
                write!(f, "anneal[{base} -> {target}; lambda={lambda}]")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ctx(p: &[f64], gaps: &[f64]) -> RoundContext {
        RoundContext {
            round: 0,
            client_ids: (0..p.len()).collect(),
            p: p.to_vec(),
            local_models: Vec::new(),
            eval_losses: gaps.to_vec(),
            f_star: vec![0.0; p.len()],
            accuracy_history: Vec::new(),
            global_model_prev: ParamVector::zeros(1),
        }
    }

    fn alpha(s: &Strategy, c: &RoundContext) -> Vec<f64> {
        s.coefficients(c).unwrap().as_slice().to_vec()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn fedavg_returns_p() {
        assert_eq!(alpha(&Strategy::FedAvg, &ctx(&[0.5, 0.5], &[1.0, 2.0])), vec![0.5, 0.5]);
        assert_eq!(alpha(&Strategy::FedAvg, &ctx(&[0.75, 0.25], &[1.0, 2.0])), vec![0.75, 0.25]);
        let p = vec![0.01; 100];
        let a = alpha(&Strategy::FedAvg, &ctx(&p, &vec![1.0; 100]));
        assert!(close(&a, &p, 1e-15));
    }

    #[test]
    fn fedworse_examples() {
        let u2 = [0.5, 0.5];
        assert_eq!(alpha(&Strategy::FedWorse, &ctx(&u2, &[1.0, 2.0])), vec![0.0, 1.0]);
        assert_eq!(alpha(&Strategy::FedWorse, &ctx(&u2, &[2.0, 2.0])), vec![1.0, 0.0]);
        let u3 = [1.0 / 3.0; 3];
        assert_eq!(alpha(&Strategy::FedWorse, &ctx(&u3, &[3.0, 1.0, 2.0])), vec![1.0, 0.0, 0.0]);
        assert_eq!(alpha(&Strategy::FedBetter, &ctx(&u2, &[1.0, 2.0])), vec![1.0, 0.0]);
    }

    #[test]
    fn gaps_subtract_f_star() {
        let mut c = ctx(&[0.5, 0.5], &[3.0, 2.0]);
        c.f_star = vec![2.5, 0.0];
        assert_eq!(alpha(&Strategy::FedWorse, &c), vec![0.0, 1.0]);
    }

    #[test]
    fn fedworse_k_examples() {
        let p = vec![0.1; 10];
        let gaps: Vec<f64> = (0..10).map(|i| [5.0, 1.0, 9.0, 2.0, 3.0, 8.0, 0.5, 4.0, 6.0, 7.0][i]).collect();
        let a = alpha(&Strategy::FedWorseK { k: 0.2 }, &ctx(&p, &gaps));
        let mut expected = vec![0.0; 10];
        expected[2] = 0.5;
        expected[5] = 0.5;
        assert!(close(&a, &expected, 1e-15));

        let c = ctx(&[0.2, 0.3, 0.5], &[1.0, 3.0, 2.0]);
        assert!(close(&alpha(&Strategy::FedWorseK { k: 1.0 }, &c), &alpha(&Strategy::FedAvg, &c), 1e-15));
        assert!(close(&alpha(&Strategy::FedBetterK { k: 1.0 }, &c), &alpha(&Strategy::FedAvg, &c), 1e-15));
        let u = ctx(&[1.0 / 3.0; 3], &[1.0, 3.0, 2.0]);
        assert_eq!(alpha(&Strategy::FedWorseK { k: 1e-9 }, &u), alpha(&Strategy::FedWorse, &u));
        assert_eq!(alpha(&Strategy::FedBetterK { k: 1e-9 }, &u), alpha(&Strategy::FedBetter, &u));
    }

    #[test]
    fn fedworse_k_ties_prefer_lowest_id() {
        let a = alpha(&Strategy::FedWorseK { k: 0.5 }, &ctx(&[0.25; 4], &[1.0, 2.0, 2.0, 2.0]));
        assert_eq!(a, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn soft_examples() {
        // softmax of (5, 10)
        let e = (-5.0f64).exp();
        let hi = 1.0 / (1.0 + e);
        let c = ctx(&[0.5, 0.5], &[1.0, 2.0]);
        let a = alpha(&Strategy::FedSoftWorse { temperature: 0.2 }, &c);
        assert!(close(&a, &[1.0 - hi, hi], 1e-15));
        assert!((a[0] - 0.006693).abs() < 5e-7 && (a[1] - 0.993307).abs() < 5e-7);
        let b = alpha(&Strategy::FedSoftBetter { temperature: 0.2 }, &c);
        assert!((b[0] - 0.993307).abs() < 5e-7 && (b[1] - 0.006693).abs() < 5e-7);

        let eq = ctx(&[0.2, 0.8], &[1.5, 1.5]);
        assert!(close(&alpha(&Strategy::FedSoftWorse { temperature: 3.0 }, &eq), &[0.2, 0.8], 1e-15));
        let big = alpha(&Strategy::FedSoftWorse { temperature: 1e9 }, &ctx(&[0.2, 0.8], &[0.0, 5.0]));
        assert!(close(&big, &[0.2, 0.8], 1e-9));
    }

    #[test]
    fn discrete_follows_round_trigger() {
        let s = Strategy::switch_at(Strategy::FedSoftBetter { temperature: 0.2 }, Strategy::FedAvg, 20);
        let mut c = ctx(&[0.5, 0.5], &[1.0, 2.0]);
        c.round = 5;
        assert_eq!(alpha(&s, &c), alpha(&Strategy::FedSoftBetter { temperature: 0.2 }, &c));
        c.round = 20;
        assert_eq!(alpha(&s, &c), vec![0.5, 0.5]);
        let single = Strategy::Discrete(vec![Phase { strategy: Strategy::FedAvg, until: None }]);
        assert_eq!(alpha(&single, &c), alpha(&Strategy::FedAvg, &c));
        assert!(Strategy::Discrete(vec![]).coefficients(&c).is_err());
    }

    #[test]
    fn accuracy_trigger_never_reactivates() {
        let s = Strategy::Discrete(vec![
            Phase { strategy: Strategy::FedWorse, until: Some(Trigger::AccuracyBelow(0.6)) },
            Phase { strategy: Strategy::FedAvg, until: None },
        ]);
        let mut c = ctx(&[0.5, 0.5], &[1.0, 2.0]);
        c.accuracy_history = vec![0.3, 0.5];
        assert_eq!(alpha(&s, &c), vec![0.0, 1.0]);
        c.accuracy_history = vec![0.3, 0.65];
        assert_eq!(alpha(&s, &c), vec![0.5, 0.5]);
        // accuracy drops back: the later phase stays active
        c.accuracy_history = vec![0.3, 0.65, 0.4];
        assert_eq!(alpha(&s, &c), vec![0.5, 0.5]);
    }

    #[test]
    fn anneal_examples() {
        let mk = |l| Strategy::Anneal {
            base: Box::new(Strategy::FedWorse),
            target: Box::new(Strategy::FedAvg),
            lambda: LambdaSchedule::Constant(l),
        };
        let c = ctx(&[0.5, 0.5], &[2.0, 1.0]);
        assert_eq!(alpha(&mk(0.0), &c), vec![1.0, 0.0]);
        assert_eq!(alpha(&mk(1.0), &c), vec![0.5, 0.5]);
        assert_eq!(alpha(&mk(0.5), &c), vec![0.75, 0.25]);
        let bad = Strategy::Anneal {
            base: Box::new(Strategy::FedWorse),
            target: Box::new(Strategy::FedAvg),
            lambda: LambdaSchedule::Linear { from: 1.0, to: 0.0, rounds: 10 },
        };
        assert!(bad.coefficients(&c).is_err());
    }

    #[test]
    fn lambda_linear_ramps() {
        let l = LambdaSchedule::Linear { from: 0.0, to: 1.0, rounds: 100 };
        assert_eq!(l.at(0), 0.0);
        assert_eq!(l.at(50), 0.5);
        assert_eq!(l.at(500), 1.0);
    }

    #[test]
    fn aggregate_examples() {
        let mut c = ctx(&[0.5, 0.5], &[0.0, 0.0]);
        c.local_models = vec![vec![1.0, 1.0].into(), vec![9.0, 9.0].into()];
        let a = CoefficientVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(aggregate(&c, &a).unwrap().as_slice(), &[1.0, 1.0]);
        c.local_models = vec![vec![0.0, 2.0].into(), vec![2.0, 0.0].into()];
        let a = CoefficientVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(aggregate(&c, &a).unwrap().as_slice(), &[1.0, 1.0]);
        c.local_models = vec![vec![0.0].into(), vec![4.0].into()];
        let a = CoefficientVector::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(aggregate(&c, &a).unwrap().as_slice(), &[3.0]);
        c.local_models = vec![vec![0.0].into(), vec![4.0, 1.0].into()];
        assert!(matches!(aggregate(&c, &a), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn coefficient_vector_validation() {
        assert!(CoefficientVector::new(vec![0.5, 0.6]).is_err());
        assert!(CoefficientVector::new(vec![-0.1, 1.1]).is_err());
        let a = CoefficientVector::new(vec![0.5, 0.5]).unwrap();
        assert!((a.entropy() - 2f64.ln()).abs() < 1e-15);
    }
}
