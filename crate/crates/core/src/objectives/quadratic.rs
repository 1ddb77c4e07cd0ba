use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;

/// `F(w) = ½ wᵀAw − bᵀw + c` with optional additive gradient noise.
///
/// Gradient noise is zero-mean Gaussian with standard deviation `noise_std`
/// per coordinate, so `E‖g − ∇F‖² = dim · noise_std²` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticParts", into = "QuadraticParts")]
pub struct QuadraticObjective {
    a: DMatrix<f64>,
    b: ParamVector,
    c: f64,
    noise_std: f64,
    mu: f64,
    ell: f64,
}

#[derive(Serialize, Deserialize)]
struct QuadraticParts {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: f64,
    noise_std: f64,
}

impl TryFrom<QuadraticParts> for QuadraticObjective {
    type Error = Error;
    fn try_from(p: QuadraticParts) -> Result<Self> {
        Self::from_rows(&p.a, p.b, p.c)?.with_noise(p.noise_std)
    }
}

impl From<QuadraticObjective> for QuadraticParts {
    fn from(q: QuadraticObjective) -> Self {
        let n = q.dim();
        Self {
            a: (0..n).map(|i| (0..n).map(|j| q.a[(i, j)]).collect()).collect(),
            b: q.b.into_inner(),
            c: q.c,
            noise_std: q.noise_std,
        }
    }
}

impl QuadraticObjective {
    pub fn new(a: DMatrix<f64>, b: impl Into<ParamVector>, c: f64) -> Result<Self> {
        let b = b.into();
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: a.ncols() });
        }
        b.check_dim(n)?;
        if !a.iter().all(|v| v.is_finite()) || !b.is_finite() || !c.is_finite() {
            return Err(Error::NonFinite("quadratic coefficients".into()));
        }
        let scale = a.amax().max(f64::MIN_POSITIVE);
        let asym = (&a - a.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let sym = (&a + a.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigenvalues();
        let mu = eig.min();
        let ell = eig.max();
        if mu <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: mu });
        }
        Ok(Self { a: sym, b, c, noise_std: 0.0, mu, ell })
    }

    pub fn from_rows(rows: &[Vec<f64>], b: Vec<f64>, c: f64) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, actual: r.len() });
        }
        let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(a, b, c)
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>, c: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)), b, c)
    }

    pub fn with_noise(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise std {noise_std} must be >= 0")));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear(&self) -> &ParamVector {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.c
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// `E‖g − ∇F‖²` of the stochastic gradient.
    pub fn noise_variance(&self) -> f64 {
        self.dim() as f64 * self.noise_std * self.noise_std
    }

    fn a_times(&self, w: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.a[(i, j)] * w[j]).sum()).collect()
    }

    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        self.check(w)?;
        let aw = self.a_times(w);
        let quad: f64 = aw.iter().zip(w).map(|(x, y)| x * y).sum();
        Ok(0.5 * quad - self.b.dot(w) + self.c)
    }

    /// Exact gradient `Aw − b`.
    pub fn gradient(&self, w: &[f64]) -> Result<ParamVector> {
        self.check(w)?;
        let mut g = self.a_times(w);
        for (gi, bi) in g.iter_mut().zip(self.b.iter()) {
            *gi -= bi;
        }
        Ok(g.into())
    }

    /// Exact gradient plus the configured zero-mean noise.
    pub fn noisy_gradient<R: Rng + ?Sized>(&self, w: &[f64], rng: &mut R) -> Result<ParamVector> {
        let mut g = self.gradient(w)?;
        if self.noise_std > 0.0 {
            for gi in g.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *gi += self.noise_std * z;
            }
        }
        Ok(g)
    }

    /// `(μ, L)`: extreme eigenvalues of `A`.
    pub fn smoothness_constants(&self) -> (f64, f64) {
        (self.mu, self.ell)
    }

    /// Minimiser and minimum value.
    pub fn optimum(&self) -> Result<(ParamVector, f64)> {
        let condition = self.ell / self.mu;
        if !(condition <= MAX_CONDITION) {
            return Err(Error::Singular { condition });
        }
        let chol = self.a.clone().cholesky().ok_or(Error::NotPositiveDefinite { min_eigenvalue: self.mu })?;
        let rhs = DVector::from_column_slice(self.b.as_slice());
        let mut x = chol.solve(&rhs);
        // one step of iterative refinement
        let r = &rhs - &self.a * &x;
        x += chol.solve(&r);
        let w: ParamVector = x.as_slice().to_vec().into();
        let f = self.loss(&w)?;
        Ok((w, f))
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: w.len() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, b: f64, c: f64) -> QuadraticObjective {
        QuadraticObjective::diagonal(&[a], vec![b], c).unwrap()
    }

    #[test]
    fn loss_examples() {
        let q = scalar(2.0, 0.0, 0.0);
        assert_eq!(q.loss(&[1.0]).unwrap(), 1.0);
        assert_eq!(q.loss(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn loss_dimension_mismatch_names_dims() {
        let err = scalar(2.0, 0.0, 0.0).loss(&[1.0, 2.0]).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 1, actual: 2 });
        assert!(err.to_string().contains("expected 1, got 2"));
    }

    #[test]
    fn exact_gradient() {
        assert_eq!(scalar(2.0, 0.0, 0.0).gradient(&[3.0]).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn noisy_gradient_is_unbiased() {
        let sigma = 0.5;
        let q = scalar(2.0, 0.0, 0.0).with_noise(sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| q.noisy_gradient(&[3.0], &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((mean - 6.0).abs() <= 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn optimum_examples() {
        let (w, f) = scalar(2.0, 4.0, 0.0).optimum().unwrap();
        assert!((w[0] - 2.0).abs() < 1e-14);
        assert!((f + 4.0).abs() < 1e-14);

        let q = QuadraticObjective::diagonal(&[1.0, 4.0], vec![1.0, 4.0], 0.0).unwrap();
        let (w, f) = q.optimum().unwrap();
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        assert!((f + 2.5).abs() < 1e-14);

        let (w, f) = scalar(2.0, 0.0, 5.0).optimum().unwrap();
        assert_eq!(w[0], 0.0);
        assert_eq!(f, 5.0);
    }

    #[test]
    fn ill_conditioned_is_singular() {
        let q = QuadraticObjective::diagonal(&[1.0, 1e-13], vec![1.0, 1.0], 0.0).unwrap();
        assert!(matches!(q.optimum(), Err(Error::Singular { .. })));
    }

    #[test]
    fn rejects_non_spd() {
        let err = QuadraticObjective::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]], vec![0.0, 0.0], 0.0);
        assert!(matches!(err, Err(Error::NotSymmetric { .. })));
        let err = QuadraticObjective::diagonal(&[1.0, -1.0], vec![0.0, 0.0], 0.0);
        assert!(matches!(err, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn smoothness_examples() {
        let q = QuadraticObjective::diagonal(&[1.0, 4.0], vec![0.0; 2], 0.0).unwrap();
        assert_eq!(q.smoothness_constants(), (1.0, 4.0));
        let q = QuadraticObjective::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]], vec![0.0; 2], 0.0).unwrap();
        let (mu, ell) = q.smoothness_constants();
        assert!((mu - 1.0).abs() < 1e-12 && (ell - 3.0).abs() < 1e-12);
        assert_eq!(scalar(5.0, 0.0, 0.0).smoothness_constants(), (5.0, 5.0));
    }

    #[test]
    fn serde_round_trip() {
        let q = QuadraticObjective::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]], vec![1.0, -1.0], 0.5)
            .unwrap()
            .with_noise(0.1)
            .unwrap();
        let json = serde_json::to_string(&q).unwrap();
        let back: QuadraticObjective = serde_json::from_str(&json).unwrap();
        assert_eq!(q, back);
    }
}
