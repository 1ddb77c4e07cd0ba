//! Random quadratic federations with controlled spectra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::objectives::QuadraticObjective;
use crate::rng::{stream, Purpose};

/// `Qᵀ diag(λ) Q` with `Q` a random orthogonal matrix and `λ` uniform in
/// `[lo, hi]`, the endpoints always included when `dim ≥ 2`.
pub fn random_spd<R: Rng + ?Sized>(dim: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let mut eig: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
    if dim >= 2 {
        eig[0] = lo;
        eig[1] = hi;
    }
    let d = DMatrix::from_diagonal(&DVector::from_vec(eig));
    let a = &q * d * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn random_quadratic<R: Rng + ?Sized>(
    dim: usize,
    lo: f64,
    hi: f64,
    b_scale: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<QuadraticObjective> {
    let a = random_spd(dim, lo, hi, rng);
    let b: Vec<f64> = (0..dim).map(|_| b_scale * rng.sample::<f64, _>(StandardNormal)).collect();
    QuadraticObjective::new(a, b, 0.0)?.with_noise(noise_std)
}

/// `n` independent random quadratics.
pub fn heterogeneous_clients(
    n: usize,
    dim: usize,
    lo: f64,
    hi: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<QuadraticObjective>> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, Purpose::ProblemGeneration, i as u64, 0);
            random_quadratic(dim, lo, hi, 1.0, noise_std, &mut rng)
        })
        .collect()
}

/// `n` copies of one random quadratic.
pub fn identical_clients(
    n: usize,
    dim: usize,
    lo: f64,
    hi: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<QuadraticObjective>> {
    let mut rng = stream(seed, Purpose::ProblemGeneration, 0, 0);
    let q = random_quadratic(dim, lo, hi, 1.0, noise_std, &mut rng)?;
    Ok(vec![q; n])
}
