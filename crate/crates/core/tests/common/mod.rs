#![allow(dead_code)]

use olsid_core::lti::{NoiseKind, SystemSpec, Trajectory};
use olsid_core::{spectral_radius, DMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian matrix rescaled so that its spectral radius equals `rho`.
pub fn random_stable(d: usize, rho: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let r = spectral_radius(&g).unwrap();
    if r == 0.0 {
        return g;
    }
    g * (rho / r)
}

pub fn random_kind(rng: &mut ChaCha8Rng) -> NoiseKind {
    NoiseKind::ALL[rng.random_range(0..3)]
}

pub fn random_spec(d: usize, rho_max: f64, rng: &mut ChaCha8Rng) -> SystemSpec {
    let rho = rng.random_range(0.0..rho_max);
    let kind = random_kind(rng);
    SystemSpec::new(random_stable(d, rho, rng), kind).unwrap()
}

/// OLS through an LU solve of the normal equations `X^T X A^T = X^T Y`.
pub fn ols_normal_equations(traj: &Trajectory) -> Option<DMatrix<f64>> {
    let x = traj.covariates();
    let y = traj.targets();
    let lhs = x.tr_mul(&x);
    let rhs = x.tr_mul(&y);
    lhs.lu().solve(&rhs).map(|at| at.transpose())
}

/// `E^T X (X^T X)^{-1}` via an LU solve.
pub fn noise_term_lu(traj: &Trajectory) -> Option<DMatrix<f64>> {
    let x = traj.covariates();
    let e = traj.noise_matrix().ok()?;
    let g = x.tr_mul(&x);
    g.lu().solve(&x.tr_mul(&e)).map(|m| m.transpose())
}

/// Upper tail of a chi-square with an even number `2m` of degrees of
/// freedom: `exp(-x/2) sum_{k<m} (x/2)^k / k!`.
pub fn chi_square_even_sf(dof: usize, x: f64) -> f64 {
    assert!(dof % 2 == 0 && dof > 0);
    let h = 0.5 * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..dof / 2 {
        term *= h / k as f64;
        sum += term;
    }
    (-h).exp() * sum
}

/// `A = r R(theta)`, a scaled planar rotation.
pub fn rotation(r: f64, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[r * c, -r * s, r * s, r * c])
}
