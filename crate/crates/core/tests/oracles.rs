mod common;

use common::*;
use olsid_core::estimator::{error_identity_check, ols};
use olsid_core::gramian::{finite_gramian, gramian_sum, gramian_sum_matrix, series_bound};
use olsid_core::linalg::{lambda_min, op_norm};
use olsid_core::lti::{psi2_norm, simulate, NoiseFamily, NoiseKind, SystemSpec};
use olsid_core::spectrum::hw_tail_estimate;
use olsid_core::{spectral_radius, DMatrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn ols_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..30 {
        let d = 1 + i % 4;
        let spec = random_spec(d, 0.95, &mut rng);
        let traj = simulate(&spec, 50 + 10 * i, i as u64).unwrap();
        let brute = ols_normal_equations(&traj).unwrap();
        let est = ols(&traj).unwrap();
        assert!(!est.degenerate);
        assert!(op_norm(&(est.a_hat - brute)) < 1e-10);
    }
}

#[test]
fn error_identity_matches_lu_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..20 {
        let spec = random_spec(3, 0.9, &mut rng);
        let traj = simulate(&spec, 200, i).unwrap();
        let est = ols(&traj).unwrap();
        let lhs = &est.a_hat - spec.a();
        let rhs = noise_term_lu(&traj).unwrap();
        assert!(op_norm(&(lhs - rhs)) < 1e-9);
        assert!(error_identity_check(&traj, spec.a()).unwrap() < 1e-9);
    }
}

/// `int_0^a exp(x^2/K^2) dx` by its power series.
fn exp_square_integral(a: f64, k: f64) -> f64 {
    let r = a * a / (k * k);
    let mut term = a;
    let mut sum = a;
    for n in 1..200 {
        term *= r / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add < 1e-18 * sum {
            break;
        }
    }
    sum
}

#[test]
fn uniform_psi2_solves_the_defining_equation() {
    let k = psi2_norm(NoiseKind::Uniform);
    let h = 3f64.sqrt();
    let mgf = exp_square_integral(h, k) / h;
    assert!((mgf - 2.0).abs() < 1e-9, "{mgf}");
}

#[test]
fn closed_form_psi2_values() {
    // E exp(g^2/K^2) = (1 - 2/K^2)^{-1/2} = 2 at K^2 = 8/3.
    let k = psi2_norm(NoiseKind::Gaussian);
    assert!(((1.0 - 2.0 / (k * k)).powf(-0.5) - 2.0).abs() < 1e-12);
    let k = psi2_norm(NoiseKind::Rademacher);
    assert!(((1.0 / (k * k)).exp() - 2.0).abs() < 1e-12);
}

#[test]
fn chi_square_closed_form_agrees_with_statrs() {
    let chi = ChiSquared::new(10.0).unwrap();
    for x in [0.5, 5.0, 10.0, 15.0, 30.0] {
        assert!((chi_square_even_sf(10, x) - chi.sf(x)).abs() < 1e-12);
    }
}

#[test]
fn gaussian_hanson_wright_tail_matches_chi_square() {
    let b = DMatrix::identity(10, 10);
    let tail = hw_tail_estimate(&b, &NoiseFamily::gaussian(), 0.5, 40_000, 5, 1.0).unwrap();
    let exact = chi_square_even_sf(10, 15.0) + (1.0 - chi_square_even_sf(10, 5.0));
    let se = (exact * (1.0 - exact) / 40_000.0).sqrt();
    assert!((tail.empirical - exact).abs() <= 4.0 * se, "{} vs {exact}", tail.empirical);
}

#[test]
fn noise_families_are_standardized() {
    for kind in NoiseKind::ALL {
        let spec = SystemSpec::scalar(0.0, kind).unwrap();
        let traj = simulate(&spec, 100_000, 99).unwrap();
        let xs: Vec<f64> = traj.states[1..].iter().map(|v| v[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "{kind:?} mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "{kind:?} var {var}");
    }
}

#[test]
fn scalar_gramian_closed_form() {
    // sum_{s<t} (1 - a^{2(s+1)}) / (1 - a^2).
    for &a in &[0.0, 0.3, -0.7, 0.95] {
        let q: f64 = a * a;
        for t in [1usize, 2, 7, 40] {
            let oracle: f64 = (0..t).map(|s| (1.0 - q.powi(s as i32 + 1)) / (1.0 - q)).sum();
            let g = gramian_sum(&DMatrix::from_element(1, 1, a), t).unwrap();
            assert!((g.lambda_min - oracle).abs() < 1e-12 * oracle);
        }
    }
}

fn stable_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=4, 0.0f64..0.97, any::<u64>()).prop_map(|(d, rho, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_stable(d, rho, &mut rng)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gramian_telescopes(a in stable_matrix(), s in 0usize..30) {
        let next = finite_gramian(&a, s + 1);
        let mut p = DMatrix::identity(a.nrows(), a.nrows());
        for _ in 0..=s { p = &a * p; }
        let diff = next - finite_gramian(&a, s) - &p * p.transpose();
        prop_assert!(diff.amax() < 1e-10 * (1.0 + p.norm_squared()));
    }

    #[test]
    fn gramian_sum_floor_and_monotonicity(a in stable_matrix(), t in 1usize..200) {
        let l0 = lambda_min(&gramian_sum_matrix(&a, t));
        let l1 = lambda_min(&gramian_sum_matrix(&a, t + 1));
        prop_assert!(l0 >= t as f64 * (1.0 - 1e-9));
        prop_assert!(l1 >= l0 * (1.0 - 1e-12));
    }

    #[test]
    fn gramian_sum_matches_direct_double_sum(a in stable_matrix(), t in 1usize..25) {
        let direct = (0..t).fold(DMatrix::zeros(a.nrows(), a.nrows()), |acc, s| acc + finite_gramian(&a, s));
        let fast = gramian_sum_matrix(&a, t);
        prop_assert!((direct - &fast).amax() <= 1e-10 * fast.amax());
    }

    #[test]
    fn spectral_radius_below_norm(a in stable_matrix()) {
        prop_assert!(spectral_radius(&a).unwrap() <= op_norm(&a) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn series_bound_dominates_partial_sums(a in stable_matrix()) {
        let j = series_bound(&a, 1e-10).unwrap();
        let mut p = DMatrix::identity(a.nrows(), a.nrows());
        let mut partial = 0.0;
        for _ in 0..200 { partial += op_norm(&p); p = &a * p; }
        prop_assert!(partial <= j + 1e-9 * j);
    }

    #[test]
    fn replay_is_exact(a in stable_matrix(), t in 1usize..100, seed in any::<u64>()) {
        let spec = SystemSpec::new(a, NoiseKind::Rademacher).unwrap();
        let traj = simulate(&spec, t, seed).unwrap();
        prop_assert_eq!(traj.replay_residual(spec.a()).unwrap(), 0.0);
    }
}
