//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::*;
use olsid_core::estimator::ols;
use olsid_core::experiments::{
    calibrate_constant, decay_experiment, pac_experiment, proof_diagnostics, required_lambda_min,
    spectrum_coverage, spectrum_coverage_with_k, CalibrationConfig, ExperimentConfig, ProofParams,
};
use olsid_core::gramian::{
    gramian_lambda_min, gramian_sum, minimal_horizon, series_bound, toeplitz_norm_explicit,
    toeplitz_norm_symbol, SERIES_TOL, SYMBOL_GRID,
};
use olsid_core::linalg::op_norm;
use olsid_core::lti::{simulate, NoiseFamily, NoiseKind, SystemSpec};
use olsid_core::spectrum::{hw_tail_grid, isometry_defect};
use olsid_core::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Suite {
    failed: Vec<u32>,
    proof_paths: usize,
    proof_violations: usize,
}

impl Suite {
    fn report(&mut self, id: u32, ok: bool, start: Instant, detail: String) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {id:>2}: {detail} ({:.1}s)",
            start.elapsed().as_secs_f64()
        );
        if !ok {
            self.failed.push(id);
        }
    }

    fn absorb(&mut self, premises: usize, violations: usize) {
        self.proof_paths += premises;
        self.proof_violations += violations;
    }
}

fn scalar(a: f64, kind: NoiseKind) -> SystemSpec {
    SystemSpec::scalar(a, kind).unwrap()
}

fn config(spec: SystemSpec, t_grid: Vec<usize>, eps: f64, delta: f64, n: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig { spec, t_grid, epsilon: eps, delta, n_trials: n, master_seed: seed, constant_c: 1.0 }
}

/// Criteria 1-3 share the same 100 random systems.
fn ols_oracle(s: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_ols: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut full_rank = 0;
    let mut floor_ok = true;
    for i in 0..100u64 {
        let d = rng.random_range(1..=4);
        let t = rng.random_range(d + 1..=500);
        let spec = random_spec(d, 0.95, &mut rng);
        let traj = simulate(&spec, t, i).unwrap();
        let est = ols(&traj).unwrap();
        if let Some(brute) = ols_normal_equations(&traj) {
            worst_ols = worst_ols.max(op_norm(&(&est.a_hat - brute)));
        } else {
            worst_ols = f64::INFINITY;
        }
        if !est.degenerate {
            full_rank += 1;
            let rhs = noise_term_lu(&traj).unwrap();
            worst_identity = worst_identity.max(op_norm(&(&est.a_hat - spec.a() - rhs)));
        }
        for tt in [1, 2, t / 2 + 1, t] {
            floor_ok &= gramian_lambda_min(spec.a(), tt) >= tt as f64 * (1.0 - 1e-9);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    s.report(1, worst_ols <= 1e-10 && secs < 30.0, start, format!("OLS vs normal equations, max residual {worst_ols:.2e}"));
    s.report(
        2,
        worst_identity <= 1e-9 && full_rank > 0,
        start,
        format!("error identity on {full_rank} full-rank trials, max residual {worst_identity:.2e}"),
    );
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let d = rng.random_range(1..=6);
        let a = random_stable(d, rng.random_range(0.0..0.999), &mut rng);
        let t = rng.random_range(1..=3000);
        floor_ok &= gramian_lambda_min(&a, t) >= t as f64 * (1.0 - 1e-9);
    }
    s.report(3, floor_ok, start, "lambda_min(G_t) >= t on all tested (A, t)".into());
}

fn toeplitz_chain(s: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let a = random_stable(d, rng.random_range(0.0..0.95), &mut rng);
        let t = rng.random_range(1..=2000 / d);
        let explicit = toeplitz_norm_explicit(&a, t).unwrap();
        let symbol = toeplitz_norm_symbol(&a, t, SYMBOL_GRID).unwrap();
        let j = series_bound(&a, SERIES_TOL).unwrap();
        ok &= explicit <= symbol + 1e-6 && symbol <= j + SERIES_TOL;
        worst_gap = worst_gap.max(explicit - symbol);
    }
    let secs = start.elapsed().as_secs_f64();
    s.report(
        4,
        ok && secs < 60.0,
        start,
        format!("explicit <= symbol + 1e-6 <= J on 50 systems, max(explicit - symbol) {worst_gap:.2e}"),
    );
}

fn containment(s: &mut Suite) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counterexamples = 0;
    let mut near_isometric = 0;
    for i in 0..500 {
        let d = rng.random_range(1..=4);
        let t = rng.random_range(d..=60);
        let a = random_stable(d, rng.random_range(0.0..0.9), &mut rng);
        let m = gramian_sum(&a, rng.random_range(1..=50)).unwrap().whitener;
        let x = if i % 2 == 0 {
            DMatrix::from_fn(t, d, |_, _| rng.sample::<f64, _>(StandardNormal))
        } else {
            // X = Q (I + small) M^{-1}: nearly isometric after whitening.
            let g = DMatrix::from_fn(t, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = g.qr().q();
            let pert = DMatrix::from_fn(d, d, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal));
            let m_inv = m.clone().try_inverse().unwrap();
            q * (DMatrix::identity(d, d) + pert) * m_inv
        };
        let rep = isometry_defect(&x, &m).unwrap();
        if rep.defect <= 0.5 {
            near_isometric += 1;
        }
        if !rep.containment {
            counterexamples += 1;
        }
    }
    s.report(
        5,
        counterexamples == 0,
        start,
        format!("sandwich over 500 pairs ({near_isometric} with defect <= 1/2), {counterexamples} counterexamples"),
    );
}

fn decay(s: &mut Suite) {
    let start = Instant::now();
    let grid = vec![100, 300, 1000, 3000, 10000];
    let systems = [
        ("a = 0.5", scalar(0.5, NoiseKind::Gaussian)),
        ("rotation rho = 0.8", SystemSpec::new(rotation(0.8, 0.6), NoiseKind::Gaussian).unwrap()),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (i, (name, spec)) in systems.into_iter().enumerate() {
        let fit = decay_experiment(&config(spec, grid.clone(), 0.2, 0.1, 200, 600 + i as u64)).unwrap();
        for p in &fit.points {
            s.absorb(0, p.proof_violations);
        }
        ok &= (-0.6..=-0.4).contains(&fit.slope) && fit.constant_ratio <= 3.0;
        details.push(format!("{name}: slope {:.3}, ratio {:.2}", fit.slope, fit.constant_ratio));
    }
    let secs = start.elapsed().as_secs_f64();
    s.report(6, ok && secs < 600.0, start, details.join("; "));
}

fn pac(s: &mut Suite) {
    let start = Instant::now();
    let (eps, delta) = (0.2, 0.1);
    let family: Vec<SystemSpec> = [0.0, 0.5, 0.9].iter().map(|&a| scalar(a, NoiseKind::Gaussian)).collect();
    let cal = calibrate_constant(&CalibrationConfig::new(family.clone(), eps, delta, 500, 700)).unwrap();
    let Some(c_hat) = cal.constant else {
        s.report(7, false, start, format!("calibration did not converge, bracket low {}", cal.bracket_low));
        return;
    };
    let mut ok = true;
    let mut details = vec![format!("c_hat {c_hat:.4}")];
    for (i, spec) in family.into_iter().enumerate() {
        let required = required_lambda_min(&spec, eps, delta, c_hat).unwrap();
        let t = minimal_horizon(spec.a(), required, 10_000_000).unwrap();
        let mut cfg = config(spec, vec![t], eps, delta, 500, 7_000 + i as u64);
        cfg.constant_c = c_hat;
        let batch = pac_experiment(&cfg, t).unwrap();
        s.absorb(batch.proof_premise_count, batch.proof_violations);
        let limit = delta + batch.wilson_half_width();
        ok &= batch.frequency <= limit;
        details.push(format!("t {t}: {:.3} <= {limit:.3}", batch.frequency));
    }
    let secs = start.elapsed().as_secs_f64();
    s.report(7, ok && secs < 600.0, start, details.join(", "));
}

fn coverage(s: &mut Suite) {
    let start = Instant::now();
    let t = 10_000;
    let cfg = config(scalar(0.0, NoiseKind::Gaussian), vec![t], 0.2, 0.1, 500, 800);
    let chi = ChiSquared::new(t as f64).unwrap();
    let oracle = |k: f64| {
        let w = k * k * 0.2;
        let (lo, hi) = ((1.0 - w).max(0.0).powi(2) * t as f64, (1.0 + w).powi(2) * t as f64);
        chi.cdf(hi) - chi.cdf(lo)
    };
    let mut ok = true;
    let mut details = Vec::new();
    for (label, cov) in [
        ("K from definition", spectrum_coverage(&cfg, t, 0.2).unwrap()),
        ("K = 1", spectrum_coverage_with_k(&cfg, t, 0.2, 1.0).unwrap()),
    ] {
        let p = oracle(cov.k);
        let se = (p * (1.0 - p) / cov.n_trials as f64).sqrt();
        ok &= cov.coverage >= 0.95 && (cov.coverage - p).abs() <= 3.0 * se + 1.0 / cov.n_trials as f64;
        details.push(format!("{label}: {:.3} (chi-square {p:.4})", cov.coverage));
    }
    s.report(8, ok, start, details.join(", "));
}

fn hanson_wright(s: &mut Suite) {
    let start = Instant::now();
    let b = DMatrix::identity(10, 10);
    let grid = [1e-6, 0.01, 0.1, 0.5, 1.0, 2.0];
    let rad = hw_tail_grid(&b, &NoiseFamily::new(NoiseKind::Rademacher), &grid, 10_000, 900, 1.0).unwrap();
    let zero = rad.iter().all(|r| r.exceedances == 0);
    let n = 100_000;
    let g = hw_tail_grid(&b, &NoiseFamily::gaussian(), &[0.5], n, 901, 1.0).unwrap().remove(0);
    let exact = chi_square_even_sf(10, 15.0) + (1.0 - chi_square_even_sf(10, 5.0));
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    let ok = zero && (g.empirical - exact).abs() <= 3.0 * se;
    s.report(
        9,
        ok,
        start,
        format!(
            "rademacher tail zero: {zero}; gaussian eps=0.5 {:.5} vs exact {exact:.5} (3 se = {:.5})",
            g.empirical,
            3.0 * se
        ),
    );
}

fn soundness(s: &mut Suite) {
    let start = Instant::now();
    let runs = [
        (scalar(0.0, NoiseKind::Gaussian), 30_000),
        (scalar(0.5, NoiseKind::Rademacher), 12_000),
        (scalar(-0.7, NoiseKind::Uniform), 10_000),
        (SystemSpec::new(rotation(0.8, 0.6), NoiseKind::Rademacher).unwrap(), 8_000),
    ];
    let mut dedicated = 0;
    let mut chain_failures = 0;
    for (i, (spec, t)) in runs.into_iter().enumerate() {
        let cfg = config(spec.clone(), vec![t], 0.2, 0.1, 200, 1_000 + i as u64);
        let batch = pac_experiment(&cfg, t).unwrap();
        dedicated += batch.proof_premise_count;
        s.absorb(batch.proof_premise_count, batch.proof_violations);
        for seed in 0..20 {
            let traj = simulate(&spec, t, seed).unwrap();
            let diag = proof_diagnostics(&traj, &spec, ProofParams::new(0.2, 0.1, spec.noise().psi2, 1.0)).unwrap();
            chain_failures += usize::from(!diag.chain_holds);
            s.absorb(usize::from(diag.premises_hold), usize::from(!diag.implication_holds));
        }
    }
    let ok = s.proof_violations == 0 && chain_failures == 0 && dedicated > 0;
    s.report(
        10,
        ok,
        start,
        format!(
            "{} paths with both proof events, {} counterexamples, {chain_failures} chain failures",
            s.proof_paths, s.proof_violations
        ),
    );
}

fn determinism(s: &mut Suite) {
    let start = Instant::now();
    let cfg = config(
        SystemSpec::new(rotation(0.8, 0.6), NoiseKind::Uniform).unwrap(),
        vec![50, 200, 1000],
        0.2,
        0.1,
        100,
        1_100,
    );
    let json = || {
        [
            serde_json::to_string(&pac_experiment(&cfg, 300).unwrap()).unwrap(),
            serde_json::to_string(&decay_experiment(&cfg).unwrap()).unwrap(),
            serde_json::to_string(&spectrum_coverage(&cfg, 500, 0.3).unwrap()).unwrap(),
            serde_json::to_string(&simulate(&cfg.spec, 100, 5).unwrap()).unwrap(),
        ]
    };
    let first = json();
    let ok = first == json();
    s.report(11, ok, start, "repeated runs serialize byte-identically".into());
}

fn main() {
    let mut s = Suite { failed: Vec::new(), proof_paths: 0, proof_violations: 0 };
    ols_oracle(&mut s);
    toeplitz_chain(&mut s);
    containment(&mut s);
    decay(&mut s);
    pac(&mut s);
    coverage(&mut s);
    hanson_wright(&mut s);
    soundness(&mut s);
    determinism(&mut s);
    if s.failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {:?}", s.failed);
        std::process::exit(1);
    }
}
