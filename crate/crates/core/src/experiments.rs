//! Seeded Monte Carlo harness.
//!
//! Every experiment is a pure function of its configuration. Trial `i` at
//! horizon `t` draws from `derive_seed(master_seed, [t, i])`; trials run in
//! parallel and are folded in index order.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, moment_sums, noise_cross_moment, self_normalized_threshold};
use crate::gramian::{gramian_sum, minimal_horizon, series_bound, GramianSummary, SERIES_TOL};
use crate::linalg::{self, op_norm};
use crate::lti::{simulate, SystemSpec, Trajectory};
use crate::seed::derive_seed;
use crate::spectrum::{isometry_defect_from_gram, spectrum_event};

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: SystemSpec,
    pub t_grid: Vec<usize>,
    pub epsilon: f64,
    pub delta: f64,
    pub n_trials: usize,
    pub master_seed: u64,
    #[serde(default = "one")]
    pub constant_c: f64,
}

fn one() -> f64 {
    1.0
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0,1), got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::invalid("n_trials must be >= 1"));
        }
        if self.t_grid.iter().any(|&t| t == 0) {
            return Err(Error::invalid("t_grid entries must be >= 1"));
        }
        if let Some(w) = self.t_grid.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "t_grid must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        check_unit_interval("epsilon", self.epsilon)?;
        check_unit_interval("delta", self.delta)?;
        if !(self.constant_c > 0.0 && self.constant_c.is_finite()) {
            return Err(Error::invalid(format!(
                "constant_c must be positive, got {}",
                self.constant_c
            )));
        }
        Ok(())
    }
}

/// Wilson score interval for `successes` out of `n` at level `z`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let low = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if successes == n { 1.0 } else { (centre + half).min(1.0) };
    (low, high)
}

/// The `ceil(level * n)`-th order statistic of `sorted` (ascending).
pub fn order_statistic(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let k = ((level * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[k - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// `||A_hat - A||`.
    pub error: f64,
    pub degenerate: bool,
    /// `error > epsilon` or degenerate.
    pub failure: bool,
    pub defect: f64,
    /// `defect <= 1/2`.
    pub e2_indicator: bool,
    /// Self-normalized value with `S = M^{-2}/2`.
    pub selfnorm_value: f64,
    pub selfnorm_bound: f64,
    /// Both proof events hold together with the horizon condition.
    pub proof_premises: bool,
    /// Premises hold yet `error > epsilon`.
    pub proof_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBatch {
    pub t: usize,
    pub n_trials: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub master_seed: u64,
    pub lambda_min: f64,
    pub whitener_norm: f64,
    pub trials: Vec<TrialRecord>,
    pub failures: usize,
    pub frequency: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub degenerate_count: usize,
    pub e2_count: usize,
    pub selfnorm_exceed_count: usize,
    pub proof_premise_count: usize,
    pub proof_violations: usize,
    pub median_error: f64,
    /// Order `1 - delta` quantile.
    pub quantile_error: f64,
    pub error_quantiles: Vec<QuantilePoint>,
}

impl TrialBatch {
    pub fn wilson_half_width(&self) -> f64 {
        let (lo, hi) = wilson_interval(self.failures, self.n_trials, WILSON_Z);
        0.5 * (hi - lo)
    }
}

/// Constants entering the path-wise proof bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProofParams {
    pub epsilon: f64,
    pub delta: f64,
    pub k: f64,
    pub c: f64,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
}

impl ProofParams {
    pub fn new(epsilon: f64, delta: f64, k: f64, c: f64) -> Self {
        ProofParams { epsilon, delta, k, c, c1: 1.0, c2: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        check_unit_interval("epsilon", self.epsilon)?;
        check_unit_interval("delta", self.delta)?;
        for (name, v) in [("K", self.k), ("c", self.c), ("c1", self.c1), ("c2", self.c2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Every intermediate of the proof chain evaluated on one realized path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofDiagnostics {
    pub t: usize,
    pub d: usize,
    pub params: ProofParams,
    pub defect: f64,
    /// `defect <= 1/2`.
    pub e2: bool,
    #[serde(with = "linalg::serde_rows")]
    pub s: DMatrix<f64>,
    /// `sqrt(s_d(S))`.
    pub beta: f64,
    /// `|beta^2 - 1/(2 ||M||^2)|`, relative.
    pub beta_sq_identity_residual: f64,
    pub selfnorm_value: f64,
    /// Self-normalized threshold at confidence `delta/2`.
    pub selfnorm_threshold: f64,
    pub log_det_ratio: f64,
    /// `selfnorm_value <= selfnorm_threshold`.
    pub e1: bool,
    /// `sqrt(2) selfnorm_value / beta`, an upper bound on the error under `e2`.
    pub chain_error_bound: f64,
    pub error: f64,
    pub degenerate: bool,
    /// `J(A) >= ||Gamma||`.
    pub gamma_norm_bound: f64,
    /// `16 K^4 ||Gamma||^2 / c2 (log(4/delta) + d log 9)`.
    pub tau1: f64,
    /// `16 c1 K^2 / eps^2 (log(2/delta) + d log 10)`.
    pub tau2: f64,
    /// `1/||M||^2 = lambda_min(G_t)`.
    pub inv_whitener_norm_sq: f64,
    /// `1/||M||^2 >= max(tau1, tau2)`.
    pub tau_conditions: bool,
    /// `64 c K^2 (log(2/delta) + d log 10) / eps^2`, the horizon level at
    /// which `sqrt(2) T / beta <= eps` for every path in both events.
    pub horizon_requirement: f64,
    pub horizon_condition: bool,
    pub premises_hold: bool,
    /// `!premises_hold || error <= epsilon`.
    pub implication_holds: bool,
    /// `!e2 || error <= chain_error_bound`.
    pub chain_holds: bool,
}

/// Per-horizon quantities shared by every path of one batch.
struct ProofContext {
    params: ProofParams,
    d: usize,
    gramian: GramianSummary,
    s: DMatrix<f64>,
    beta: f64,
    beta_sq_identity_residual: f64,
    gamma_norm_bound: f64,
    tau1: f64,
    tau2: f64,
    horizon_requirement: f64,
}

struct PathMoments {
    gram: DMatrix<f64>,
    noise_cross: DMatrix<f64>,
    error: f64,
    degenerate: bool,
}

impl PathMoments {
    fn new(traj: &Trajectory, a: &DMatrix<f64>) -> Result<Self> {
        let (cross, gram) = moment_sums(traj);
        let p = linalg::pinv_sym(&gram);
        let a_hat = cross * &p.pinv;
        Ok(PathMoments {
            error: estimator::estimation_error(&a_hat, a)?,
            degenerate: p.rank < traj.d,
            noise_cross: noise_cross_moment(traj)?,
            gram,
        })
    }
}

impl ProofContext {
    fn new(spec: &SystemSpec, t: usize, params: ProofParams) -> Result<Self> {
        params.validate()?;
        let d = spec.dim();
        let df = d as f64;
        let gramian = gramian_sum(spec.a(), t)?;
        let s = &gramian.gramian_sum * 0.5;
        let beta_sq = linalg::lambda_min(&s);
        let target = 0.5 / gramian.whitener_norm.powi(2);
        let j = series_bound(spec.a(), SERIES_TOL)?;
        let (k, eps, delta) = (params.k, params.epsilon, params.delta);
        let log_half = (2.0 / delta).ln() + df * 10f64.ln();
        Ok(ProofContext {
            d,
            beta: beta_sq.sqrt(),
            beta_sq_identity_residual: (beta_sq - target).abs() / target,
            gamma_norm_bound: j,
            tau1: 16.0 * k.powi(4) * j * j / params.c2 * ((4.0 / delta).ln() + df * 9f64.ln()),
            tau2: 16.0 * params.c1 * k * k / (eps * eps) * log_half,
            horizon_requirement: 64.0 * params.c * k * k * log_half / (eps * eps),
            params,
            gramian,
            s,
        })
    }

    fn diagnose(&self, path: &PathMoments) -> Result<ProofDiagnostics> {
        let p = &self.params;
        let m = &self.gramian.whitener;
        let iso = isometry_defect_from_gram(&path.gram, m)?;
        let half_delta = 0.5 * p.delta;
        let sn = estimator::self_normalized_from_moments(
            &path.noise_cross,
            &path.gram,
            &self.s,
            half_delta,
            p.k,
            p.c,
        )?;
        let threshold = self_normalized_threshold(self.d, sn.log_det_ratio, half_delta, p.k, p.c);
        let e2 = iso.defect <= 0.5;
        let e1 = sn.value <= threshold;
        let inv_m_sq = self.gramian.lambda_min;
        let horizon_condition = inv_m_sq >= self.horizon_requirement;
        let premises = e2 && e1 && horizon_condition;
        let chain = std::f64::consts::SQRT_2 * sn.value / self.beta;
        Ok(ProofDiagnostics {
            t: self.gramian.t,
            d: self.d,
            params: *p,
            defect: iso.defect,
            e2,
            s: self.s.clone(),
            beta: self.beta,
            beta_sq_identity_residual: self.beta_sq_identity_residual,
            selfnorm_value: sn.value,
            selfnorm_threshold: threshold,
            log_det_ratio: sn.log_det_ratio,
            e1,
            chain_error_bound: chain,
            error: path.error,
            degenerate: path.degenerate,
            gamma_norm_bound: self.gamma_norm_bound,
            tau1: self.tau1,
            tau2: self.tau2,
            inv_whitener_norm_sq: inv_m_sq,
            tau_conditions: inv_m_sq >= self.tau1.max(self.tau2),
            horizon_requirement: self.horizon_requirement,
            horizon_condition,
            premises_hold: premises,
            implication_holds: !premises || path.error <= p.epsilon,
            chain_holds: !e2 || path.error <= chain * (1.0 + 1e-9),
        })
    }
}

/// Proof-chain intermediates on a single realized path.
pub fn proof_diagnostics(
    traj: &Trajectory,
    spec: &SystemSpec,
    params: ProofParams,
) -> Result<ProofDiagnostics> {
    if traj.d != spec.dim() {
        return Err(Error::invalid(format!(
            "trajectory dimension {} does not match system dimension {}",
            traj.d,
            spec.dim()
        )));
    }
    traj.validate()?;
    let ctx = ProofContext::new(spec, traj.t, params)?;
    ctx.diagnose(&PathMoments::new(traj, spec.a())?)
}

fn trial_seed(master: u64, t: usize, i: usize) -> u64 {
    derive_seed(master, &[t as u64, i as u64])
}

pub fn pac_experiment(cfg: &ExperimentConfig, t: usize) -> Result<TrialBatch> {
    cfg.validate()?;
    if t == 0 {
        return Err(Error::invalid("horizon t must be >= 1"));
    }
    let spec = &cfg.spec;
    let params = ProofParams::new(cfg.epsilon, cfg.delta, spec.noise().psi2, cfg.constant_c);
    let ctx = ProofContext::new(spec, t, params)?;
    let s = &ctx.s;

    let trials = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| -> Result<TrialRecord> {
            let seed = trial_seed(cfg.master_seed, t, i);
            let traj = simulate(spec, t, seed)?;
            let path = PathMoments::new(&traj, spec.a())?;
            let diag = ctx.diagnose(&path)?;
            let sn = estimator::self_normalized_from_moments(
                &path.noise_cross,
                &path.gram,
                s,
                cfg.delta,
                params.k,
                params.c,
            )?;
            Ok(TrialRecord {
                trial: i,
                seed,
                error: path.error,
                degenerate: path.degenerate,
                failure: path.degenerate || path.error > cfg.epsilon,
                defect: diag.defect,
                e2_indicator: diag.e2,
                selfnorm_value: sn.value,
                selfnorm_bound: sn.bound,
                proof_premises: diag.premises_hold,
                proof_violation: !diag.implication_holds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg, t, &ctx.gramian, trials))
}

fn aggregate(cfg: &ExperimentConfig, t: usize, g: &GramianSummary, trials: Vec<TrialRecord>) -> TrialBatch {
    let n = trials.len();
    let count = |f: fn(&TrialRecord) -> bool| trials.iter().filter(|r| f(r)).count();
    let failures = count(|r| r.failure);
    let (wilson_low, wilson_high) = wilson_interval(failures, n, WILSON_Z);
    let mut sorted: Vec<f64> = trials.iter().map(|r| r.error).collect();
    sorted.sort_by(f64::total_cmp);
    let q_level = 1.0 - cfg.delta;
    let mut levels = vec![0.1, 0.25, 0.5, 0.75, 0.9, q_level];
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    TrialBatch {
        t,
        n_trials: n,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        master_seed: cfg.master_seed,
        lambda_min: g.lambda_min,
        whitener_norm: g.whitener_norm,
        failures,
        frequency: failures as f64 / n as f64,
        wilson_low,
        wilson_high,
        degenerate_count: count(|r| r.degenerate),
        e2_count: count(|r| r.e2_indicator),
        selfnorm_exceed_count: count(|r| r.selfnorm_value > r.selfnorm_bound),
        proof_premise_count: count(|r| r.proof_premises),
        proof_violations: count(|r| r.proof_violation),
        median_error: order_statistic(&sorted, 0.5),
        quantile_error: order_statistic(&sorted, q_level),
        error_quantiles: levels
            .into_iter()
            .map(|level| QuantilePoint { level, value: order_statistic(&sorted, level) })
            .collect(),
        trials,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub t: usize,
    pub lambda_min: f64,
    pub median: f64,
    /// Order `1 - delta` quantile of the error.
    pub quantile: f64,
    /// `c sqrt((log(1/delta) + d) / lambda_min)`.
    pub bound_rhs: f64,
    /// `quantile sqrt(lambda_min / (log(1/delta) + d))`.
    pub implied_constant: f64,
    pub failures: usize,
    pub proof_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub delta: f64,
    pub n_trials: usize,
    pub points: Vec<DecayPoint>,
    /// Least-squares slope of `log quantile` against `log lambda_min`.
    pub slope: f64,
    pub intercept: f64,
    /// Largest implied constant over the grid.
    pub c_hat: f64,
    /// Largest over smallest implied constant.
    pub constant_ratio: f64,
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn decay_experiment(cfg: &ExperimentConfig) -> Result<DecayFit> {
    cfg.validate()?;
    if cfg.t_grid.len() < 3 {
        return Err(Error::invalid(format!(
            "decay fit needs at least 3 horizons, got {}",
            cfg.t_grid.len()
        )));
    }
    let (first, last) = (cfg.t_grid[0], cfg.t_grid[cfg.t_grid.len() - 1]);
    if last < 10 * first {
        return Err(Error::invalid(format!(
            "t_grid must span at least one decade ({first}..{last})"
        )));
    }
    let log_term = (1.0 / cfg.delta).ln() + cfg.spec.dim() as f64;
    let mut points = Vec::with_capacity(cfg.t_grid.len());
    for &t in &cfg.t_grid {
        let batch = pac_experiment(cfg, t)?;
        let lm = batch.lambda_min;
        points.push(DecayPoint {
            t,
            lambda_min: lm,
            median: batch.median_error,
            quantile: batch.quantile_error,
            bound_rhs: cfg.constant_c * (log_term / lm).sqrt(),
            implied_constant: batch.quantile_error * (lm / log_term).sqrt(),
            failures: batch.failures,
            proof_violations: batch.proof_violations,
        });
    }
    if points.iter().any(|p| !(p.quantile > 0.0)) {
        return Err(Error::Internal("an error quantile is zero; the log fit is undefined".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.lambda_min.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.quantile.ln()).collect();
    let (slope, intercept) = fit_line(&xs, &ys);
    let consts = points.iter().map(|p| p.implied_constant);
    let c_hat = consts.clone().fold(f64::NEG_INFINITY, f64::max);
    let c_min = consts.fold(f64::INFINITY, f64::min);
    if !slope.is_finite() {
        return Err(Error::Internal("fitted slope is not finite".into()));
    }
    Ok(DecayFit {
        delta: cfg.delta,
        n_trials: cfg.n_trials,
        points,
        slope,
        intercept,
        c_hat,
        constant_ratio: c_hat / c_min,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub t: usize,
    pub epsilon: f64,
    pub k: f64,
    pub n_trials: usize,
    pub hits: usize,
    pub coverage: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

/// Fraction of trials with
/// `(1 - K^2 eps)/||M|| <= s_d(X) <= s_1(X) <= (1 + K^2 eps)/s_d(M)`,
/// `K` being the noise family's sub-gaussian norm.
pub fn spectrum_coverage(cfg: &ExperimentConfig, t: usize, epsilon: f64) -> Result<Coverage> {
    spectrum_coverage_with_k(cfg, t, epsilon, cfg.spec.noise().psi2)
}

pub fn spectrum_coverage_with_k(
    cfg: &ExperimentConfig,
    t: usize,
    epsilon: f64,
    k: f64,
) -> Result<Coverage> {
    cfg.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid(format!("K must be positive, got {k}")));
    }
    let g = gramian_sum(cfg.spec.a(), t)?;
    let hits = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let traj = simulate(&cfg.spec, t, trial_seed(cfg.master_seed, t, i))?;
            let (_, gram) = moment_sums(&traj);
            Ok(spectrum_event(&isometry_defect_from_gram(&gram, &g.whitener)?, k, epsilon))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    let (wilson_low, wilson_high) = wilson_interval(hits, cfg.n_trials, WILSON_Z);
    Ok(Coverage {
        t,
        epsilon,
        k,
        n_trials: cfg.n_trials,
        hits,
        coverage: hits as f64 / cfg.n_trials as f64,
        wilson_low,
        wilson_high,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub systems: Vec<SystemSpec>,
    pub epsilon: f64,
    pub delta: f64,
    pub n_trials: usize,
    pub master_seed: u64,
    #[serde(default = "default_c_low")]
    pub c_low: f64,
    #[serde(default = "default_c_high")]
    pub c_high: f64,
    #[serde(default = "default_steps")]
    pub max_steps: usize,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
}

fn default_c_low() -> f64 {
    1.0 / 64.0
}

fn default_c_high() -> f64 {
    64.0
}

fn default_steps() -> usize {
    20
}

fn default_t_max() -> usize {
    10_000_000
}

impl CalibrationConfig {
    pub fn new(systems: Vec<SystemSpec>, epsilon: f64, delta: f64, n_trials: usize, master_seed: u64) -> Self {
        CalibrationConfig {
            systems,
            epsilon,
            delta,
            n_trials,
            master_seed,
            c_low: default_c_low(),
            c_high: default_c_high(),
            max_steps: default_steps(),
            t_max: default_t_max(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.systems.len() < 3 {
            return Err(Error::invalid(format!(
                "calibration needs at least 3 systems, got {}",
                self.systems.len()
            )));
        }
        if self.n_trials == 0 {
            return Err(Error::invalid("n_trials must be >= 1"));
        }
        check_unit_interval("epsilon", self.epsilon)?;
        check_unit_interval("delta", self.delta)?;
        if !(self.c_low > 0.0 && self.c_low < self.c_high && self.c_high.is_finite()) {
            return Err(Error::invalid("need 0 < c_low < c_high < inf"));
        }
        if self.t_max == 0 {
            return Err(Error::invalid("t_max must be >= 1"));
        }
        Ok(())
    }

    fn system_config(&self, index: usize) -> ExperimentConfig {
        ExperimentConfig {
            spec: self.systems[index].clone(),
            t_grid: vec![],
            epsilon: self.epsilon,
            delta: self.delta,
            n_trials: self.n_trials,
            master_seed: derive_seed(self.master_seed, &[index as u64]),
            constant_c: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub system: usize,
    pub minimal_t: usize,
    pub failures: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProbe {
    pub c: f64,
    pub passed: bool,
    pub outcomes: Vec<ProbeOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Smallest passing constant found; `None` when even `c_high` fails.
    pub constant: Option<f64>,
    /// Largest constant seen failing (0 if none did).
    pub bracket_low: f64,
    /// Smallest constant seen passing.
    pub bracket_high: Option<f64>,
    pub probes: Vec<CalibrationProbe>,
}

/// `c max{1/eps^2, J(A)^2} (log(1/delta) + d)`.
pub fn required_lambda_min(spec: &SystemSpec, epsilon: f64, delta: f64, c: f64) -> Result<f64> {
    let j = series_bound(spec.a(), SERIES_TOL)?;
    Ok(c * (1.0 / (epsilon * epsilon)).max(j * j) * ((1.0 / delta).ln() + spec.dim() as f64))
}

/// Bisection in `log c` for the smallest constant whose sample-complexity
/// horizon keeps the empirical failure frequency at or below `delta` for
/// every system of the family.
pub fn calibrate_constant(cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    let mut cache: HashMap<(usize, usize), ProbeOutcome> = HashMap::new();
    let mut probes = Vec::new();
    let mut probe = |c: f64| -> Result<bool> {
        let mut outcomes = Vec::with_capacity(cfg.systems.len());
        for (i, spec) in cfg.systems.iter().enumerate() {
            let required = required_lambda_min(spec, cfg.epsilon, cfg.delta, c)?;
            let t = minimal_horizon(spec.a(), required, cfg.t_max)?;
            let outcome = match cache.get(&(i, t)) {
                Some(o) => o.clone(),
                None => {
                    let mut sc = cfg.system_config(i);
                    sc.constant_c = c;
                    let batch = pac_experiment(&sc, t)?;
                    let o = ProbeOutcome {
                        system: i,
                        minimal_t: t,
                        failures: batch.failures,
                        frequency: batch.frequency,
                    };
                    cache.insert((i, t), o.clone());
                    o
                }
            };
            outcomes.push(outcome);
        }
        let passed = outcomes.iter().all(|o| o.frequency <= cfg.delta);
        probes.push(CalibrationProbe { c, passed, outcomes });
        Ok(passed)
    };

    if !probe(cfg.c_high)? {
        return Ok(CalibrationResult {
            constant: None,
            bracket_low: cfg.c_high,
            bracket_high: None,
            probes,
        });
    }
    if probe(cfg.c_low)? {
        return Ok(CalibrationResult {
            constant: Some(cfg.c_low),
            bracket_low: 0.0,
            bracket_high: Some(cfg.c_low),
            probes,
        });
    }
    let (mut lo, mut hi) = (cfg.c_low.ln(), cfg.c_high.ln());
    for _ in 0..cfg.max_steps {
        let mid = 0.5 * (lo + hi);
        if probe(mid.exp())? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let c_hi = hi.exp();
    Ok(CalibrationResult {
        constant: Some(c_hi),
        bracket_low: lo.exp(),
        bracket_high: Some(c_hi),
        probes,
    })
}

/// `||A_hat - A||` for a batch of seeds, without the diagnostics.
pub fn error_samples(spec: &SystemSpec, t: usize, master_seed: u64, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let traj = simulate(spec, t, trial_seed(master_seed, t, i))?;
            let est = estimator::ols(&traj)?;
            Ok(op_norm(&(est.a_hat - spec.a())))
        })
        .collect()
}
