//! Covariates-spectrum machinery: isometry defect and the singular-value
//! sandwich it implies, sphere nets and net-based operator-norm bounds,
//! the chaos representation of `||XMu||^2` and Hanson-Wright tail trials.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian::{toeplitz_matrix, TOEPLITZ_CAP};
use crate::linalg::{self, op_norm, singular_values_desc};
use crate::lti::{NoiseFamily, Trajectory};
use crate::seed::{derive_seed, rng_from_seed};

/// Relative slack on the singular-value sandwich, absorbing rounding in
/// the eigen- and singular-value solvers.
pub const SANDWICH_SLACK: f64 = 1e-12;

/// `eps` solving `max(eps, eps^2) = defect`.
pub fn implied_epsilon(defect: f64) -> f64 {
    if defect <= 1.0 {
        defect
    } else {
        defect.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    /// `||(XM)^T XM - I||`.
    pub defect: f64,
    /// `s_1(X) >= ... >= s_d(X)`.
    pub singulars: Vec<f64>,
    /// `s_1(M) = ||M||`.
    pub whitener_s1: f64,
    /// `s_d(M)`.
    pub whitener_sd: f64,
    pub epsilon_implied: f64,
    /// `(1 - eps) / ||M||`.
    pub predicted_low: f64,
    /// `(1 + eps) / s_d(M)`.
    pub predicted_high: f64,
    pub containment: bool,
}

impl IsometryReport {
    pub fn s_max(&self) -> f64 {
        self.singulars[0]
    }

    pub fn s_min(&self) -> f64 {
        *self.singulars.last().expect("d >= 1")
    }

    /// Does the sandwich `(1-eps)/s_1(M) <= s_d(X) <= s_1(X) <= (1+eps)/s_d(M)` hold?
    pub fn sandwich_holds(&self, eps: f64) -> bool {
        sandwich(self.s_min(), self.s_max(), self.whitener_s1, self.whitener_sd, eps)
    }
}

fn sandwich(s_min: f64, s_max: f64, m_s1: f64, m_sd: f64, eps: f64) -> bool {
    let low = (1.0 - eps) / m_s1;
    let high = (1.0 + eps) / m_sd;
    low <= s_min + SANDWICH_SLACK * s_min.abs().max(low.abs())
        && s_max <= high + SANDWICH_SLACK * high.abs()
}

pub fn isometry_defect(x: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<IsometryReport> {
    let d = linalg::ensure_square(m, "whitener M")?;
    if x.ncols() != d {
        return Err(Error::invalid(format!(
            "X has {} columns but M is {d}x{d}",
            x.ncols()
        )));
    }
    if x.nrows() < d {
        return Err(Error::invalid(format!("X must have at least d = {d} rows")));
    }
    let xm = x * m;
    let defect = linalg::sym_op_norm(&(xm.tr_mul(&xm) - DMatrix::identity(d, d)));
    let singulars = singular_values_desc(x);
    let ms = singular_values_desc(m);
    let (m_s1, m_sd) = (ms[0], ms[d - 1]);
    if !(m_sd > 0.0) {
        return Err(Error::invalid("M must be full rank"));
    }
    let eps = implied_epsilon(defect);
    let s_min = singulars[d - 1];
    Ok(IsometryReport {
        defect,
        containment: sandwich(s_min, singulars[0], m_s1, m_sd, eps),
        singulars,
        whitener_s1: m_s1,
        whitener_sd: m_sd,
        epsilon_implied: eps,
        predicted_low: (1.0 - eps) / m_s1,
        predicted_high: (1.0 + eps) / m_sd,
    })
}

/// [`isometry_defect`] from the Gram matrix `X^T X`; singular values of `X`
/// are the square roots of its eigenvalues.
pub fn isometry_defect_from_gram(gram: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<IsometryReport> {
    let d = linalg::ensure_square(m, "whitener M")?;
    if gram.shape() != (d, d) {
        return Err(Error::invalid(format!("X^T X must be {d}x{d}")));
    }
    let defect = linalg::sym_op_norm(&(m * gram * m - DMatrix::identity(d, d)));
    let mut singulars: Vec<f64> =
        linalg::sym_eigenvalues(gram).iter().map(|l| l.max(0.0).sqrt()).collect();
    singulars.sort_by(|a, b| b.total_cmp(a));
    let ms = singular_values_desc(m);
    let (m_s1, m_sd) = (ms[0], ms[d - 1]);
    if !(m_sd > 0.0) {
        return Err(Error::invalid("M must be full rank"));
    }
    let eps = implied_epsilon(defect);
    Ok(IsometryReport {
        defect,
        containment: sandwich(singulars[d - 1], singulars[0], m_s1, m_sd, eps),
        singulars,
        whitener_s1: m_s1,
        whitener_sd: m_sd,
        epsilon_implied: eps,
        predicted_low: (1.0 - eps) / m_s1,
        predicted_high: (1.0 + eps) / m_sd,
    })
}

/// Two-sided spectrum event at level `eps` with sub-gaussian norm `k`:
/// `(1 - K^2 eps)/||M|| <= s_d(X)` and `s_1(X) <= (1 + K^2 eps)/s_d(M)`.
pub fn spectrum_event(report: &IsometryReport, k: f64, eps: f64) -> bool {
    report.sandwich_holds(k * k * eps)
}

/// Net dimensions above this are refused.
pub const MAX_NET_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Probes per greedy round; construction stops after a clean round.
    pub round_probes: usize,
    /// Fresh probes used to certify the covering radius.
    pub verify_probes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { round_probes: 20_000, verify_probes: 100_000 }
    }
}

/// A greedily built `eps`-net of the unit sphere `S^{d-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereNet {
    pub d: usize,
    pub eps: f64,
    #[serde(with = "linalg::serde_vecs")]
    pub points: Vec<DVector<f64>>,
    /// Largest distance from a verification probe to its nearest net point.
    pub verified_radius: f64,
    pub verify_probes: usize,
    /// `(1 + 2/eps)^d`.
    pub cardinality_cap: f64,
    /// Set when `eps >= 1` and `d > 1`.
    pub large_radius: bool,
}

impl SphereNet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Wrap explicit unit vectors; the radius is certified with fresh probes.
    pub fn from_points(points: Vec<DVector<f64>>, eps: f64, probes: usize, seed: u64) -> Result<Self> {
        let d = points.first().map(|p| p.len()).ok_or_else(|| Error::invalid("empty net"))?;
        if points.iter().any(|p| p.len() != d || (p.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::invalid("net points must be unit vectors of equal dimension"));
        }
        let flat = Flat::new(d, &points);
        let verified_radius = flat.covering_radius(probes, seed);
        Ok(SphereNet {
            d,
            eps,
            points,
            verified_radius,
            verify_probes: probes,
            cardinality_cap: (1.0 + 2.0 / eps).powi(d as i32),
            large_radius: eps >= 1.0 && d > 1,
        })
    }
}

/// Uniform direction on `S^{d-1}`.
pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

struct Flat {
    d: usize,
    data: Vec<f64>,
}

impl Flat {
    fn new(d: usize, points: &[DVector<f64>]) -> Self {
        Flat { d, data: points.iter().flat_map(|p| p.iter().copied()).collect() }
    }

    fn push(&mut self, p: &DVector<f64>) {
        self.data.extend(p.iter());
    }

    fn max_dot(&self, p: &[f64]) -> f64 {
        self.data
            .chunks_exact(self.d)
            .map(|q| q.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Distance from a unit vector to the nearest point.
    fn distance(&self, p: &[f64]) -> f64 {
        (2.0 - 2.0 * self.max_dot(p)).max(0.0).sqrt()
    }

    fn covering_radius(&self, probes: usize, seed: u64) -> f64 {
        (0..probes)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
                let p = random_unit(self.d, &mut rng);
                self.distance(p.as_slice())
            })
            .reduce(|| 0.0, f64::max)
    }
}

pub fn build_net(d: usize, eps: f64, seed: u64) -> Result<SphereNet> {
    build_net_with(d, eps, seed, NetConfig::default())
}

/// Greedy covering: any probe farther than `eps` from every chosen point
/// joins the net, until a full round of probes is covered and a fresh
/// verification sample finds no gap. Chosen points are pairwise more than
/// `eps` apart, which caps the size at `(1 + 2/eps)^d`.
pub fn build_net_with(d: usize, eps: f64, seed: u64, cfg: NetConfig) -> Result<SphereNet> {
    if d == 0 {
        return Err(Error::invalid("net dimension must be >= 1"));
    }
    if d > MAX_NET_DIM {
        return Err(Error::Capacity(format!(
            "net dimension {d} exceeds {MAX_NET_DIM}; sizes grow like (1 + 2/eps)^d"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("net radius must be positive, got {eps}")));
    }
    if cfg.round_probes == 0 || cfg.verify_probes == 0 {
        return Err(Error::invalid("probe counts must be positive"));
    }
    let cap = (1.0 + 2.0 / eps).powi(d as i32);
    if d == 1 {
        // S^0 = {-1, +1}
        let points = vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)];
        return Ok(SphereNet {
            d,
            eps,
            points,
            verified_radius: 0.0,
            verify_probes: 0,
            cardinality_cap: cap,
            large_radius: false,
        });
    }
    let threshold = 1.0 - eps * eps / 2.0; // dot above this <=> distance below eps
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let first = random_unit(d, &mut rng);
    let mut points = vec![first.clone()];
    let mut flat = Flat::new(d, &points);
    let mut verify_round = 1u64;
    loop {
        loop {
            let mut added = false;
            for _ in 0..cfg.round_probes {
                let p = random_unit(d, &mut rng);
                if flat.max_dot(p.as_slice()) < threshold {
                    flat.push(&p);
                    points.push(p);
                    added = true;
                }
            }
            if !added {
                break;
            }
        }
        // Fresh, independently seeded probes; gaps found here join the net.
        let vseed = derive_seed(seed, &[1, verify_round]);
        let gaps: Vec<DVector<f64>> = (0..cfg.verify_probes)
            .into_par_iter()
            .filter_map(|i| {
                let mut r = rng_from_seed(derive_seed(vseed, &[i as u64]));
                let p = random_unit(d, &mut r);
                (flat.max_dot(p.as_slice()) < threshold).then_some(p)
            })
            .collect();
        if gaps.is_empty() {
            let verified_radius = flat.covering_radius(cfg.verify_probes, vseed);
            return Ok(SphereNet {
                d,
                eps,
                points,
                verified_radius,
                verify_probes: cfg.verify_probes,
                cardinality_cap: cap,
                large_radius: eps >= 1.0,
            });
        }
        for p in gaps {
            if flat.max_dot(p.as_slice()) < threshold {
                flat.push(&p);
                points.push(p);
            }
        }
        verify_round += 1;
    }
}

/// Which variational form of the operator norm the net is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetNormMode {
    /// `max_x ||Wx|| / (1 - eps)`, any `W`.
    General,
    /// `max_x |x^T W x| / (1 - 2 eps)`, symmetric `W`, `eps < 1/2`.
    Symmetric,
}

/// Upper bound on `||W||` from its values on a net.
pub fn net_opnorm_bound(w: &DMatrix<f64>, net: &SphereNet, mode: NetNormMode) -> Result<f64> {
    if w.ncols() != net.d {
        return Err(Error::invalid(format!(
            "W has {} columns, net has dimension {}",
            w.ncols(),
            net.d
        )));
    }
    match mode {
        NetNormMode::General => {
            if net.eps >= 1.0 {
                return Err(Error::invalid("general net bound needs eps < 1"));
            }
            let best = net.points.iter().map(|x| (w * x).norm()).fold(0.0, f64::max);
            Ok(best / (1.0 - net.eps))
        }
        NetNormMode::Symmetric => {
            if !w.is_square() || (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
                return Err(Error::invalid("symmetric net bound needs a symmetric W"));
            }
            if net.eps >= 0.5 {
                return Err(Error::invalid(format!(
                    "symmetric net bound needs eps < 1/2, got {}",
                    net.eps
                )));
            }
            let best = net.points.iter().map(|x| x.dot(&(w * x)).abs()).fold(0.0, f64::max);
            Ok(best / (1.0 - 2.0 * net.eps))
        }
    }
}

/// Agreement tolerance between the two routes to `||XMu||^2`.
pub const CHAOS_AGREEMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    /// `|| X M u ||^2`.
    pub direct_norm_sq: f64,
    /// `| ||XMu||^2 - 1 |`.
    pub statistic: f64,
    /// `|| sigma_{Mu}^T Gamma xi ||^2`, absent when the Toeplitz route was skipped.
    pub chaos_norm_sq: Option<f64>,
    /// `|| sigma_{Mu}^T Gamma ||_F^2`.
    pub frobenius_sq: Option<f64>,
    /// `| ||sigma^T Gamma xi||^2 - ||sigma^T Gamma||_F^2 |`.
    pub chaos_statistic: Option<f64>,
    /// Set when `t * d` exceeded the Toeplitz cap.
    pub direct_only: bool,
}

/// `| ||XMu||^2 - 1 |` computed from the trajectory and again through
/// `vec(X^T) = Gamma xi` with `xi = (x_1, eta_2, ..., eta_t)`.
pub fn chaos_statistic(
    traj: &Trajectory,
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
    u: &DVector<f64>,
) -> Result<ChaosReport> {
    let d = traj.d;
    let t = traj.t;
    if a.shape() != (d, d) || m.shape() != (d, d) || u.len() != d {
        return Err(Error::invalid("A, M and u must match the trajectory dimension"));
    }
    if ((u.norm() - 1.0).abs()) > 1e-12 {
        return Err(Error::invalid("u must be a unit vector"));
    }
    let mu = m * u;
    let direct_norm_sq = (traj.covariates() * &mu).norm_squared();
    let statistic = (direct_norm_sq - 1.0).abs();
    if t * d > TOEPLITZ_CAP {
        return Ok(ChaosReport {
            direct_norm_sq,
            statistic,
            chaos_norm_sq: None,
            frobenius_sq: None,
            chaos_statistic: None,
            direct_only: true,
        });
    }

    let record = traj
        .noise_record
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory has no noise record"))?;
    let mut xi = DVector::zeros(t * d);
    xi.rows_mut(0, d).copy_from(&traj.states[0]);
    for s in 1..t {
        xi.rows_mut(s * d, d).copy_from(&record[s - 1]);
    }
    let gamma = toeplitz_matrix(a, t);
    let mut sigma = DMatrix::zeros(t * d, t);
    for s in 0..t {
        sigma.view_mut((s * d, s), (d, 1)).copy_from(&mu);
    }
    let proj = sigma.tr_mul(&gamma);
    let chaos_norm_sq = (&proj * xi).norm_squared();
    let frobenius_sq = proj.norm_squared();
    let tol = CHAOS_AGREEMENT_TOL * direct_norm_sq.max(1.0);
    if (chaos_norm_sq - direct_norm_sq).abs() > tol {
        return Err(Error::Internal(format!(
            "chaos route disagrees: {chaos_norm_sq} vs direct {direct_norm_sq}"
        )));
    }
    Ok(ChaosReport {
        direct_norm_sq,
        statistic,
        chaos_norm_sq: Some(chaos_norm_sq),
        frobenius_sq: Some(frobenius_sq),
        chaos_statistic: Some((chaos_norm_sq - frobenius_sq).abs()),
        direct_only: false,
    })
}

/// Empirical tail of `| ||B xi||^2 - ||B||_F^2 | > eps ||B||_F^2` against
/// `2 exp(-c min(eps^2/K^4, eps/K^2) ||B||_F^2 / ||B||^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwTail {
    pub eps: f64,
    pub n_trials: usize,
    pub exceedances: usize,
    pub empirical: f64,
    /// Binomial standard error `sqrt(p(1-p)/n)` at the empirical frequency.
    pub std_error: f64,
    pub bound: f64,
    pub k: f64,
    pub c: f64,
    pub frobenius_sq: f64,
    pub op_norm_sq: f64,
}

/// Relative deviations `| ||B xi||^2 - ||B||_F^2 | / ||B||_F^2`, one per trial.
pub fn hw_deviations(b: &DMatrix<f64>, noise: &NoiseFamily, n_trials: usize, seed: u64) -> Vec<f64> {
    let fro = b.norm_squared();
    (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
            let xi = noise.sample_vector(b.ncols(), &mut rng);
            ((b * xi).norm_squared() - fro).abs() / fro
        })
        .collect()
}

pub fn hanson_wright_rhs(eps: f64, k: f64, c: f64, fro_sq: f64, op_sq: f64) -> f64 {
    let k2 = k * k;
    (2.0 * (-c * (eps * eps / (k2 * k2)).min(eps / k2) * fro_sq / op_sq).exp()).min(1.0)
}

pub fn hw_tail_estimate(
    b: &DMatrix<f64>,
    noise: &NoiseFamily,
    eps: f64,
    n_trials: usize,
    seed: u64,
    c: f64,
) -> Result<HwTail> {
    Ok(hw_tail_grid(b, noise, &[eps], n_trials, seed, c)?.remove(0))
}

/// Tail estimates on an `eps` grid sharing the same draws, so the
/// empirical tail is exactly nonincreasing along the grid.
pub fn hw_tail_grid(
    b: &DMatrix<f64>,
    noise: &NoiseFamily,
    eps_grid: &[f64],
    n_trials: usize,
    seed: u64,
    c: f64,
) -> Result<Vec<HwTail>> {
    if n_trials == 0 {
        return Err(Error::invalid("n_trials must be >= 1"));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("eps must be positive"));
    }
    let fro = b.norm_squared();
    if !(fro > 0.0) {
        return Err(Error::invalid("B must be nonzero"));
    }
    let op = op_norm(b).powi(2);
    let devs = hw_deviations(b, noise, n_trials, seed);
    Ok(eps_grid
        .iter()
        .map(|&eps| {
            let exceedances = devs.iter().filter(|&&v| v > eps).count();
            let p = exceedances as f64 / n_trials as f64;
            HwTail {
                eps,
                n_trials,
                exceedances,
                empirical: p,
                std_error: (p * (1.0 - p) / n_trials as f64).sqrt(),
                bound: hanson_wright_rhs(eps, noise.psi2, c, fro, op),
                k: noise.psi2,
                c,
                frobenius_sq: fro,
                op_norm_sq: op,
            }
        })
        .collect())
}
