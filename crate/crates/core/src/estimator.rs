//! Ordinary least squares, its exact error identity and the
//! self-normalized statistic `||E^T X (X^T X + S)^{-1/2}||`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, op_norm};
use crate::lti::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsEstimate {
    #[serde(with = "linalg::serde_rows")]
    pub a_hat: DMatrix<f64>,
    /// `X^T X = sum_{s=1}^{t} x_s x_s^T`.
    #[serde(with = "linalg::serde_rows")]
    pub gram: DMatrix<f64>,
    pub gram_rank: usize,
    pub pinv_threshold_used: f64,
    /// Set when the Gram matrix is rank deficient.
    pub degenerate: bool,
    /// `||A_hat - A||` when the true dynamics were supplied.
    #[serde(default)]
    pub error_opnorm: Option<f64>,
}

/// `sum_s x_{s+1} x_s^T` and `sum_s x_s x_s^T` over `s = 1..t`.
///
/// With `x_0 = 0` the `s = 0` terms vanish.
pub(crate) fn moment_sums(traj: &Trajectory) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = traj.d;
    let mut cross = DMatrix::zeros(d, d);
    let mut gram = DMatrix::zeros(d, d);
    for w in traj.states.windows(2) {
        cross.ger(1.0, &w[1], &w[0], 1.0);
        gram.ger(1.0, &w[0], &w[0], 1.0);
    }
    (cross, linalg::symmetrize(&gram))
}

/// `A_hat = (sum x_{s+1} x_s^T)(sum x_s x_s^T)^+`.
pub fn ols(traj: &Trajectory) -> Result<OlsEstimate> {
    traj.validate()?;
    let (cross, gram) = moment_sums(traj);
    let p = linalg::pinv_sym(&gram);
    Ok(OlsEstimate {
        a_hat: cross * &p.pinv,
        degenerate: p.rank < traj.d,
        gram_rank: p.rank,
        pinv_threshold_used: p.threshold,
        gram,
        error_opnorm: None,
    })
}

/// [`ols`] plus the operator-norm error against the true dynamics.
pub fn ols_with_truth(traj: &Trajectory, a: &DMatrix<f64>) -> Result<OlsEstimate> {
    let mut est = ols(traj)?;
    est.error_opnorm = Some(estimation_error(&est.a_hat, a)?);
    Ok(est)
}

/// `||A_hat - A||`.
pub fn estimation_error(a_hat: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    if a_hat.shape() != a.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a_hat.shape(),
            a.shape()
        )));
    }
    Ok(op_norm(&(a_hat - a)))
}

/// `E^T X (X^T X)^+`, the right-hand side of the error identity.
pub fn noise_driven_error(traj: &Trajectory) -> Result<DMatrix<f64>> {
    let e = traj.noise_matrix()?;
    let x = traj.covariates();
    let p = linalg::pinv_sym(&x.tr_mul(&x));
    Ok(e.tr_mul(&x) * p.pinv)
}

/// `||((A_hat - A) - E^T X (X^T X)^+) P||` with `P` the projector onto the
/// row space of `X`.
///
/// `P = I` when the Gram matrix has full rank, which is the plain identity.
/// On rank-deficient paths `A_hat` carries no information about `A` outside
/// the row space, so only the projected identity can hold.
pub fn error_identity_check(traj: &Trajectory, a: &DMatrix<f64>) -> Result<f64> {
    let rhs = noise_driven_error(traj)?;
    let est = ols(traj)?;
    if a.shape() != est.a_hat.shape() {
        return Err(Error::invalid("true dynamics has the wrong shape"));
    }
    let p = linalg::pinv_sym(&est.gram);
    Ok(op_norm(&((est.a_hat - a - rhs) * p.range_projector)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfNormStat {
    #[serde(with = "linalg::serde_rows")]
    pub s: DMatrix<f64>,
    /// `||E^T X (X^T X + S)^{-1/2}||`.
    pub value: f64,
    /// `sqrt(16 c K^2 log(5^d det((X^T X + S) S^{-1})^{1/2} / delta))`.
    pub bound: f64,
    /// `log det((X^T X + S) S^{-1})`.
    pub log_det_ratio: f64,
    pub delta: f64,
}

impl SelfNormStat {
    pub fn exceeds_bound(&self) -> bool {
        self.value > self.bound
    }
}

/// Square root of the self-normalized tail level at confidence `delta`.
pub fn self_normalized_threshold(d: usize, log_det_ratio: f64, delta: f64, k: f64, c: f64) -> f64 {
    let log_arg = d as f64 * 5f64.ln() + 0.5 * log_det_ratio - delta.ln();
    (16.0 * c * k * k * log_arg).max(0.0).sqrt()
}

/// `sum_{s=1}^{t} eta_{s+1} x_s^T = E^T X`.
pub fn noise_cross_moment(traj: &Trajectory) -> Result<DMatrix<f64>> {
    let rec = traj
        .noise_record
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory has no noise record"))?;
    if rec.len() != traj.t {
        return Err(Error::invalid("noise record length does not match the horizon"));
    }
    let mut out = DMatrix::zeros(traj.d, traj.d);
    for (eta, x) in rec.iter().zip(&traj.states) {
        out.ger(1.0, eta, x, 1.0);
    }
    Ok(out)
}

fn check_regularizer(s: &DMatrix<f64>, d: usize) -> Result<nalgebra::DVector<f64>> {
    if s.shape() != (d, d) {
        return Err(Error::invalid(format!("S must be {d}x{d}")));
    }
    if (s - s.transpose()).amax() > 1e-9 * s.amax().max(1.0) {
        return Err(Error::invalid("S must be symmetric"));
    }
    let eigs = linalg::sym_eigenvalues(s);
    if !(eigs.min() > 0.0) {
        return Err(Error::invalid(format!(
            "S must be positive definite (lambda_min = {:e})",
            eigs.min()
        )));
    }
    Ok(eigs)
}

/// Self-normalized statistic from `E^T X` and `X^T X`.
pub fn self_normalized_from_moments(
    noise_cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    s: &DMatrix<f64>,
    delta: f64,
    k: f64,
    c: f64,
) -> Result<SelfNormStat> {
    let d = gram.nrows();
    let s_eigs = check_regularizer(s, d)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0,1)"));
    }
    let regularized = gram + s;
    let inv_sqrt = linalg::inv_sqrt_spd(&regularized)?;
    let value = op_norm(&(noise_cross * inv_sqrt));
    let log_det_ratio = linalg::sym_eigenvalues(&regularized).iter().map(|l| l.ln()).sum::<f64>()
        - s_eigs.iter().map(|l| l.ln()).sum::<f64>();
    Ok(SelfNormStat {
        s: s.clone(),
        value,
        bound: self_normalized_threshold(d, log_det_ratio, delta, k, c),
        log_det_ratio,
        delta,
    })
}

pub fn self_normalized_stat(
    traj: &Trajectory,
    s: &DMatrix<f64>,
    delta: f64,
    k: f64,
    c: f64,
) -> Result<SelfNormStat> {
    check_regularizer(s, traj.d)?;
    let x = traj.covariates();
    let e = traj.noise_matrix()?;
    self_normalized_from_moments(&e.tr_mul(&x), &x.tr_mul(&x), s, delta, k, c)
}
