//! Deterministic system quantities: finite-time controllability Gramians,
//! the Gramian sum and its whitener, block-Toeplitz norms, the series
//! bound `J(A) = sum_s ||A^s||`, and the evaluated sample-complexity
//! conditions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, ensure_square, op_norm};
use crate::lti::{psi2_norm, spectral_radius, NoiseFamily, NoiseKind};

/// Default cap on `t * d` for assembling the block-Toeplitz matrix.
pub const TOEPLITZ_CAP: usize = 2000;
/// Default number of grid points for the symbol supremum.
pub const SYMBOL_GRID: usize = 4096;
/// Grid doubling must move the supremum by less than this.
pub const SYMBOL_REFINE_TOL: f64 = 1e-6;
/// Default truncation tolerance for `J(A)`.
pub const SERIES_TOL: f64 = 1e-10;
/// Matrix powers computed before `series_bound` gives up.
pub const SERIES_MAX_TERMS: usize = 1_000_000;

/// `Gamma_s(A) = sum_{k=0}^{s} A^k (A^k)^T`.
pub fn finite_gramian(a: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let d = a.nrows();
    let mut power = DMatrix::identity(d, d);
    let mut acc = DMatrix::identity(d, d);
    for _ in 0..s {
        power = a * &power;
        acc += &power * power.transpose();
    }
    acc
}

/// `sum_{s=0}^{t-1} Gamma_s(A)`, accumulated in a single pass.
pub fn gramian_sum_matrix(a: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let d = a.nrows();
    let mut power = DMatrix::identity(d, d);
    let mut gamma = DMatrix::identity(d, d);
    let mut sum = DMatrix::zeros(d, d);
    for s in 0..t {
        if s > 0 {
            power = a * &power;
            gamma += &power * power.transpose();
        }
        sum += &gamma;
    }
    linalg::symmetrize(&sum)
}

/// `lambda_min(sum_{s=0}^{t-1} Gamma_s(A))`; zero for `t = 0`.
pub fn gramian_lambda_min(a: &DMatrix<f64>, t: usize) -> f64 {
    if t == 0 {
        return 0.0;
    }
    linalg::lambda_min(&gramian_sum_matrix(a, t))
}

/// The Gramian sum, its smallest eigenvalue and the whitener
/// `M = (sum_{s<t} Gamma_s)^{-1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramianSummary {
    pub t: usize,
    #[serde(with = "linalg::serde_rows")]
    pub gramian_sum: DMatrix<f64>,
    pub lambda_min: f64,
    #[serde(with = "linalg::serde_rows")]
    pub whitener: DMatrix<f64>,
    /// `||M|| = lambda_min^{-1/2}`.
    pub whitener_norm: f64,
}

impl GramianSummary {
    /// `M^{-2}`, i.e. the Gramian sum itself.
    pub fn inverse_square_whitener(&self) -> &DMatrix<f64> {
        &self.gramian_sum
    }
}

pub fn gramian_sum(a: &DMatrix<f64>, t: usize) -> Result<GramianSummary> {
    ensure_square(a, "dynamics matrix A")?;
    if t == 0 {
        return Err(Error::invalid("horizon t must be >= 1"));
    }
    let sum = gramian_sum_matrix(a, t);
    let eig = linalg::sym_eigen(&sum);
    let lambda_min = eig.eigenvalues.min();
    if !(lambda_min > 0.0) {
        return Err(Error::Internal(format!(
            "Gramian sum is not positive definite (lambda_min = {lambda_min:e})"
        )));
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(linalg::EIGEN_FLOOR).sqrt());
    let q = &eig.eigenvectors;
    let whitener = linalg::symmetrize(&(q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose()));
    Ok(GramianSummary {
        t,
        whitener_norm: 1.0 / lambda_min.sqrt(),
        gramian_sum: sum,
        lambda_min,
        whitener,
    })
}

/// Certified evaluation of `J(A) = sum_{s>=0} ||A^s||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesBound {
    /// Partial sum plus certified tail; an upper bound on `J(A)`.
    pub value: f64,
    pub partial_sum: f64,
    pub tail_bound: f64,
    pub terms: usize,
    /// First power with `||A^{S0}|| <= 1/2`, the block length of the tail.
    pub block: usize,
}

/// Upper bound on `J(A)` within `tol` of the true value.
///
/// After the first `S0` with `q = ||A^{S0}|| <= 1/2`, every later power
/// satisfies `||A^{N + k S0 + j}|| <= q^k ||A^{N+j}||`, so the tail from `N`
/// is at most `(sum_{j<S0} ||A^{N+j}||) / (1 - q)`.
pub fn series_bound_detailed(a: &DMatrix<f64>, tol: f64) -> Result<SeriesBound> {
    let d = ensure_square(a, "dynamics matrix A")?;
    ensure_finite(a, "dynamics matrix A")?;
    if !(tol > 0.0) {
        return Err(Error::invalid("series tolerance must be positive"));
    }
    let mut norms = vec![1.0];
    let mut power = DMatrix::identity(d, d);
    let next_norm = |power: &mut DMatrix<f64>| {
        *power = a * &*power;
        op_norm(power)
    };

    let block = loop {
        if norms.len() >= SERIES_MAX_TERMS {
            return Err(Error::NonConvergence(format!(
                "no power with ||A^s|| <= 1/2 among the first {SERIES_MAX_TERMS}"
            )));
        }
        let n = next_norm(&mut power);
        norms.push(n);
        if n <= 0.5 {
            break norms.len() - 1;
        }
    };
    let q = norms[block];

    // Invariant: norms holds ||A^0||..||A^{n + block - 1}||; window = sum of the last `block`.
    let mut n = 1usize;
    while norms.len() < n + block {
        norms.push(next_norm(&mut power));
    }
    let mut partial = norms[0];
    let mut window: f64 = norms[n..n + block].iter().sum();
    loop {
        let tail = window / (1.0 - q);
        if tail <= tol {
            return Ok(SeriesBound {
                value: partial + tail,
                partial_sum: partial,
                tail_bound: tail,
                terms: n,
                block,
            });
        }
        if norms.len() >= SERIES_MAX_TERMS {
            return Err(Error::NonConvergence(format!(
                "tail bound {tail:e} above tolerance after {SERIES_MAX_TERMS} terms"
            )));
        }
        let fresh = next_norm(&mut power);
        norms.push(fresh);
        partial += norms[n];
        window += fresh - norms[n];
        n += 1;
    }
}

/// `J(A)`, see [`series_bound_detailed`].
pub fn series_bound(a: &DMatrix<f64>, tol: f64) -> Result<f64> {
    Ok(series_bound_detailed(a, tol)?.value)
}

/// Lower block-Toeplitz matrix with blocks `I, A, ..., A^{t-1}`.
pub fn toeplitz_matrix(a: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let d = a.nrows();
    let mut out = DMatrix::zeros(t * d, t * d);
    let mut power = DMatrix::identity(d, d);
    for lag in 0..t {
        if lag > 0 {
            power = a * &power;
        }
        for col in 0..t - lag {
            let row = col + lag;
            out.view_mut((row * d, col * d), (d, d)).copy_from(&power);
        }
    }
    out
}

/// `||Gamma||` from the assembled matrix, with the default size cap.
pub fn toeplitz_norm_explicit(a: &DMatrix<f64>, t: usize) -> Result<f64> {
    toeplitz_norm_explicit_capped(a, t, TOEPLITZ_CAP)
}

pub fn toeplitz_norm_explicit_capped(a: &DMatrix<f64>, t: usize, cap: usize) -> Result<f64> {
    let d = ensure_square(a, "dynamics matrix A")?;
    ensure_finite(a, "dynamics matrix A")?;
    if t == 0 {
        return Err(Error::invalid("horizon t must be >= 1"));
    }
    if t * d > cap {
        return Err(Error::Capacity(format!(
            "block-Toeplitz size t*d = {} exceeds cap {cap}",
            t * d
        )));
    }
    let gamma = toeplitz_matrix(a, t);
    let residual = inverse_residual(&gamma, a, t);
    if !(residual <= 1e-9 * (1.0 + gamma.amax()) * t as f64) {
        return Err(Error::Internal(format!(
            "block-bidiagonal inverse does not match the assembled matrix (residual {residual:e})"
        )));
    }
    Ok((1.0 / inverse_gram_lambda_min(a, t)).sqrt())
}

/// `max |Gamma B - I|` entrywise, where `B` is block lower bidiagonal with
/// `I` on the diagonal and `-A` below it.
fn inverse_residual(gamma: &DMatrix<f64>, a: &DMatrix<f64>, t: usize) -> f64 {
    let d = a.nrows();
    let n = t * d;
    let mut worst = 0.0f64;
    for j in 0..t {
        let mut col = gamma.columns(j * d, d).into_owned();
        if j + 1 < t {
            col -= gamma.columns((j + 1) * d, d) * a;
        }
        for r in 0..n {
            for c in 0..d {
                let target = if r == j * d + c { 1.0 } else { 0.0 };
                worst = worst.max((col[(r, c)] - target).abs());
            }
        }
    }
    worst
}

/// `lambda_min(B^T B)` for the block bidiagonal `B = Gamma^{-1}`.
///
/// `B^T B` is block tridiagonal with diagonal blocks `I + A^T A` (last
/// block `I`) and off-diagonal blocks `-A^T`, `-A`. Bisection on the
/// inertia of `B^T B - lambda I`, read off the block `LDL^T` recursion.
fn inverse_gram_lambda_min(a: &DMatrix<f64>, t: usize) -> f64 {
    let d = a.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let inner = &eye + a.tr_mul(a);
    let positive_definite = |lambda: f64| -> bool {
        let mut schur: Option<DMatrix<f64>> = None;
        for k in 0..t {
            let diag = if k + 1 < t { &inner } else { &eye };
            let mut block = diag - &eye * lambda;
            if let Some(prev_inv) = &schur {
                // -A (D_{k-1})^{-1} -A^T.
                block -= a * prev_inv * a.transpose();
            }
            match block.clone().cholesky() {
                Some(ch) => schur = Some(ch.inverse()),
                None => return false,
            }
        }
        true
    };
    let mut lo = 0.0;
    let mut hi = (1.0 + op_norm(a)).powi(2);
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if positive_definite(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Supremum of the matrix symbol over a grid, with its refinement record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolBound {
    pub value: f64,
    /// Grid size that passed the doubling check.
    pub grid_points: usize,
    /// `|sup_{2N} - sup_N|` at the accepted grid.
    pub refinement_delta: f64,
    /// Location of the maximizer in `[0, 1)`.
    pub argmax: f64,
}

struct Symbol {
    d: usize,
    /// Column-major `A^s`, concatenated.
    powers: Vec<f64>,
    t: usize,
}

/// Phasor recurrences are re-anchored with an exact `sin_cos` this often.
const PHASE_RESYNC: usize = 64;

impl Symbol {
    fn new(a: &DMatrix<f64>, t: usize) -> Self {
        let d = a.nrows();
        let mut powers = Vec::with_capacity(t * d * d);
        let mut p = DMatrix::identity(d, d);
        for s in 0..t {
            if s > 0 {
                p = a * &p;
            }
            powers.extend_from_slice(p.as_slice());
        }
        Symbol { d, powers, t }
    }

    /// `|| sum_s A^s e^{2 pi i s x} ||`.
    fn norm_at(&self, x: f64) -> f64 {
        let d = self.d;
        let dd = d * d;
        let mut re = vec![0.0; dd];
        let mut im = vec![0.0; dd];
        let (step_sin, step_cos) = (std::f64::consts::TAU * x).sin_cos();
        let (mut sin, mut cos) = (0.0, 1.0);
        for s in 0..self.t {
            if s % PHASE_RESYNC == 0 {
                (sin, cos) = (std::f64::consts::TAU * s as f64 * x).sin_cos();
            }
            let block = &self.powers[s * dd..(s + 1) * dd];
            for ((r, i), &p) in re.iter_mut().zip(im.iter_mut()).zip(block) {
                *r += p * cos;
                *i += p * sin;
            }
            (sin, cos) = (sin * step_cos + cos * step_sin, cos * step_cos - sin * step_sin);
        }
        if d == 1 {
            return re[0].hypot(im[0]);
        }
        let re = DMatrix::from_column_slice(d, d, &re);
        let im = DMatrix::from_column_slice(d, d, &im);
        // Real embedding [[Re, -Im], [Im, Re]] carries each singular value twice.
        let mut emb = DMatrix::zeros(2 * d, 2 * d);
        emb.view_mut((0, 0), (d, d)).copy_from(&re);
        emb.view_mut((d, d), (d, d)).copy_from(&re);
        emb.view_mut((d, 0), (d, d)).copy_from(&im);
        emb.view_mut((0, d), (d, d)).copy_from(&(-&im));
        op_norm(&emb)
    }

    /// Grid maximum over `k / n`, `k = 0..n`. For real `A` the symbol norm
    /// is symmetric about `x = 1/2`, so only half the grid is evaluated.
    fn grid_max(&self, n: usize) -> (f64, f64) {
        use rayon::prelude::*;
        (0..=n / 2)
            .into_par_iter()
            .map(|k| {
                let x = k as f64 / n as f64;
                (self.norm_at(x), x)
            })
            .reduce(|| (f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
    }

    /// Golden-section polish of a grid maximizer within one cell.
    fn polish(&self, center: f64, half_width: f64) -> (f64, f64) {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (center - half_width, center + half_width);
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let (mut f1, mut f2) = (self.norm_at(x1), self.norm_at(x2));
        for _ in 0..80 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = self.norm_at(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = self.norm_at(x1);
            }
        }
        if f1 >= f2 {
            (f1, x1)
        } else {
            (f2, x2)
        }
    }
}

/// `sup_x || sum_{s<t} A^s e^{2 pi i s x} ||` over a uniform grid of `[0, 1)`.
///
/// The grid is doubled until the supremum moves by less than
/// [`SYMBOL_REFINE_TOL`], then the best cell is polished by golden section.
pub fn toeplitz_norm_symbol_detailed(
    a: &DMatrix<f64>,
    t: usize,
    grid_points: usize,
) -> Result<SymbolBound> {
    ensure_square(a, "dynamics matrix A")?;
    ensure_finite(a, "dynamics matrix A")?;
    if grid_points < 2 {
        return Err(Error::invalid("symbol grid needs at least 2 points"));
    }
    if t == 0 {
        return Err(Error::invalid("horizon t must be >= 1"));
    }
    const MAX_GRID: usize = 1 << 24;
    let symbol = Symbol::new(a, t);
    let mut n = grid_points;
    let (mut best, mut argmax) = symbol.grid_max(n);
    let delta = loop {
        let (finer, finer_x) = symbol.grid_max(2 * n);
        let delta = (finer - best).abs();
        if finer > best {
            best = finer;
            argmax = finer_x;
        }
        n *= 2;
        if delta < SYMBOL_REFINE_TOL || n >= MAX_GRID {
            break delta;
        }
    };
    let (polished, px) = symbol.polish(argmax, 1.0 / n as f64);
    if polished > best {
        best = polished;
        argmax = px.rem_euclid(1.0);
    }
    Ok(SymbolBound { value: best, grid_points: n, refinement_delta: delta, argmax })
}

pub fn toeplitz_norm_symbol(a: &DMatrix<f64>, t: usize, grid_points: usize) -> Result<f64> {
    Ok(toeplitz_norm_symbol_detailed(a, t, grid_points)?.value)
}

/// The three routes to `||Gamma||` at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzInfo {
    pub t: usize,
    /// Present only when `t * d` is within the cap.
    pub explicit_norm: Option<f64>,
    pub symbol_bound: f64,
    pub symbol_grid_points: usize,
    pub series_bound: f64,
    pub series_tail_bound: f64,
}

impl ToeplitzInfo {
    /// Tightest available value for `||Gamma||`.
    pub fn best_norm(&self) -> f64 {
        self.explicit_norm.unwrap_or(self.symbol_bound)
    }
}

pub fn toeplitz_info(
    a: &DMatrix<f64>,
    t: usize,
    grid_points: usize,
    cap: usize,
    series_tol: f64,
) -> Result<ToeplitzInfo> {
    let explicit_norm = match toeplitz_norm_explicit_capped(a, t, cap) {
        Ok(v) => Some(v),
        Err(Error::Capacity(_)) => None,
        Err(e) => return Err(e),
    };
    let symbol = toeplitz_norm_symbol_detailed(a, t, grid_points)?;
    let series = series_bound_detailed(a, series_tol)?;
    Ok(ToeplitzInfo {
        t,
        explicit_norm,
        symbol_bound: symbol.value,
        symbol_grid_points: symbol.grid_points,
        series_bound: series.value,
        series_tail_bound: series.tail_bound,
    })
}

/// How the leading constant of the sample-complexity condition is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConstantMode {
    /// Use `c` as is.
    Absolute { c: f64 },
    /// `c = c' K^4`.
    Universal { c_prime: f64 },
}

impl ConstantMode {
    pub fn effective(&self, k: f64) -> f64 {
        match *self {
            ConstantMode::Absolute { c } => c,
            ConstantMode::Universal { c_prime } => c_prime * k.powi(4),
        }
    }
}

impl Default for ConstantMode {
    fn default() -> Self {
        ConstantMode::Absolute { c: 1.0 }
    }
}

/// Inputs to [`evaluate_conditions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default)]
    pub constant: ConstantMode,
    /// Sub-gaussian norm `K >= 1`.
    pub k: f64,
    pub t_max: usize,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Horizon at which the rate bound is evaluated; defaults to `minimal_t`.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Constants of the concentration lemma used by the proof-form condition.
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
}

fn default_grid() -> usize {
    SYMBOL_GRID
}

fn one() -> f64 {
    1.0
}

impl BoundQuery {
    pub fn new(epsilon: f64, delta: f64, c: f64) -> Self {
        BoundQuery {
            epsilon,
            delta,
            constant: ConstantMode::Absolute { c },
            k: 1.0,
            t_max: 10_000_000,
            grid_points: SYMBOL_GRID,
            horizon: None,
            c1: 1.0,
            c2: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0,1), got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        let c = match self.constant {
            ConstantMode::Absolute { c } => c,
            ConstantMode::Universal { c_prime } => c_prime,
        };
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!("constant must be positive, got {c}")));
        }
        if !(self.k >= 1.0 && self.k.is_finite()) {
            return Err(Error::invalid(format!("K must be >= 1, got {}", self.k)));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::invalid("c1 and c2 must be positive"));
        }
        if self.t_max == 0 {
            return Err(Error::invalid("t_max must be >= 1"));
        }
        Ok(())
    }
}

/// Every intermediate of the sample-complexity evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub d: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub constant_mode: ConstantMode,
    /// Effective leading constant after the `K^4` scaling, if any.
    pub c: f64,
    pub k: f64,
    pub spectral_radius: f64,
    /// `J(A)`.
    pub series_bound: f64,
    /// `c max{1/eps^2, J(A)^2} (log(1/delta) + d)`.
    pub required_lambda_min: f64,
    /// First horizon meeting the requirement.
    pub minimal_t: usize,
    pub lambda_min_at_minimal_t: f64,
    pub whitener_norm_at_minimal_t: f64,
    /// `||Gamma||` routes at `minimal_t`.
    pub toeplitz: ToeplitzInfo,
    /// The requirement with `||Gamma||^2` at `minimal_t` in place of `J(A)^2`.
    pub required_lambda_min_toeplitz: f64,
    pub rate_horizon: usize,
    pub lambda_min_at_rate_horizon: f64,
    /// `c sqrt((log(1/delta) + d) / lambda_min)` at `rate_horizon`.
    pub rate_bound: f64,
    /// `c (log(1/delta) + d) / eps^2`.
    pub lower_bound_lambda_min: f64,
    pub lower_bound_note: String,
    pub c1: f64,
    pub c2: f64,
    /// `C = 16 K^2 max(c1, K^2 / c2)` from the proof's concluding step.
    pub proof_constant: f64,
    /// `C max{1/eps^2, J(A)^2} (log(4/delta) + d log 10)`.
    pub proof_required_lambda_min: f64,
    /// psi_2-norm of a standard gaussian coordinate from the definition.
    pub psi2_gaussian_definition: f64,
    /// The value quoted in prose for a standard gaussian vector.
    pub psi2_gaussian_remark: f64,
}

/// Smallest `t` in `[1, t_max]` with `lambda_min(G_t) >= required`,
/// found by doubling then bisection. `lambda_min(G_t)` is nondecreasing
/// in `t` because `G_{t+1} - G_t = Gamma_t(A)` is PSD.
pub fn minimal_horizon(a: &DMatrix<f64>, required: f64, t_max: usize) -> Result<usize> {
    let holds = |t: usize| gramian_lambda_min(a, t) >= required;
    let mut hi = 1usize;
    while !holds(hi) {
        if hi >= t_max {
            return Err(Error::HorizonCap {
                t_max,
                lambda_min_at_cap: gramian_lambda_min(a, t_max),
                required,
            });
        }
        hi = (hi * 2).min(t_max);
    }
    let mut lo = hi / 2; // fails (or 0, where lambda_min is 0)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn evaluate_conditions(a: &DMatrix<f64>, q: &BoundQuery) -> Result<BoundReport> {
    let d = ensure_square(a, "dynamics matrix A")?;
    ensure_finite(a, "dynamics matrix A")?;
    q.validate()?;
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::invalid(format!("dynamics matrix is not stable: rho = {rho}")));
    }
    let c = q.constant.effective(q.k);
    let df = d as f64;
    let log_term = (1.0 / q.delta).ln() + df;
    let inv_eps2 = 1.0 / (q.epsilon * q.epsilon);
    let j = series_bound(a, SERIES_TOL)?;

    let required = c * inv_eps2.max(j * j) * log_term;
    let minimal_t = minimal_horizon(a, required, q.t_max)?;
    let at_min = gramian_sum(a, minimal_t)?;
    let toeplitz = toeplitz_info(a, minimal_t, q.grid_points, TOEPLITZ_CAP, SERIES_TOL)?;
    let gamma_norm = toeplitz.best_norm();

    let rate_horizon = q.horizon.unwrap_or(minimal_t);
    let lambda_rate = gramian_lambda_min(a, rate_horizon);
    if !(lambda_rate > 0.0) {
        return Err(Error::invalid("rate horizon must be >= 1"));
    }

    let proof_constant = 16.0 * q.k * q.k * q.c1.max(q.k * q.k / q.c2);
    let proof_log = (4.0 / q.delta).ln() + df * 10f64.ln();

    Ok(BoundReport {
        d,
        epsilon: q.epsilon,
        delta: q.delta,
        constant_mode: q.constant,
        c,
        k: q.k,
        spectral_radius: rho,
        series_bound: j,
        required_lambda_min: required,
        minimal_t,
        lambda_min_at_minimal_t: at_min.lambda_min,
        whitener_norm_at_minimal_t: at_min.whitener_norm,
        required_lambda_min_toeplitz: c * inv_eps2.max(gamma_norm * gamma_norm) * log_term,
        toeplitz,
        rate_horizon,
        lambda_min_at_rate_horizon: lambda_rate,
        rate_bound: c * (log_term / lambda_rate).sqrt(),
        lower_bound_lambda_min: c * log_term * inv_eps2,
        lower_bound_note: "necessary condition proven only on the scaled-orthogonal class".into(),
        c1: q.c1,
        c2: q.c2,
        proof_constant,
        proof_required_lambda_min: proof_constant * inv_eps2.max(j * j) * proof_log,
        psi2_gaussian_definition: psi2_norm(NoiseKind::Gaussian),
        psi2_gaussian_remark: NoiseFamily::GAUSSIAN_PSI2_REMARK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, a)
    }

    #[test]
    fn finite_gramian_examples() {
        assert_eq!(finite_gramian(&DMatrix::zeros(3, 3), 5), DMatrix::identity(3, 3));
        assert!((finite_gramian(&scalar(0.5), 2)[(0, 0)] - 1.3125).abs() < 1e-15);
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -0.2, 0.4]);
        assert_eq!(finite_gramian(&a, 0), DMatrix::identity(2, 2));
    }

    #[test]
    fn gramian_sum_examples() {
        let g = gramian_sum(&DMatrix::zeros(2, 2), 7).unwrap();
        assert!((g.gramian_sum.clone() - DMatrix::identity(2, 2) * 7.0).amax() < 1e-14);
        assert!((g.lambda_min - 7.0).abs() < 1e-12);
        assert!((g.whitener[(0, 0)] - 1.0 / 7f64.sqrt()).abs() < 1e-14);

        let g = gramian_sum(&scalar(0.5), 3).unwrap();
        assert!((g.gramian_sum[(0, 0)] - 3.5625).abs() < 1e-14);
        assert!((g.whitener[(0, 0)] - 0.529_812_942_826_017_5).abs() < 1e-12);
    }

    #[test]
    fn gramian_sum_rejects_zero_horizon() {
        assert!(gramian_sum(&scalar(0.5), 0).is_err());
    }

    #[test]
    fn series_bound_examples() {
        assert_eq!(series_bound(&DMatrix::zeros(2, 2), 1e-12).unwrap(), 1.0);
        assert!((series_bound(&scalar(0.5), 1e-12).unwrap() - 2.0).abs() < 1e-11);
        let v = series_bound(&(DMatrix::identity(2, 2) * 0.9), 1e-10).unwrap();
        assert!(v >= 10.0 - 1e-9 && v <= 10.0 + 1e-9, "{v}");
    }

    #[test]
    fn series_bound_handles_non_monotone_powers() {
        // ||A|| > 1 even though rho(A) = 0.5.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 4.0, 0.0, 0.5]);
        let sb = series_bound_detailed(&a, 1e-10).unwrap();
        // Powers are [[0.5^s, 4 s 0.5^{s-1}], [0, 0.5^s]]; brute-force 400 terms.
        let mut brute = 0.0;
        let mut p = DMatrix::identity(2, 2);
        for _ in 0..400 {
            brute += op_norm(&p);
            p = &a * &p;
        }
        assert!(sb.value >= brute - 1e-9 && sb.value <= brute + 1e-9, "{} vs {brute}", sb.value);
        assert!(sb.block > 1);
    }

    #[test]
    fn series_bound_reports_non_convergence() {
        let a = scalar(0.999_999_9);
        assert!(matches!(series_bound(&a, 1e-10), Err(Error::NonConvergence(_))));
    }

    #[test]
    fn explicit_toeplitz_examples() {
        assert!((toeplitz_norm_explicit(&DMatrix::zeros(2, 2), 30).unwrap() - 1.0).abs() < 1e-12);
        let expected = ((2.25 + 1.0625f64.sqrt()) / 2.0).sqrt();
        assert!((toeplitz_norm_explicit(&scalar(0.5), 2).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.28078).abs() < 1e-5);
    }

    #[test]
    fn explicit_toeplitz_matches_dense_svd() {
        let cases = [
            DMatrix::from_row_slice(2, 2, &[0.5, 4.0, 0.0, 0.5]),
            DMatrix::from_row_slice(3, 3, &[0.2, -0.7, 0.1, 0.4, 0.3, 0.0, -0.1, 0.2, 0.6]),
            scalar(-0.95),
            scalar(0.01),
        ];
        for a in &cases {
            for t in [1, 2, 5, 40] {
                let dense = op_norm(&toeplitz_matrix(a, t));
                let fast = toeplitz_norm_explicit(a, t).unwrap();
                assert!((dense - fast).abs() <= 1e-10 * dense, "{dense} vs {fast}");
            }
        }
    }

    #[test]
    fn explicit_toeplitz_cap() {
        assert!(matches!(
            toeplitz_norm_explicit_capped(&DMatrix::zeros(3, 3), 10, 20),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn toeplitz_layout() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let g = toeplitz_matrix(&a, 3);
        assert_eq!(g.view((4, 0), (2, 2)), &a * &a);
        assert_eq!(g.view((2, 0), (2, 2)), a);
        assert_eq!(g.view((4, 4), (2, 2)), DMatrix::<f64>::identity(2, 2));
        assert_eq!(g.view((0, 2), (2, 2)), DMatrix::<f64>::zeros(2, 2));
    }

    #[test]
    fn symbol_examples() {
        assert!((toeplitz_norm_symbol(&DMatrix::zeros(2, 2), 10, 16).unwrap() - 1.0).abs() < 1e-12);
        let b = toeplitz_norm_symbol_detailed(&scalar(0.5), 2, 64).unwrap();
        assert!((b.value - 1.5).abs() < 1e-12);
        assert!(b.argmax.abs() < 1e-9 || (1.0 - b.argmax).abs() < 1e-9);
        assert!(toeplitz_norm_symbol(&scalar(0.5), 2, 1).is_err());
    }

    #[test]
    fn minimal_t_for_iid_regression() {
        let mut q = BoundQuery::new(0.1, 0.05, 1.0);
        q.t_max = 100_000;
        let r = evaluate_conditions(&scalar(0.0), &q).unwrap();
        let expected = 100.0 * (20f64.ln() + 1.0);
        assert!((r.required_lambda_min - expected).abs() < 1e-9);
        assert!((r.required_lambda_min - 399.57).abs() < 0.01);
        assert_eq!(r.minimal_t, 400);
        assert!((r.rate_bound - (3.995_732_273_553_991f64 / 400.0).sqrt()).abs() < 1e-12);
        assert!((r.rate_bound - 0.09995).abs() < 1e-5);
    }

    #[test]
    fn horizon_cap_reports_lambda() {
        let mut q = BoundQuery::new(0.1, 0.05, 1.0);
        q.t_max = 50;
        match evaluate_conditions(&scalar(0.0), &q) {
            Err(Error::HorizonCap { t_max, lambda_min_at_cap, .. }) => {
                assert_eq!(t_max, 50);
                assert!((lambda_min_at_cap - 50.0).abs() < 1e-9);
            }
            other => panic!("expected horizon cap, got {other:?}"),
        }
    }

    #[test]
    fn universal_constant_scales_by_k4() {
        let mut q = BoundQuery::new(0.2, 0.1, 1.0);
        q.constant = ConstantMode::Universal { c_prime: 0.5 };
        q.k = 2.0;
        let r = evaluate_conditions(&scalar(0.3), &q).unwrap();
        assert!((r.c - 8.0).abs() < 1e-15);
    }

    #[test]
    fn query_validation() {
        let a = scalar(0.2);
        assert!(evaluate_conditions(&a, &BoundQuery::new(1.5, 0.1, 1.0)).is_err());
        assert!(evaluate_conditions(&a, &BoundQuery::new(0.1, 0.0, 1.0)).is_err());
        assert!(evaluate_conditions(&a, &BoundQuery::new(0.1, 0.1, -1.0)).is_err());
        let mut q = BoundQuery::new(0.1, 0.1, 1.0);
        q.k = 0.5;
        assert!(evaluate_conditions(&a, &q).is_err());
    }
}
