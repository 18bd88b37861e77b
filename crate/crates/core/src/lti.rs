//! Stable LTI systems `x_{t+1} = A x_t + eta_{t+1}` with `x_0 = 0`, their
//! noise families and seeded trajectory simulation.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, ensure_square};
use crate::seed::rng_from_seed;

/// Coordinate law of the noise. Every law is zero-mean and unit-variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Rademacher,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    Uniform,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Gaussian, NoiseKind::Rademacher, NoiseKind::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Rademacher => "rademacher",
            NoiseKind::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseKind::Gaussian),
            "rademacher" => Ok(NoiseKind::Rademacher),
            "uniform" => Ok(NoiseKind::Uniform),
            other => Err(Error::invalid(format!("unknown noise family '{other}'"))),
        }
    }
}

/// Isotropic noise with i.i.d. coordinates drawn from `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "NoiseRepr")]
pub struct NoiseFamily {
    pub kind: NoiseKind,
    /// psi_2-norm of one coordinate, from the defining equation
    /// `E exp(X^2 / K^2) = 2`.
    pub psi2: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NoiseRepr {
    Kind(NoiseKind),
    Full { kind: NoiseKind },
}

impl From<NoiseRepr> for NoiseFamily {
    fn from(r: NoiseRepr) -> Self {
        match r {
            NoiseRepr::Kind(kind) | NoiseRepr::Full { kind } => NoiseFamily::new(kind),
        }
    }
}

impl NoiseFamily {
    /// The value quoted for a standard gaussian vector alongside the
    /// psi_2 definition; the definition itself gives `sqrt(8/3)`.
    pub const GAUSSIAN_PSI2_REMARK: f64 = 1.0;

    pub fn new(kind: NoiseKind) -> Self {
        NoiseFamily { kind, psi2: psi2_norm(kind) }
    }

    pub fn gaussian() -> Self {
        Self::new(NoiseKind::Gaussian)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => StandardNormal.sample(rng),
            NoiseKind::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseKind::Uniform => {
                let h = 3f64.sqrt();
                rng.random_range(-h..h)
            }
        }
    }

    pub fn sample_vector<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(d, |_, _| self.sample(rng))
    }
}

/// psi_2-norm of one unit-variance coordinate: the root `K` of
/// `E exp(X^2/K^2) = 2`.
pub fn psi2_norm(kind: NoiseKind) -> f64 {
    match kind {
        // E exp(X^2/K^2) = (1 - 2/K^2)^{-1/2}
        NoiseKind::Gaussian => (8.0f64 / 3.0).sqrt(),
        // exp(1/K^2) = 2
        NoiseKind::Rademacher => 1.0 / std::f64::consts::LN_2.sqrt(),
        NoiseKind::Uniform => {
            static CACHE: OnceLock<f64> = OnceLock::new();
            *CACHE.get_or_init(uniform_psi2)
        }
    }
}

/// `E exp(X^2/K^2)` for `X` uniform on `[-sqrt 3, sqrt 3]`.
fn uniform_mgf_sq(k: f64) -> f64 {
    let h = 3f64.sqrt();
    adaptive_simpson(&|x: f64| (x * x / (k * k)).exp(), 0.0, h, 1e-14) / h
}

fn uniform_psi2() -> f64 {
    // The moment is decreasing in K; E exp(X^2) > 2 and E exp(X^2/9) < 2.
    let (mut lo, mut hi) = (1.0, 3.0);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if uniform_mgf_sq(mid) > 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// Maximum eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    ensure_square(a, "spectral_radius input")?;
    ensure_finite(a, "spectral_radius input")?;
    Ok(a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// A stable system: dynamics matrix plus noise family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr")]
pub struct SystemSpec {
    d: usize,
    #[serde(with = "linalg::serde_rows")]
    a: DMatrix<f64>,
    noise: NoiseFamily,
}

#[derive(Deserialize)]
struct SpecRepr {
    d: Option<usize>,
    #[serde(with = "linalg::serde_rows")]
    a: DMatrix<f64>,
    #[serde(default = "NoiseFamily::gaussian")]
    noise: NoiseFamily,
}

impl TryFrom<SpecRepr> for SystemSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let spec = SystemSpec::new(r.a, r.noise.kind)?;
        if let Some(d) = r.d {
            if d != spec.d {
                return Err(Error::invalid(format!(
                    "declared d = {d} but matrix is {0}x{0}",
                    spec.d
                )));
            }
        }
        Ok(spec)
    }
}

impl SystemSpec {
    /// Rejects non-square, non-finite or unstable (`rho(A) >= 1`) matrices.
    pub fn new(a: DMatrix<f64>, noise: NoiseKind) -> Result<Self> {
        let d = ensure_square(&a, "dynamics matrix A")?;
        ensure_finite(&a, "dynamics matrix A")?;
        let rho = spectral_radius(&a)?;
        if rho >= 1.0 {
            return Err(Error::invalid(format!(
                "dynamics matrix is not stable: spectral radius {rho} >= 1"
            )));
        }
        Ok(SystemSpec { d, a, noise: NoiseFamily::new(noise) })
    }

    /// Scalar system `x_{t+1} = a x_t + eta_{t+1}`.
    pub fn scalar(a: f64, noise: NoiseKind) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), noise)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn noise(&self) -> &NoiseFamily {
        &self.noise
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Observed states `x_1..x_{t+1}` and noise record `eta_2..eta_{t+1}`.
///
/// `x_1` is the first noise draw since `x_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: usize,
    pub d: usize,
    #[serde(with = "linalg::serde_vecs")]
    pub states: Vec<DVector<f64>>,
    #[serde(with = "linalg::serde_opt_vecs", default)]
    pub noise_record: Option<Vec<DVector<f64>>>,
    pub seed: u64,
    pub spec_hash: String,
}

impl Trajectory {
    /// Run the recursion on explicit draws `eta_1..eta_{t+1}`.
    pub fn from_draws(spec: &SystemSpec, draws: Vec<DVector<f64>>, seed: u64) -> Result<Self> {
        if draws.len() < 2 {
            return Err(Error::invalid("need at least two noise draws (t >= 1)"));
        }
        let d = spec.dim();
        if let Some(bad) = draws.iter().position(|v| v.len() != d) {
            return Err(Error::invalid(format!("noise draw {bad} has wrong dimension")));
        }
        let t = draws.len() - 1;
        let mut states = Vec::with_capacity(t + 1);
        let mut iter = draws.into_iter();
        states.push(iter.next().expect("len checked"));
        let mut record = Vec::with_capacity(t);
        for eta in iter {
            let next = spec.a() * states.last().expect("non-empty") + &eta;
            states.push(next);
            record.push(eta);
        }
        Ok(Trajectory {
            t,
            d,
            states,
            noise_record: Some(record),
            seed,
            spec_hash: spec.hash(),
        })
    }

    /// Covariates `X` (t x d): rows `x_1..x_t`.
    pub fn covariates(&self) -> DMatrix<f64> {
        linalg::rows_to_matrix(&self.states[..self.t], self.d)
    }

    /// Targets (t x d): rows `x_2..x_{t+1}`.
    pub fn targets(&self) -> DMatrix<f64> {
        linalg::rows_to_matrix(&self.states[1..], self.d)
    }

    /// `E` (t x d): rows `eta_2..eta_{t+1}`.
    pub fn noise_matrix(&self) -> Result<DMatrix<f64>> {
        let rec = self
            .noise_record
            .as_ref()
            .ok_or_else(|| Error::invalid("trajectory has no noise record"))?;
        if rec.len() != self.t {
            return Err(Error::invalid(format!(
                "noise record has {} entries, expected {}",
                rec.len(),
                self.t
            )));
        }
        Ok(linalg::rows_to_matrix(rec, self.d))
    }

    /// `max_s ||x_{s+1} - A x_s - eta_{s+1}||`.
    pub fn replay_residual(&self, a: &DMatrix<f64>) -> Result<f64> {
        let rec = self
            .noise_record
            .as_ref()
            .ok_or_else(|| Error::invalid("trajectory has no noise record"))?;
        Ok(self
            .states
            .windows(2)
            .zip(rec)
            .map(|(w, eta)| (&w[1] - (a * &w[0] + eta)).norm())
            .fold(0.0, f64::max))
    }

    /// Structural checks on deserialized input.
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::invalid("trajectory horizon must be >= 1"));
        }
        if self.states.len() != self.t + 1 {
            return Err(Error::invalid(format!(
                "trajectory has {} states, expected t + 1 = {}",
                self.states.len(),
                self.t + 1
            )));
        }
        for (i, x) in self.states.iter().enumerate() {
            if x.len() != self.d {
                return Err(Error::invalid(format!("state {i} has wrong dimension")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("state {i} has a non-finite entry")));
            }
        }
        if let Some(rec) = &self.noise_record {
            if rec.len() != self.t || rec.iter().any(|v| v.len() != self.d) {
                return Err(Error::invalid("noise record has wrong shape"));
            }
        }
        Ok(())
    }
}

/// Simulate `t` transitions. Pure in `(spec, t, seed)`.
pub fn simulate(spec: &SystemSpec, t: usize, seed: u64) -> Result<Trajectory> {
    if t == 0 {
        return Err(Error::invalid("horizon t must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let d = spec.dim();
    let draws = (0..=t).map(|_| spec.noise().sample_vector(d, &mut rng)).collect();
    Trajectory::from_draws(spec, draws, seed)
}
