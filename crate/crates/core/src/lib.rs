//! Finite-time analysis toolkit for ordinary least squares identification
//! of stable linear time-invariant systems `x_{t+1} = A x_t + eta_{t+1}`.
//!
//! Modules, bottom-up:
//! - [`lti`]: systems, noise families, seeded simulation.
//! - [`gramian`]: Gramians, whitener, block-Toeplitz norms, evaluated bounds.
//! - [`estimator`]: OLS, its error identity and the self-normalized statistic.
//! - [`spectrum`]: isometry defect, sphere nets, chaos and Hanson-Wright checks.
//! - [`experiments`]: seeded Monte Carlo harness over all of the above.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod gramian;
pub mod linalg;
pub mod lti;
pub mod seed;
pub mod spectrum;

pub use error::{Error, Result};
pub use estimator::{
    error_identity_check, estimation_error, ols, ols_with_truth, self_normalized_stat, OlsEstimate,
    SelfNormStat,
};
pub use experiments::{
    calibrate_constant, decay_experiment, pac_experiment, proof_diagnostics, spectrum_coverage,
    CalibrationConfig, CalibrationResult, Coverage, DecayFit, ExperimentConfig, ProofDiagnostics,
    ProofParams, TrialBatch,
};
pub use gramian::{
    evaluate_conditions, finite_gramian, gramian_sum, series_bound, toeplitz_norm_explicit,
    toeplitz_norm_symbol, BoundQuery, BoundReport, ConstantMode, GramianSummary, ToeplitzInfo,
};
pub use lti::{psi2_norm, simulate, spectral_radius, NoiseFamily, NoiseKind, SystemSpec, Trajectory};
pub use spectrum::{
    build_net, chaos_statistic, hw_tail_estimate, isometry_defect, net_opnorm_bound, IsometryReport,
    NetNormMode, SphereNet,
};

pub use nalgebra::{DMatrix, DVector};
