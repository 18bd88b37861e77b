//! Command-line front end: argument parsing, input loading, report and
//! plot-data emission, and the run manifest.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use olsid_core::estimator::{ols_with_truth, OlsEstimate};
use olsid_core::experiments::{
    calibrate_constant, decay_experiment, pac_experiment, proof_diagnostics, spectrum_coverage,
    spectrum_coverage_with_k, CalibrationConfig, ExperimentConfig, ProofParams,
};
use olsid_core::gramian::{evaluate_conditions, gramian_sum, BoundQuery, ConstantMode};
use olsid_core::linalg::matrix_from_rows;
use olsid_core::lti::{simulate, NoiseKind, SystemSpec, Trajectory};
use olsid_core::spectrum::{chaos_statistic, hw_tail_grid, isometry_defect, spectrum_event};
use olsid_core::{Error as CoreError, NoiseFamily};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 1729;
pub const OUT_DIR_ENV: &str = "OLSID_OUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "olsid", version, about = "Finite-time OLS identification toolkit")]
struct Cli {
    /// Directory for all outputs.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "olsid-out")]
    out_dir: PathBuf,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a trajectory.
    Simulate(SimulateArgs),
    /// OLS estimate from a trajectory file.
    Estimate(EstimateArgs),
    /// Evaluate the sample-complexity conditions for a system.
    Bounds(BoundsArgs),
    /// Isometry defect and spectrum event on a trajectory.
    SpectrumCheck(SpectrumArgs),
    /// Hanson-Wright tail estimates for a fixed matrix.
    HwCheck(HwArgs),
    /// Monte Carlo failure frequency at each configured horizon.
    PacExperiment(ConfigArgs),
    /// Error decay across the configured horizons.
    Decay(ConfigArgs),
    /// Calibrate the leading constant over a family of systems.
    Calibrate(ConfigArgs),
    /// Proof-chain intermediates on a trajectory.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SystemArgs {
    /// Dynamics matrix as inline JSON rows (e.g. '[[0.5]]') or a path to a JSON file.
    #[arg(long)]
    pub matrix: String,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Trajectory JSON written by `simulate`.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// True dynamics, inline or as a path; adds the error to the report.
    #[arg(long = "true-A", visible_alias = "true-a")]
    pub true_a: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BoundsArgs {
    #[arg(long)]
    pub matrix: String,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    /// Leading constant `c`.
    #[arg(long, conflicts_with = "c_prime")]
    pub constant: Option<f64>,
    /// Universal constant `c'` with `c = c' K^4`.
    #[arg(long)]
    pub c_prime: Option<f64>,
    /// Sub-gaussian norm `K`.
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
    #[arg(long, default_value_t = 10_000_000)]
    pub t_max: usize,
    /// Initial symbol grid size.
    #[arg(long, default_value_t = olsid_core::gramian::SYMBOL_GRID)]
    pub grid: usize,
    /// Horizon for the rate bound (defaults to the minimal horizon).
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c2: f64,
}

/// Either a single trajectory (with its system) or a coverage experiment
/// over the horizons of an experiment config.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SpectrumArgs {
    #[arg(long, required_unless_present = "config", conflicts_with = "config", requires = "matrix")]
    pub trajectory: Option<PathBuf>,
    /// Experiment config; reports empirical coverage at each horizon of `t_grid`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<String>,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseKind,
    #[arg(long)]
    pub epsilon: f64,
    /// Sub-gaussian norm; defaults to the noise family's.
    #[arg(long)]
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct HwArgs {
    /// Matrix `B`, inline or as a path.
    #[arg(long)]
    pub matrix: String,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseKind,
    /// Comma-separated deviation levels.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1,2")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DiagnosticsArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    /// Sub-gaussian norm; defaults to the noise family's.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c2: f64,
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub version: String,
    /// Arguments reproducing this run, without the output directory.
    pub argv: Vec<String>,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_) | CoreError::Capacity(_) | CoreError::HorizonCap { .. } => {
                CliError::Validation(e.to_string())
            }
            CoreError::NonConvergence(_) | CoreError::Internal(_) => CliError::Internal(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Outcome of [`run`].
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub manifest: Option<RunManifest>,
    /// Text for stdout (help, version) or stderr (errors).
    pub message: Option<String>,
}

/// Parse `argv` (including the program name), execute, and persist outputs.
pub fn run<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            return Outcome { code, manifest: None, message: Some(e.render().to_string()) };
        }
    };
    let replay = replay_argv(&argv);
    match execute(cli, replay) {
        Ok(m) => Outcome { code: 0, manifest: Some(m), message: None },
        Err(e) => Outcome { code: e.exit_code(), manifest: None, message: Some(format!("error: {}", e.message())) },
    }
}

/// Drop the program name and any `--out-dir` flag.
fn replay_argv(argv: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        let s = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
            continue;
        }
        if s == "--out-dir" {
            skip = true;
            continue;
        }
        if s.starts_with("--out-dir=") {
            continue;
        }
        out.push(s);
    }
    out
}

/// Files produced by a subcommand, held in memory until the run succeeds.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Outputs { files: Vec::new() }
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Internal(format!("{what} {}: {e}", path.display()))
}

fn execute(cli: Cli, argv: Vec<String>) -> CliResult<RunManifest> {
    let start = Instant::now();
    let mut out = Outputs::new();
    let (name, config, seed) = dispatch(cli.command, cli.seed, &mut out)?;
    fs::create_dir_all(&cli.out_dir).map_err(|e| io_err("cannot create", &cli.out_dir, e))?;
    let mut paths = Vec::new();
    for (file, bytes) in &out.files {
        let p = cli.out_dir.join(file);
        write_atomic(&p, bytes).map_err(|e| io_err("cannot write", &p, e))?;
        paths.push(p);
    }
    let manifest = RunManifest {
        subcommand: name.to_string(),
        config,
        master_seed: seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        argv,
        outputs: paths,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    let p = cli.out_dir.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&p, &bytes).map_err(|e| io_err("cannot write", &p, e))?;
    Ok(manifest)
}

fn to_value<T: Serialize>(v: &T) -> CliResult<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn dispatch(
    cmd: Command,
    seed_flag: Option<u64>,
    out: &mut Outputs,
) -> CliResult<(&'static str, serde_json::Value, u64)> {
    let seed = seed_flag.unwrap_or(DEFAULT_SEED);
    match cmd {
        Command::Simulate(a) => {
            let spec = load_spec(&a.system)?;
            let traj = simulate(&spec, a.horizon, seed)?;
            out.json("trajectory.json", &traj)?;
            Ok(("simulate", to_value(&a)?, seed))
        }
        Command::Estimate(a) => {
            let traj = load_trajectory(&a.trajectory)?;
            let est: OlsEstimate = match &a.true_a {
                Some(m) => ols_with_truth(&traj, &parse_matrix(m, "--true-A")?)?,
                None => olsid_core::ols(&traj)?,
            };
            out.json("estimate.json", &est)?;
            Ok(("estimate", to_value(&a)?, traj.seed))
        }
        Command::Bounds(a) => {
            let m = parse_matrix(&a.matrix, "--matrix")?;
            let constant = match (a.constant, a.c_prime) {
                (_, Some(c_prime)) => ConstantMode::Universal { c_prime },
                (c, None) => ConstantMode::Absolute { c: c.unwrap_or(1.0) },
            };
            let q = BoundQuery {
                epsilon: a.epsilon,
                delta: a.delta,
                constant,
                k: a.k,
                t_max: a.t_max,
                grid_points: a.grid,
                horizon: a.horizon,
                c1: a.c1,
                c2: a.c2,
            };
            out.json("bounds.json", &evaluate_conditions(&m, &q)?)?;
            Ok(("bounds", to_value(&a)?, seed))
        }
        Command::SpectrumCheck(a) => {
            if let Some(path) = &a.config {
                let cfg: ExperimentConfig = load_config(path, seed_flag)?;
                let mut rows = Vec::new();
                for &t in &cfg.t_grid {
                    rows.push(match a.k {
                        Some(k) => spectrum_coverage_with_k(&cfg, t, a.epsilon, k)?,
                        None => spectrum_coverage(&cfg, t, a.epsilon)?,
                    });
                }
                out.json("coverage.json", &rows)?;
                out.csv("coverage.csv", &rows)?;
                let s = cfg.master_seed;
                let mut config = to_value(&a)?;
                config["experiment"] = to_value(&cfg)?;
                return Ok(("spectrum-check", config, s));
            }
            let (Some(path), Some(matrix)) = (&a.trajectory, &a.matrix) else {
                return Err(CliError::Validation("spectrum-check needs --trajectory and --matrix, or --config".into()));
            };
            let spec = SystemSpec::new(parse_matrix(matrix, "--matrix")?, a.noise)?;
            let traj = load_trajectory(path)?;
            check_match(&traj, &spec)?;
            let g = gramian_sum(spec.a(), traj.t)?;
            let report = isometry_defect(&traj.covariates(), &g.whitener)?;
            let k = a.k.unwrap_or(spec.noise().psi2);
            let mut u = DVector::zeros(spec.dim());
            u[0] = 1.0;
            let chaos = chaos_statistic(&traj, spec.a(), &g.whitener, &u)?;
            let result = SpectrumOutput {
                t: traj.t,
                epsilon: a.epsilon,
                k,
                event: spectrum_event(&report, k, a.epsilon),
                isometry: report,
                chaos,
            };
            out.json("spectrum.json", &result)?;
            Ok(("spectrum-check", to_value(&a)?, traj.seed))
        }
        Command::HwCheck(a) => {
            let b = parse_matrix(&a.matrix, "--matrix")?;
            let tails = hw_tail_grid(&b, &NoiseFamily::new(a.noise), &a.eps, a.trials, seed, a.c)?;
            out.json("hw.json", &tails)?;
            let rows: Vec<HwRow> = tails
                .iter()
                .map(|r| HwRow {
                    eps: r.eps,
                    n_trials: r.n_trials,
                    exceedances: r.exceedances,
                    empirical: r.empirical,
                    std_error: r.std_error,
                    bound: r.bound,
                })
                .collect();
            out.csv("hw.csv", &rows)?;
            Ok(("hw-check", to_value(&a)?, seed))
        }
        Command::PacExperiment(a) => {
            let cfg: ExperimentConfig = load_config(&a.config, seed_flag)?;
            if cfg.t_grid.is_empty() {
                return Err(CliError::Validation("t_grid must list at least one horizon".into()));
            }
            let mut batches = Vec::new();
            for &t in &cfg.t_grid {
                let b = pac_experiment(&cfg, t)?;
                let rows: Vec<PacRow> = b
                    .trials
                    .iter()
                    .map(|r| PacRow {
                        trial: r.trial,
                        error: r.error,
                        e2_indicator: u8::from(r.e2_indicator),
                        selfnorm_value: r.selfnorm_value,
                    })
                    .collect();
                out.csv(&format!("pac_t{t}.csv"), &rows)?;
                batches.push(b);
            }
            out.json("pac.json", &batches)?;
            let s = cfg.master_seed;
            Ok(("pac-experiment", to_value(&cfg)?, s))
        }
        Command::Decay(a) => {
            let cfg: ExperimentConfig = load_config(&a.config, seed_flag)?;
            let fit = decay_experiment(&cfg)?;
            let rows: Vec<DecayRow> = fit
                .points
                .iter()
                .map(|p| DecayRow {
                    t: p.t,
                    lambda_min: p.lambda_min,
                    median: p.median,
                    quantile: p.quantile,
                    bound_rhs: p.bound_rhs,
                })
                .collect();
            out.json("decay.json", &fit)?;
            out.csv("decay.csv", &rows)?;
            let s = cfg.master_seed;
            Ok(("decay", to_value(&cfg)?, s))
        }
        Command::Calibrate(a) => {
            let cfg: CalibrationConfig = load_config(&a.config, seed_flag)?;
            out.json("calibration.json", &calibrate_constant(&cfg)?)?;
            let s = cfg.master_seed;
            Ok(("calibrate", to_value(&cfg)?, s))
        }
        Command::Diagnostics(a) => {
            let spec = load_spec(&a.system)?;
            let traj = load_trajectory(&a.trajectory)?;
            check_match(&traj, &spec)?;
            let k = a.k.unwrap_or(spec.noise().psi2);
            let params = ProofParams { epsilon: a.epsilon, delta: a.delta, k, c: a.c, c1: a.c1, c2: a.c2 };
            out.json("diagnostics.json", &proof_diagnostics(&traj, &spec, params)?)?;
            Ok(("diagnostics", to_value(&a)?, traj.seed))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SpectrumOutput {
    t: usize,
    epsilon: f64,
    k: f64,
    event: bool,
    isometry: olsid_core::IsometryReport,
    chaos: olsid_core::spectrum::ChaosReport,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PacRow {
    pub trial: usize,
    pub error: f64,
    pub e2_indicator: u8,
    pub selfnorm_value: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DecayRow {
    pub t: usize,
    pub lambda_min: f64,
    pub median: f64,
    pub quantile: f64,
    pub bound_rhs: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HwRow {
    pub eps: f64,
    pub n_trials: usize,
    pub exceedances: usize,
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
}

/// Inline JSON rows when the argument starts with `[`, a file path otherwise.
pub fn parse_matrix(arg: &str, flag: &str) -> CliResult<DMatrix<f64>> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg)
            .map_err(|e| CliError::Validation(format!("{flag}: cannot read matrix file {arg}: {e}")))?
    };
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{flag}: malformed matrix JSON: {e}")))?;
    let rows = value
        .as_array()
        .ok_or_else(|| CliError::Validation(format!("{flag}: matrix must be an array of rows")))?;
    let mut parsed = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| CliError::Validation(format!("{flag}: matrix row {i} is not an array")))?;
        let mut r = Vec::with_capacity(row.len());
        for (j, v) in row.iter().enumerate() {
            r.push(v.as_f64().ok_or_else(|| {
                CliError::Validation(format!("{flag}: matrix entry [{i}][{j}] is not a number: {v}"))
            })?);
        }
        parsed.push(r);
    }
    matrix_from_rows(&parsed).map_err(|e| CliError::Validation(format!("{flag}: {e}")))
}

fn load_spec(a: &SystemArgs) -> CliResult<SystemSpec> {
    Ok(SystemSpec::new(parse_matrix(&a.matrix, "--matrix")?, a.noise)?)
}

fn load_trajectory(path: &Path) -> CliResult<Trajectory> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read trajectory {}: {e}", path.display())))?;
    let traj: Trajectory = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("malformed trajectory {}: {e}", path.display())))?;
    traj.validate()?;
    Ok(traj)
}

fn check_match(traj: &Trajectory, spec: &SystemSpec) -> CliResult<()> {
    if traj.spec_hash != spec.hash() {
        return Err(CliError::Validation(
            "trajectory was not generated by the given system (spec hash mismatch)".into(),
        ));
    }
    Ok(())
}

/// Read a JSON config; `--seed` overrides `master_seed`, which otherwise
/// defaults to [`DEFAULT_SEED`] when absent.
fn load_config<T: for<'de> Deserialize<'de>>(path: &Path, seed: Option<u64>) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("malformed config {}: {e}", path.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Validation("config must be a JSON object".into()))?;
    match seed {
        Some(s) => {
            obj.insert("master_seed".into(), s.into());
        }
        None => {
            obj.entry("master_seed").or_insert(DEFAULT_SEED.into());
        }
    }
    serde_json::from_value(value)
        .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_errors_name_the_entry() {
        let e = parse_matrix("[[1, 2], [3]]", "--matrix").unwrap_err();
        assert!(e.message().contains("row 1"), "{}", e.message());
        let e = parse_matrix("[[1, \"x\"]]", "--matrix").unwrap_err();
        assert!(e.message().contains("[0][1]"), "{}", e.message());
        assert_eq!(e.exit_code(), 2);
        let m = parse_matrix("[[0.5, 0], [0, 0.25]]", "--matrix").unwrap();
        assert_eq!(m[(1, 1)], 0.25);
    }

    #[test]
    fn replay_drops_out_dir() {
        let argv: Vec<OsString> = ["olsid", "--out-dir", "x", "bounds", "--out-dir=y", "--epsilon", "0.1"]
            .iter()
            .map(OsString::from)
            .collect();
        assert_eq!(replay_argv(&argv), vec!["bounds", "--epsilon", "0.1"]);
    }
}
