//! The `orthant-rbm` command line.
//!
//! Every command writes one JSON document `{"manifest": ..., "report": ...}`
//! to `--out` (or stdout) and a short human summary to stderr.
//!
//! Exit codes: 0 success, 1 input error, 2 model has no exponential form,
//! 3 structural assumptions violated.

use crate::decay::{self, classify, compute_decay_vector, DecayError, Normalization, Verdict};
use crate::estimator::{self, EstimateError, RunOptions};
use crate::model::{validate_model, FacetSpec, ModelFile, ModelSpec};
use crate::pde::{self, GridBox};
use crate::simulator::{SimConfig, SimError, Simulator};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const THREADS_ENV: &str = "ORTHANT_RBM_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NO_EXPONENTIAL: i32 = 2;
pub const EXIT_ASSUMPTIONS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "orthant-rbm", version, about = "Absorption probabilities of reflected Brownian motion in the orthant")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural assumptions and classify the model.
    Analyze(CommonArgs),
    /// Compute the decay vector `a` of `exp(a·x)`.
    Decay(DecayArgs),
    /// Simulate a single trajectory.
    Simulate(SimulateArgs),
    /// Monte Carlo estimate of the absorption probability.
    Estimate(EstimateArgs),
    /// Residuals of the absorption PDE for the decay vector or a candidate.
    PdeCheck(PdeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Model JSON file.
    pub model: PathBuf,
    /// 1-based facet coordinates, e.g. `1,2`; overrides the model file.
    #[arg(long, value_delimiter = ',')]
    pub facet: Option<Vec<usize>>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    Harmonic,
    Paper,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Harmonic => Normalization::Harmonic,
            NormArg::Paper => Normalization::PaperLiteral,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "harmonic")]
    pub normalization: NormArg,
}

#[derive(Debug, Args, Clone)]
pub struct SimArgs {
    /// Time step (default 1e-3).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Absorption radius (default 1e-3·(1+|x|)).
    #[arg(long)]
    pub eps_abs: Option<f64>,
    /// Escape radius (default 50·(1+|x|)).
    #[arg(long)]
    pub escape_radius: Option<f64>,
    /// Horizon (default 100).
    #[arg(long)]
    pub max_time: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Admit models violating the structural assumptions (calibration only).
    #[arg(long)]
    pub allow_degenerate: bool,
}

impl SimArgs {
    fn config(&self, x0: &[f64]) -> Result<SimConfig, SimError> {
        let d = SimConfig::defaults_for(x0);
        let c = SimConfig {
            dt: self.dt.unwrap_or(d.dt),
            eps_abs: self.eps_abs.unwrap_or(d.eps_abs),
            escape_radius: self.escape_radius.unwrap_or(d.escape_radius),
            max_time: self.max_time.unwrap_or(d.max_time),
            path_stride: None,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Start point, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub start: Vec<f64>,
    /// Trajectory index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    pub index: u64,
    /// Write the sampled path as CSV.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Keep every k-th step in the path.
    #[arg(long, default_value_t = 1)]
    pub path_stride: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepArg {
    /// Starts `scale·direction` for each value.
    Scale,
    /// Horizons `max_time` for each value.
    Horizon,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Start point, comma separated; repeat with --compare for several points.
    #[arg(long, value_delimiter = ',', num_args = 1, action = clap::ArgAction::Append, allow_hyphen_values = true)]
    pub start: Vec<f64>,
    #[arg(short = 'n', long = "trajectories", default_value_t = 10_000)]
    pub n: u64,
    /// Worker threads (capped by ORTHANT_RBM_THREADS).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Report Harmonic and PaperLiteral predictions side by side.
    #[arg(long)]
    pub compare: bool,
    #[arg(long, value_enum, requires = "values")]
    pub sweep: Option<SweepArg>,
    /// Swept values, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Unit direction for scale sweeps (default: the normalized start).
    #[arg(long, value_delimiter = ',')]
    pub direction: Option<Vec<f64>>,
    /// Write a sweep as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PdeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "harmonic")]
    pub normalization: NormArg,
    /// Check this exponent instead of the computed decay vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub candidate: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub model_sha256: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_seconds: f64,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    pub detail: Option<Value>,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
            detail: None,
        }
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::DualSkewSymmetric => EXIT_OK,
        Verdict::NoExponentialForm => EXIT_NO_EXPONENTIAL,
        Verdict::AssumptionsViolated => EXIT_ASSUMPTIONS,
    }
}

impl From<DecayError> for CliError {
    fn from(e: DecayError) -> Self {
        match e {
            DecayError::WrongClassification(v) => Self {
                code: verdict_code(v),
                message: e.to_string(),
                detail: None,
            },
            other => Self::input(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::AssumptionsViolated(report) => Self {
                code: EXIT_ASSUMPTIONS,
                message: "structural assumptions do not hold; pass --allow-degenerate for calibration runs".into(),
                detail: serde_json::to_value(&report).ok(),
            },
            other => Self::input(other.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Sim(s) => s.into(),
            EstimateError::Decay(d) => d.into(),
            other => Self::input(other.to_string()),
        }
    }
}

struct Loaded {
    spec: ModelSpec,
    facet: Option<FacetSpec>,
    sha256: String,
}

fn load_model(common: &CommonArgs) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(&common.model)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", common.model.display())))?;
    let file: ModelFile = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::input(format!(
            "{}: malformed model JSON at line {}, column {}: {e}",
            common.model.display(),
            e.line(),
            e.column()
        ))
    })?;
    let report = validate_model(&file);
    if !report.valid {
        return Err(CliError {
            code: EXIT_INPUT,
            message: format!("{}: invalid model", common.model.display()),
            detail: serde_json::to_value(&report).ok(),
        });
    }
    let spec = ModelSpec::from_file(&file).map_err(|e| CliError::input(e.to_string()))?;
    let d = spec.dimension();
    let facet = match common.facet.as_ref().or(file.facet.as_ref()) {
        None => None,
        Some(idx) => Some(FacetSpec::from_one_based(idx, d).map_err(|e| CliError::input(e.to_string()))?),
    };
    Ok(Loaded {
        spec,
        facet,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct Output {
    report: Value,
    config: Value,
    seed: Option<u64>,
    summary: String,
    code: i32,
}

fn emit(command: &str, common: &CommonArgs, sha: &str, started: Instant, out: Output) -> Result<i32, CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        model_sha256: sha.to_string(),
        config: out.config,
        seed: out.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let doc = json!({ "manifest": manifest, "report": out.report });
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::input(e.to_string()))?;
    text.push('\n');
    match &common.out {
        Some(p) => write_file(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    eprintln!("{}", out.summary);
    Ok(out.code)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize to JSON")
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn cmd_analyze(args: &CommonArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let m = load_model(args)?;
    let class = classify(&m.spec, m.facet.as_ref())?;
    let a = &class.assumption_report;
    let summary = format!(
        "verdict: {:?}\n  R not S: {}\n  strict principal sub-matrices S: {}\n  positive drift: {}\n  det R = {:.6e}, smallest singular value {:.3e}",
        class.verdict, a.a1_not_s, a.a2_strict_submatrices, a.a3_positive_drift, class.det_r, class.smallest_singular_value
    );
    emit(
        "analyze",
        args,
        &m.sha256,
        started,
        Output {
            code: verdict_code(class.verdict),
            report: to_value(&class),
            config: json!({ "facet": m.facet }),
            seed: None,
            summary,
        },
    )
}

fn residuals_for(
    spec: &ModelSpec,
    facet: Option<&FacetSpec>,
    a: &[f64],
) -> Result<(pde::ResidualReport, Option<FdSummary>), CliError> {
    let (sigma, mu, r) = match facet {
        None => (spec.sigma().clone(), spec.mu().clone(), spec.reflection().clone()),
        Some(f) => {
            let b = crate::model::facet_restrict(spec, f).map_err(|e| CliError::input(e.to_string()))?;
            (b.sigma, b.mu, b.reflection)
        }
    };
    let a = DVector::from_column_slice(a);
    let report = pde::absorption_pde_residuals(&sigma, &mu, &r, &a).map_err(|e| CliError::input(e.to_string()))?;
    let fd = fd_summary(&sigma, &mu, &a);
    Ok((report, fd))
}

#[derive(Debug, Serialize)]
struct FdSummary {
    steps: [f64; 2],
    residuals: [f64; 2],
    empirical_order: Option<f64>,
}

/// Finite-difference generator residuals on `[0.1, 1]^d` at two step sizes.
fn fd_summary(sigma: &nalgebra::DMatrix<f64>, mu: &DVector<f64>, a: &DVector<f64>) -> Option<FdSummary> {
    let d = mu.len();
    let points = match d {
        1..=3 => 5,
        4..=6 => 3,
        _ => return None,
    };
    let grid = GridBox {
        lower: vec![0.1; d],
        upper: vec![1.0; d],
        points,
    };
    let steps = [1e-2, 5e-3];
    let r0 = pde::fd_generator_check(sigma, mu, a, steps[0], &grid).ok()?;
    let r1 = pde::fd_generator_check(sigma, mu, a, steps[1], &grid).ok()?;
    let empirical_order = (r0 > 0.0 && r1 > 0.0).then(|| (r0 / r1).log2());
    Some(FdSummary {
        steps,
        residuals: [r0, r1],
        empirical_order,
    })
}

fn cmd_decay(args: &DecayArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let m = load_model(&args.common)?;
    let norm: Normalization = args.normalization.into();
    let decay = compute_decay_vector(&m.spec, m.facet.as_ref(), norm)?;
    let (residuals, _) = residuals_for(&m.spec, m.facet.as_ref(), &decay.a)?;
    let summary = format!("a = {} ({norm:?})", fmt_vec(&decay.a));
    emit(
        "decay",
        &args.common,
        &m.sha256,
        started,
        Output {
            code: EXIT_OK,
            report: json!({ "decay": decay, "residuals": residuals }),
            config: json!({ "normalization": norm, "facet": m.facet }),
            seed: None,
            summary,
        },
    )
}

fn cmd_pde_check(args: &PdeArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let m = load_model(&args.common)?;
    let norm: Normalization = args.normalization.into();
    let a = match &args.candidate {
        Some(c) => c.clone(),
        None => compute_decay_vector(&m.spec, m.facet.as_ref(), norm)?.a,
    };
    let (residuals, fd) = residuals_for(&m.spec, m.facet.as_ref(), &a)?;
    let skew = decay::check_skew_symmetry(m.spec.sigma(), m.spec.reflection())?;
    let dual = decay::stationary_rates(m.spec.sigma(), m.spec.reflection(), m.spec.mu())
        .ok()
        .and_then(|rates| {
            let c = DVector::from_column_slice(&rates.c);
            pde::dual_pde_residuals(m.spec.sigma(), m.spec.mu(), m.spec.reflection(), &c)
                .ok()
                .map(|d| (rates, d))
        });
    let residuals = match &dual {
        Some((_, d)) => residuals.with_dual(d.clone()),
        None => residuals,
    };
    let mut summary = format!(
        "generator residual {:.3e}, max |a·R_i| {:.3e}",
        residuals.generator_residual,
        residuals.neumann_residuals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    );
    if !residuals.valid_candidate {
        summary.push_str("\n  candidate a = 0 is not admissible");
    }
    emit(
        "pde-check",
        &args.common,
        &m.sha256,
        started,
        Output {
            code: EXIT_OK,
            report: json!({
                "candidate": a,
                "residuals": residuals,
                "finite_difference": fd,
                "skew_symmetry": skew,
                "stationary_rates": dual.map(|(r, _)| r),
            }),
            config: json!({ "normalization": norm, "facet": m.facet, "candidate": args.candidate }),
            seed: None,
            summary,
        },
    )
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let m = load_model(&args.common)?;
    if args.path_stride == 0 {
        return Err(CliError::input("--path-stride must be positive"));
    }
    let mut config = args.sim.config(&args.start)?;
    if args.path.is_some() {
        config = config.with_path_stride(args.path_stride);
    }
    let sim = Simulator::new(&m.spec, m.facet.as_ref(), config, args.sim.allow_degenerate)?;
    let result = sim.run(&args.start, args.sim.seed, args.index)?;
    if let Some(p) = &args.path {
        let mut buf = Vec::new();
        result.write_path_csv(&mut buf).map_err(|e| CliError::input(e.to_string()))?;
        write_file(p, &buf)?;
    }
    let summary = format!(
        "{:?} at t = {} after {} steps, final state {}",
        result.outcome,
        result.time,
        result.steps,
        fmt_vec(&result.final_state)
    );
    let mut report = to_value(&result);
    if let Some(obj) = report.as_object_mut() {
        obj.remove("path");
    }
    emit(
        "simulate",
        &args.common,
        &m.sha256,
        started,
        Output {
            code: EXIT_OK,
            report,
            config: json!({
                "sim": config,
                "start": args.start,
                "index": args.index,
                "facet": m.facet,
                "allow_degenerate": args.sim.allow_degenerate,
            }),
            seed: Some(args.sim.seed),
            summary,
        },
    )
}

/// Requested workers, capped by the environment.
pub fn effective_workers(requested: Option<usize>) -> Option<usize> {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&c| c > 0);
    match (requested, cap) {
        (Some(r), Some(c)) => Some(r.min(c).max(1)),
        (Some(r), None) => Some(r.max(1)),
        (None, Some(c)) => Some(c.min(rayon::current_num_threads()).max(1)),
        (None, None) => None,
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<i32, CliError> {
    let started = Instant::now();
    let m = load_model(&args.common)?;
    let d = m.spec.dimension();
    if args.start.is_empty() || !args.start.len().is_multiple_of(d) {
        return Err(CliError::input(format!(
            "--start needs a multiple of {d} coordinates, got {}",
            args.start.len()
        )));
    }
    let points: Vec<Vec<f64>> = args.start.chunks(d).map(<[f64]>::to_vec).collect();
    if points.len() > 1 && !args.compare {
        return Err(CliError::input("several --start points need --compare"));
    }
    let x0 = &points[0];
    let config = args.sim.config(x0)?;
    let options = RunOptions {
        workers: effective_workers(args.workers),
        allow_degenerate: args.sim.allow_degenerate,
    };
    let (n, seed) = (args.n, args.sim.seed);
    let facet = m.facet.as_ref();
    let mut mode = "estimate";

    let (report, sweep) = if d == 1 && args.sim.allow_degenerate {
        mode = "halfline";
        let sigma2 = m.spec.sigma()[(0, 0)];
        let mu = m.spec.mu()[0];
        let r = estimator::estimate_halfline(sigma2, mu, x0[0], n, &config, seed, options.workers)?;
        (to_value(&r), None)
    } else if let Some(kind) = args.sweep {
        let values = args.values.clone().unwrap_or_default();
        let s = match kind {
            SweepArg::Scale => {
                mode = "scale_sweep";
                let direction = match &args.direction {
                    Some(v) => v.clone(),
                    None => {
                        let len = crate::simulator::norm(x0);
                        if len == 0.0 {
                            return Err(CliError::input("--direction is required when the start is the apex"));
                        }
                        x0.iter().map(|v| v / len).collect()
                    }
                };
                estimator::boundary_limit_experiment(&m.spec, &direction, &values, n, &config, seed, options)?
            }
            SweepArg::Horizon => {
                mode = "horizon_sweep";
                estimator::dichotomy_experiment(&m.spec, x0, &values, n, &config, seed, options)?
            }
        };
        (to_value(&s), Some(s))
    } else if args.compare {
        mode = "compare";
        let s = estimator::compare_exponential(&m.spec, facet, &points, n, &config, seed, options)?;
        (to_value(&s), Some(s))
    } else {
        let r = estimator::estimate_absorption(&m.spec, facet, x0, n, &config, seed, options)?;
        (to_value(&r), None)
    };

    if let (Some(path), Some(s)) = (&args.csv, &sweep) {
        let mut buf = Vec::new();
        s.write_csv(&mut buf).map_err(|e| CliError::input(e.to_string()))?;
        write_file(path, &buf)?;
    }
    let summary = match &sweep {
        Some(s) => s
            .entries
            .iter()
            .map(|e| {
                let r = &e.report;
                format!(
                    "{:>10} p_hat {:.4} [{:.4}, {:.4}] undecided {}{}",
                    e.param,
                    r.p_hat,
                    r.ci_low,
                    r.ci_high,
                    r.undecided,
                    r.prediction.map(|p| format!(" prediction {p:.4}")).unwrap_or_default()
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
        None => {
            let num = |k: &str| report.get(k).and_then(Value::as_f64);
            let count = |k: &str| report.get(k).and_then(Value::as_u64).unwrap_or(0);
            let prediction = num("prediction").map(|p| format!(" prediction {p:.4}")).unwrap_or_default();
            format!(
                "p_hat {:.4} [{:.4}, {:.4}] absorbed {} escaped {} undecided {}{prediction}",
                num("p_hat").unwrap_or(f64::NAN),
                num("ci_low").unwrap_or(f64::NAN),
                num("ci_high").unwrap_or(f64::NAN),
                count("absorbed"),
                count("escaped"),
                count("undecided"),
            )
        }
    };
    emit(
        "estimate",
        &args.common,
        &m.sha256,
        started,
        Output {
            code: EXIT_OK,
            report,
            config: json!({
                "mode": mode,
                "sim": config,
                "n": n,
                "start": points,
                "facet": m.facet,
                "sweep_values": args.values,
                "direction": args.direction,
                "allow_degenerate": args.sim.allow_degenerate,
            }),
            seed: Some(seed),
            summary,
        },
    )
}

/// Dispatches a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Decay(a) => cmd_decay(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::PdeCheck(a) => cmd_pde_check(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            if let Some(detail) = e.detail {
                if let Ok(text) = serde_json::to_string_pretty(&detail) {
                    eprintln!("{text}");
                }
            }
            e.code
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}
