//! Monte Carlo estimates of absorption probabilities and the sweeps built on
//! them.
//!
//! Trajectory `i` of a run always uses random stream `(seed, i)`, and results
//! are aggregated as integer counts, so reports do not depend on the number
//! of workers. Sweeps reuse the same seed for every entry (common random
//! numbers), which keeps neighbouring entries strongly coupled.

use crate::decay::{classify, compute_decay_vector, predicted_absorption, DecayError, Normalization, Verdict};
use crate::model::{FacetSpec, ModelSpec};
use crate::simulator::{halfline_hitting, norm, AbsorptionCause, Outcome, SimConfig, SimError, Simulator, TrajectoryResult};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;
/// Reports with more undecided trajectories than this fraction are flagged.
pub const UNRELIABLE_UNDECIDED: f64 = 0.05;
/// Additive allowance for the discretization bias in closed-form comparisons.
pub const BIAS_ALLOWANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("number of trajectories must be at least 1")]
    NoTrajectories,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Decay(#[from] DecayError),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    assert!(n > 0 && successes <= n, "wilson_interval needs 0 <= successes <= n, n > 0");
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    let lo = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if successes == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    (lo, hi)
}

/// Binomial standard deviation of a proportion `p` estimated from `n` draws.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// `max(3σ, floor)` with σ the binomial standard deviation at `prediction`.
pub fn closed_form_tolerance(prediction: f64, n: u64, floor: f64) -> f64 {
    (3.0 * binomial_sigma(prediction, n)).max(floor)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CauseCounts {
    pub eps_ball: u64,
    pub infeasible_step: u64,
    pub crossing: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    absorbed: u64,
    escaped: u64,
    undecided: u64,
    causes: CauseCounts,
}

impl Counts {
    fn add(mut self, r: &TrajectoryResult) -> Self {
        match r.outcome {
            Outcome::Absorbed => self.absorbed += 1,
            Outcome::Escaped => self.escaped += 1,
            Outcome::Undecided => self.undecided += 1,
        }
        match r.cause {
            Some(AbsorptionCause::EpsBall) => self.causes.eps_ball += 1,
            Some(AbsorptionCause::InfeasibleStep) => self.causes.infeasible_step += 1,
            Some(AbsorptionCause::Crossing) => self.causes.crossing += 1,
            None => {}
        }
        self
    }

    fn merge(self, o: Self) -> Self {
        Self {
            absorbed: self.absorbed + o.absorbed,
            escaped: self.escaped + o.escaped,
            undecided: self.undecided + o.undecided,
            causes: CauseCounts {
                eps_ball: self.causes.eps_ball + o.causes.eps_ball,
                infeasible_step: self.causes.infeasible_step + o.causes.infeasible_step,
                crossing: self.causes.crossing + o.causes.crossing,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub n: u64,
    pub absorbed: u64,
    pub escaped: u64,
    pub undecided: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `absorbed / n`.
    pub p_lower_bound: f64,
    /// `(absorbed + undecided) / n`.
    pub p_upper_bound: f64,
    pub prediction: Option<f64>,
    /// `(p_hat − prediction) / σ` with σ the binomial standard deviation at
    /// the prediction; absent when σ is zero.
    pub z_score: Option<f64>,
    pub start: Vec<f64>,
    pub unreliable: bool,
    pub causes: CauseCounts,
}

impl EstimateReport {
    fn from_counts(n: u64, c: Counts, start: Vec<f64>, prediction: Option<f64>) -> Self {
        let n_f = n as f64;
        let p_hat = c.absorbed as f64 / n_f;
        let (ci_low, ci_high) = wilson_interval(c.absorbed, n, Z95);
        Self {
            n,
            absorbed: c.absorbed,
            escaped: c.escaped,
            undecided: c.undecided,
            p_hat,
            ci_low,
            ci_high,
            p_lower_bound: p_hat,
            p_upper_bound: (c.absorbed + c.undecided) as f64 / n_f,
            prediction,
            z_score: prediction.and_then(|p| z_score(p_hat, p, n)),
            start,
            unreliable: c.undecided as f64 > UNRELIABLE_UNDECIDED * n_f,
            causes: c.causes,
        }
    }

    pub fn undecided_fraction(&self) -> f64 {
        self.undecided as f64 / self.n as f64
    }

    /// `|p_hat − prediction| ≤ max(3σ, floor)`; false without a prediction.
    pub fn matches_prediction(&self, floor: f64) -> bool {
        self.prediction
            .is_some_and(|p| (self.p_hat - p).abs() <= closed_form_tolerance(p, self.n, floor))
    }
}

fn z_score(p_hat: f64, prediction: f64, n: u64) -> Option<f64> {
    let s = binomial_sigma(prediction, n);
    (s > 0.0).then(|| (p_hat - prediction) / s)
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Admit models that violate the structural assumptions.
    pub allow_degenerate: bool,
}

fn run_counts<F>(n: u64, workers: Option<usize>, run: F) -> Result<Counts, EstimateError>
where
    F: Fn(u64) -> Result<TrajectoryResult, SimError> + Sync,
{
    if n == 0 {
        return Err(EstimateError::NoTrajectories);
    }
    let job = || {
        (0..n)
            .into_par_iter()
            .try_fold(Counts::default, |acc, i| run(i).map(|r| acc.add(&r)))
            .try_reduce(Counts::default, |a, b| Ok(a.merge(b)))
    };
    let counts = match workers {
        None => job(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| EstimateError::Pool(e.to_string()))?
            .install(job),
    }?;
    Ok(counts)
}

/// Harmonic prediction for the apex or facet, when the model is dual skew
/// symmetric.
fn harmonic_prediction(spec: &ModelSpec, facet: Option<&FacetSpec>, x: &[f64]) -> Option<f64> {
    let class = classify(spec, facet).ok()?;
    if class.verdict != Verdict::DualSkewSymmetric {
        return None;
    }
    let decay = compute_decay_vector(spec, facet, Normalization::Harmonic).ok()?;
    Some(predicted_absorption(&decay, x))
}

/// Runs trajectories `0..n` from `x` and reports the absorbed fraction.
pub fn estimate_absorption(
    spec: &ModelSpec,
    facet: Option<&FacetSpec>,
    x: &[f64],
    n: u64,
    config: &SimConfig,
    seed: u64,
    options: RunOptions,
) -> Result<EstimateReport, EstimateError> {
    let sim = Simulator::new(spec, facet, *config, options.allow_degenerate)?;
    let prediction = if x.len() == spec.dimension() {
        harmonic_prediction(spec, facet, x)
    } else {
        None
    };
    let counts = run_counts(n, options.workers, |i| sim.run(x, seed, i))?;
    Ok(EstimateReport::from_counts(n, counts, x.to_vec(), prediction))
}

/// Calibration run of [`halfline_hitting`]; the prediction is
/// `exp(−2·mu·x0/sigma2)`.
pub fn estimate_halfline(
    sigma2: f64,
    mu: f64,
    x0: f64,
    n: u64,
    config: &SimConfig,
    seed: u64,
    workers: Option<usize>,
) -> Result<EstimateReport, EstimateError> {
    // Surface parameter errors before spawning work.
    halfline_hitting(sigma2, mu, x0, &SimConfig { max_time: config.dt, ..*config }, seed, 0)?;
    let counts = run_counts(n, workers, |i| halfline_hitting(sigma2, mu, x0, config, seed, i))?;
    let prediction = (-2.0 * mu * x0 / sigma2).exp();
    Ok(EstimateReport::from_counts(n, counts, vec![x0], Some(prediction)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Parameter is the 1-based position in the list of points.
    Point,
    Scale,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub param: f64,
    pub report: EstimateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper_literal_prediction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper_literal_z_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomyCheck {
    pub undecided_fractions: Vec<f64>,
    /// Each fraction is at most the previous one plus twice their joint
    /// binomial standard deviation.
    pub non_increasing: bool,
    pub terminal_below_one_percent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub entries: Vec<SweepEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dichotomy: Option<DichotomyCheck>,
}

impl SweepReport {
    /// CSV with header `param,p_hat,ci_low,ci_high,prediction`; a missing
    /// prediction is an empty field.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "param,p_hat,ci_low,ci_high,prediction")?;
        for e in &self.entries {
            let r = &e.report;
            let pred = r.prediction.map(|p| format!("{p:?}")).unwrap_or_default();
            writeln!(w, "{:?},{:?},{:?},{:?},{}", e.param, r.p_hat, r.ci_low, r.ci_high, pred)?;
        }
        Ok(())
    }
}

/// Estimates at each point alongside the Harmonic and PaperLiteral
/// predictions.
pub fn compare_exponential(
    spec: &ModelSpec,
    facet: Option<&FacetSpec>,
    points: &[Vec<f64>],
    n: u64,
    config: &SimConfig,
    seed: u64,
    options: RunOptions,
) -> Result<SweepReport, EstimateError> {
    let class = classify(spec, facet)?;
    if class.verdict != Verdict::DualSkewSymmetric {
        return Err(DecayError::WrongClassification(class.verdict).into());
    }
    let literal = compute_decay_vector(spec, facet, Normalization::PaperLiteral)?;
    let sim = Simulator::new(spec, facet, *config, options.allow_degenerate)?;
    let harmonic = compute_decay_vector(spec, facet, Normalization::Harmonic)?;
    let entries = points
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let counts = run_counts(n, options.workers, |i| sim.run(x, seed, i))?;
            let pred = predicted_absorption(&harmonic, x);
            let report = EstimateReport::from_counts(n, counts, x.clone(), Some(pred));
            let lit = predicted_absorption(&literal, x);
            Ok(SweepEntry {
                param: (k + 1) as f64,
                paper_literal_z_score: z_score(report.p_hat, lit, n),
                paper_literal_prediction: Some(lit),
                report,
            })
        })
        .collect::<Result<Vec<_>, EstimateError>>()?;
    Ok(SweepReport {
        kind: SweepKind::Point,
        entries,
        dichotomy: None,
    })
}

/// Estimates at `x = scale·direction` for each scale (sorted ascending).
/// The escape radius of each entry is `config.escape_radius + scale`, so
/// every start keeps the same margin to the escape sphere.
pub fn boundary_limit_experiment(
    spec: &ModelSpec,
    direction: &[f64],
    scales: &[f64],
    n: u64,
    config: &SimConfig,
    seed: u64,
    options: RunOptions,
) -> Result<SweepReport, EstimateError> {
    if direction.len() != spec.dimension() || direction.iter().any(|&v| !(v > 0.0)) {
        return Err(EstimateError::InvalidSweep("direction must be strictly positive".into()));
    }
    if (norm(direction) - 1.0).abs() > 1e-9 {
        return Err(EstimateError::InvalidSweep("direction must be a unit vector".into()));
    }
    if scales.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(EstimateError::InvalidSweep("scales must be finite and non-negative".into()));
    }
    let mut sorted = scales.to_vec();
    sorted.sort_by(f64::total_cmp);
    let prediction_available = harmonic_prediction(spec, None, direction).is_some();
    let entries = sorted
        .iter()
        .map(|&s| {
            let x: Vec<f64> = direction.iter().map(|d| d * s).collect();
            let cfg = SimConfig {
                escape_radius: config.escape_radius + s,
                ..*config
            };
            let mut report = estimate_absorption(spec, None, &x, n, &cfg, seed, options)?;
            if !prediction_available {
                report.prediction = None;
                report.z_score = None;
            }
            Ok(SweepEntry {
                param: s,
                report,
                paper_literal_prediction: None,
                paper_literal_z_score: None,
            })
        })
        .collect::<Result<Vec<_>, EstimateError>>()?;
    Ok(SweepReport {
        kind: SweepKind::Scale,
        entries,
        dichotomy: None,
    })
}

/// Undecided fraction as a function of the horizon.
pub fn dichotomy_experiment(
    spec: &ModelSpec,
    x: &[f64],
    horizons: &[f64],
    n: u64,
    config: &SimConfig,
    seed: u64,
    options: RunOptions,
) -> Result<SweepReport, EstimateError> {
    if horizons.is_empty() {
        return Err(EstimateError::InvalidSweep("no horizons".into()));
    }
    let mut sorted = horizons.to_vec();
    sorted.sort_by(f64::total_cmp);
    let entries = sorted
        .iter()
        .map(|&h| {
            let cfg = SimConfig { max_time: h, ..*config };
            let report = estimate_absorption(spec, None, x, n, &cfg, seed, options)?;
            Ok(SweepEntry {
                param: h,
                report,
                paper_literal_prediction: None,
                paper_literal_z_score: None,
            })
        })
        .collect::<Result<Vec<_>, EstimateError>>()?;
    let fractions: Vec<f64> = entries.iter().map(|e| e.report.undecided_fraction()).collect();
    let non_increasing = fractions.windows(2).all(|w| {
        let joint = (binomial_sigma(w[0], n).powi(2) + binomial_sigma(w[1], n).powi(2)).sqrt();
        w[1] <= w[0] + 2.0 * joint
    });
    let terminal = *fractions.last().expect("non-empty horizons");
    Ok(SweepReport {
        kind: SweepKind::Horizon,
        entries,
        dichotomy: Some(DichotomyCheck {
            undecided_fractions: fractions,
            non_increasing,
            terminal_below_one_percent: terminal < 0.01,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Solves `(p̂ − p)² n = z² p(1 − p)` for `p` directly.
    fn wilson_oracle(k: u64, n: u64, z: f64) -> (f64, f64) {
        let (n, p) = (n as f64, k as f64 / n as f64);
        let a = n + z * z;
        let b = -(2.0 * n * p + z * z);
        let c = n * p * p;
        let disc = (b * b - 4.0 * a * c).sqrt();
        ((-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a))
    }

    fn e1() -> ModelSpec {
        ModelSpec::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[1.0, 1.0],
            &[vec![1.0, -1.0], vec![-1.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn wilson_reference_value() {
        let (lo, hi) = wilson_interval(1353, 10_000, Z95);
        assert_abs_diff_eq!(lo, 0.1288, epsilon = 1e-4);
        assert_abs_diff_eq!(hi, 0.1421, epsilon = 1e-4);
    }

    #[test]
    fn wilson_matches_quadratic_oracle() {
        for &(k, n) in &[(0u64, 10u64), (1, 10), (5, 10), (10, 10), (37, 1000), (999, 1000)] {
            let (lo, hi) = wilson_interval(k, n, Z95);
            let (olo, ohi) = wilson_oracle(k, n, Z95);
            assert_abs_diff_eq!(lo, olo.max(0.0), epsilon = 1e-12);
            assert_abs_diff_eq!(hi, ohi.min(1.0), epsilon = 1e-12);
            let p = k as f64 / n as f64;
            assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }
    }

    #[test]
    fn tolerance_rule() {
        assert_abs_diff_eq!(closed_form_tolerance(0.5, 100, 0.02), 0.15, epsilon = 1e-15);
        assert_eq!(closed_form_tolerance(0.1353, 100_000, 0.02), 0.02);
    }

    #[test]
    fn start_at_apex_is_certain() {
        let cfg = SimConfig::new(1e-3, 1e-3, 6.0, 10.0).unwrap();
        let r = estimate_absorption(&e1(), None, &[0.0, 0.0], 50, &cfg, 1, RunOptions::default()).unwrap();
        assert_eq!(r.absorbed, 50);
        assert_eq!(r.p_hat, 1.0);
        assert_eq!(r.ci_high, 1.0);
        assert_abs_diff_eq!(r.ci_low, wilson_oracle(50, 50, Z95).0, epsilon = 1e-12);
        assert_eq!(r.prediction, Some(1.0));
        assert_eq!(r.z_score, None);
    }

    #[test]
    fn counts_are_worker_independent() {
        let cfg = SimConfig::new(1e-3, 2e-3, 3.0, 20.0).unwrap();
        let run = |w| {
            estimate_absorption(
                &e1(),
                None,
                &[0.5, 0.5],
                300,
                &cfg,
                11,
                RunOptions { workers: Some(w), allow_degenerate: false },
            )
            .unwrap()
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one.absorbed + one.escaped + one.undecided, 300);
    }

    #[test]
    fn zero_trajectories_rejected() {
        let cfg = SimConfig::new(1e-3, 2e-3, 3.0, 20.0).unwrap();
        assert!(matches!(
            estimate_absorption(&e1(), None, &[0.5, 0.5], 0, &cfg, 1, RunOptions::default()),
            Err(EstimateError::NoTrajectories)
        ));
    }

    #[test]
    fn compare_predictions_at_e1() {
        let cfg = SimConfig::new(1e-3, 2e-3, 3.0, 20.0).unwrap();
        let s = compare_exponential(&e1(), None, &[vec![0.5, 0.5], vec![0.0, 0.0]], 20, &cfg, 1, RunOptions::default())
            .unwrap();
        assert_abs_diff_eq!(s.entries[0].report.prediction.unwrap(), (-2.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.entries[0].paper_literal_prediction.unwrap(), (-1.0f64).exp(), epsilon = 1e-12);
        assert_eq!(s.entries[1].report.prediction, Some(1.0));
        assert_eq!(s.entries[1].paper_literal_prediction, Some(1.0));
    }

    #[test]
    fn one_step_horizon_leaves_interior_starts_undecided() {
        let cfg = SimConfig::new(1e-3, 2e-3, 6.0, 1.0).unwrap();
        let s = dichotomy_experiment(&e1(), &[1.0, 1.0], &[1e-3], 200, &cfg, 5, RunOptions::default()).unwrap();
        assert_eq!(s.entries[0].report.undecided, 200);
        assert!(s.entries[0].report.unreliable);
    }

    #[test]
    fn sweep_csv_layout() {
        let cfg = SimConfig::new(1e-3, 2e-3, 3.0, 20.0).unwrap();
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let s = boundary_limit_experiment(&e1(), &[d, d], &[0.5, 0.0], 20, &cfg, 1, RunOptions::default()).unwrap();
        assert_eq!(s.entries[0].param, 0.0);
        assert_eq!(s.entries[0].report.p_hat, 1.0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("param,p_hat,ci_low,ci_high,prediction\n0.0,1.0,"));
        assert_eq!(text.lines().count(), 3);
        assert!(boundary_limit_experiment(&e1(), &[1.0, 1.0], &[0.5], 20, &cfg, 1, RunOptions::default()).is_err());
    }

    #[test]
    fn halfline_prediction_attached() {
        let cfg = SimConfig::new(1e-3, 1e-3, 5.0, 100.0).unwrap();
        let r = estimate_halfline(4.0, 1.0, 1.0, 10, &cfg, 1, Some(1)).unwrap();
        assert_abs_diff_eq!(r.prediction.unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        assert!(estimate_halfline(1.0, 0.0, 1.0, 10, &cfg, 1, None).is_err());
    }
}
