//! Euler simulation of the absorbed reflected Brownian motion
//! `Z = x + W + μt + R·L`.
//!
//! Each step draws `y = z + μ·dt + G·√dt·ξ` (with `G Gᵀ = Σ`) and projects it
//! back onto the orthant with a discrete Skorokhod step. A trajectory ends
//! when it enters the absorption ball, when the projection is infeasible
//! (no push can restore the orthant, which under the structural assumptions
//! only happens at the corner), when it leaves the escape ball, or at the
//! time horizon.

pub mod lcp;
pub mod rng;

use crate::matrix::lp::LpError;
use crate::matrix::{check_assumptions, AssumptionReport, MatrixError};
use crate::model::{FacetSpec, ModelSpec};
use lcp::{infeasibility_witness, SkorokhodProjector};
use rng::TrajectoryRng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("start point must be finite and non-negative, coordinate {index} is {value}")]
    InvalidStart { index: usize, value: f64 },
    #[error("start point has {found} coordinates, model has {expected}")]
    StartDimension { expected: usize, found: usize },
    #[error("structural assumptions do not hold (pass allow_degenerate for calibration runs)")]
    AssumptionsViolated(Box<AssumptionReport>),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("infeasibility witness: {0}")]
    Witness(#[from] LpError),
    #[error("infeasible projection at t = {time} not witnessed inside the facet")]
    UnwitnessedInfeasibility { time: f64, state: Vec<f64> },
    #[error("invalid halfline parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension {0} exceeds the projection limit of 20")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub eps_abs: f64,
    pub escape_radius: f64,
    pub max_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_stride: Option<usize>,
}

impl SimConfig {
    pub fn new(dt: f64, eps_abs: f64, escape_radius: f64, max_time: f64) -> Result<Self, SimError> {
        let c = Self {
            dt,
            eps_abs,
            escape_radius,
            max_time,
            path_stride: None,
        };
        c.validate()?;
        Ok(c)
    }

    /// `dt = 1e-3`, `eps_abs = 1e-3·(1+|x₀|)`, `escape_radius = 50·(1+|x₀|)`, `max_time = 100`.
    pub fn defaults_for(x0: &[f64]) -> Self {
        let scale = 1.0 + norm(x0);
        Self {
            dt: 1e-3,
            eps_abs: 1e-3 * scale,
            escape_radius: 50.0 * scale,
            max_time: 100.0,
            path_stride: None,
        }
    }

    pub fn with_path_stride(mut self, stride: usize) -> Self {
        self.path_stride = Some(stride);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.eps_abs > 0.0 && self.eps_abs < self.escape_radius) {
            return bad("need 0 < eps_abs < escape_radius");
        }
        if !(self.max_time >= self.dt) {
            return bad("max_time must be at least dt");
        }
        if self.path_stride == Some(0) {
            return bad("path_stride must be positive");
        }
        Ok(())
    }

    pub fn max_steps(&self) -> u64 {
        (self.max_time / self.dt + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Absorbed,
    Escaped,
    Undecided,
}

/// How an absorbed trajectory was stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsorptionCause {
    /// Entered the `eps_abs` ball around the apex (or the facet).
    EpsBall,
    /// No push could restore the orthant.
    InfeasibleStep,
    /// Halfline walk crossed zero.
    Crossing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub t: f64,
    pub z: Vec<f64>,
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryResult {
    pub outcome: Outcome,
    pub cause: Option<AbsorptionCause>,
    /// Elapsed simulated time: the absorption or escape time, or the horizon.
    pub time: f64,
    pub steps: u64,
    pub final_state: Vec<f64>,
    /// Accumulated pushes per face.
    pub local_time: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<PathSample>>,
}

impl TrajectoryResult {
    /// CSV with header `t,z1,...,zd,l1,...,ld`.
    pub fn write_path_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.final_state.len();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=d).map(|i| format!("z{i}")))
            .chain((1..=d).map(|i| format!("l{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for s in self.path.iter().flatten() {
            let row: Vec<String> = std::iter::once(s.t)
                .chain(s.z.iter().copied())
                .chain(s.l.iter().copied())
                .map(|v| format!("{v:?}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn facet_norm(x: &[f64], coords: &[usize]) -> f64 {
    coords.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt()
}

/// A prepared simulation: validated model, absorption target and config.
/// Cheap to share across threads; each run allocates its own scratch.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: ModelSpec,
    facet: Option<FacetSpec>,
    config: SimConfig,
    /// Coordinates whose norm decides absorption and escape.
    target: Vec<usize>,
    /// Row-major `√dt·G`, lower triangular.
    noise: Vec<f64>,
    drift: Vec<f64>,
    projector: SkorokhodProjector,
}

impl Simulator {
    /// Fails closed on models violating the structural assumptions unless
    /// `allow_degenerate` is set.
    pub fn new(
        spec: &ModelSpec,
        facet: Option<&FacetSpec>,
        config: SimConfig,
        allow_degenerate: bool,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let d = spec.dimension();
        if d > lcp::MAX_LCP_DIM {
            return Err(SimError::TooLarge(d));
        }
        if !allow_degenerate {
            let report = check_assumptions(spec, facet)?;
            if !report.all_hold() {
                return Err(SimError::AssumptionsViolated(Box::new(report)));
            }
        }
        let facet = facet.filter(|f| !f.is_full(d)).cloned();
        let target = match &facet {
            Some(f) => f.indices().to_vec(),
            None => (0..d).collect(),
        };
        let sqrt_dt = config.dt.sqrt();
        let g = spec.sigma_factor();
        let noise = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| g[(i, j)] * sqrt_dt)
            .collect();
        let drift = spec.mu().iter().map(|m| m * config.dt).collect();
        Ok(Self {
            projector: SkorokhodProjector::new(spec.reflection()),
            spec: spec.clone(),
            facet,
            config,
            target,
            noise,
            drift,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_start(&self, x0: &[f64]) -> Result<(), SimError> {
        let d = self.spec.dimension();
        if x0.len() != d {
            return Err(SimError::StartDimension {
                expected: d,
                found: x0.len(),
            });
        }
        if let Some((index, &value)) = x0.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(SimError::InvalidStart { index, value });
        }
        Ok(())
    }

    /// Runs trajectory `index` of the stream family keyed by `seed`.
    pub fn run(&self, x0: &[f64], seed: u64, index: u64) -> Result<TrajectoryResult, SimError> {
        self.check_start(x0)?;
        let d = self.spec.dimension();
        let cfg = &self.config;
        let mut projector = self.projector.clone();
        let mut rng = TrajectoryRng::new(seed, index);
        let mut z = x0.to_vec();
        let mut local = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut xi = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut push = vec![0.0; d];
        let mut path = cfg.path_stride.map(|_| {
            vec![PathSample {
                t: 0.0,
                z: z.clone(),
                l: local.clone(),
            }]
        });
        let finish = |outcome, cause, step: u64, z: Vec<f64>, local: Vec<f64>, mut path: Option<Vec<PathSample>>| {
            let t = step as f64 * cfg.dt;
            if let Some(p) = path.as_mut() {
                if p.last().is_none_or(|s| s.t != t) {
                    p.push(PathSample {
                        t,
                        z: z.clone(),
                        l: local.clone(),
                    });
                }
            }
            TrajectoryResult {
                outcome,
                cause,
                time: t,
                steps: step,
                final_state: z,
                local_time: local,
                path,
            }
        };

        let r_norm = facet_norm(&z, &self.target);
        if r_norm < cfg.eps_abs {
            return Ok(finish(Outcome::Absorbed, Some(AbsorptionCause::EpsBall), 0, z, local, path));
        }
        if r_norm > cfg.escape_radius {
            return Ok(finish(Outcome::Escaped, None, 0, z, local, path));
        }
        let max_steps = cfg.max_steps();
        for step in 1..=max_steps {
            rng.fill_normal(&mut xi);
            for i in 0..d {
                let row = &self.noise[i * d..i * d + i + 1];
                let mut s = z[i] + self.drift[i];
                for (g, e) in row.iter().zip(&xi) {
                    s += g * e;
                }
                y[i] = s;
            }
            if !projector.project_into(&y, &mut next, &mut push) {
                if let Some(f) = &self.facet {
                    if infeasibility_witness(self.spec.reflection(), &y, f.indices())?.is_none() {
                        return Err(SimError::UnwitnessedInfeasibility {
                            time: step as f64 * cfg.dt,
                            state: y,
                        });
                    }
                }
                return Ok(finish(
                    Outcome::Absorbed,
                    Some(AbsorptionCause::InfeasibleStep),
                    step,
                    z,
                    local,
                    path,
                ));
            }
            debug_assert!(next
                .iter()
                .zip(&push)
                .all(|(s, p)| (s * p).abs() <= 1e-9 * (1.0 + s.abs() + p.abs())));
            std::mem::swap(&mut z, &mut next);
            for (l, p) in local.iter_mut().zip(&push) {
                *l += p;
            }
            if let (Some(stride), Some(p)) = (cfg.path_stride, path.as_mut()) {
                if step % stride as u64 == 0 {
                    p.push(PathSample {
                        t: step as f64 * cfg.dt,
                        z: z.clone(),
                        l: local.clone(),
                    });
                }
            }
            let r_norm = facet_norm(&z, &self.target);
            if r_norm < cfg.eps_abs {
                return Ok(finish(Outcome::Absorbed, Some(AbsorptionCause::EpsBall), step, z, local, path));
            }
            if r_norm > cfg.escape_radius {
                return Ok(finish(Outcome::Escaped, None, step, z, local, path));
            }
        }
        Ok(finish(Outcome::Undecided, None, max_steps, z, local, path))
    }
}

/// Single trajectory absorbed at the apex.
pub fn simulate_trajectory(
    spec: &ModelSpec,
    x0: &[f64],
    config: SimConfig,
    seed: u64,
    index: u64,
    allow_degenerate: bool,
) -> Result<TrajectoryResult, SimError> {
    Simulator::new(spec, None, config, allow_degenerate)?.run(x0, seed, index)
}

/// Single trajectory absorbed when the facet coordinates vanish; the other
/// faces keep reflecting.
pub fn simulate_facet_trajectory(
    spec: &ModelSpec,
    facet: &FacetSpec,
    x0: &[f64],
    config: SimConfig,
    seed: u64,
    index: u64,
    allow_degenerate: bool,
) -> Result<TrajectoryResult, SimError> {
    Simulator::new(spec, Some(facet), config, allow_degenerate)?.run(x0, seed, index)
}

/// One-dimensional Brownian motion with drift, killed at 0 (no reflection)
/// and stopped at `escape_radius`. Its hitting probability
/// `exp(−2·mu·x0/sigma2)` calibrates the bias of the discrete scheme.
pub fn halfline_hitting(
    sigma2: f64,
    mu: f64,
    x0: f64,
    config: &SimConfig,
    seed: u64,
    index: u64,
) -> Result<TrajectoryResult, SimError> {
    config.validate()?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(SimError::InvalidParameter(format!("sigma2 = {sigma2}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(SimError::InvalidParameter(format!("mu = {mu}")));
    }
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(SimError::InvalidStart { index: 0, value: x0 });
    }
    let mut rng = TrajectoryRng::new(seed, index);
    let drift = mu * config.dt;
    let vol = (sigma2 * config.dt).sqrt();
    let result = |outcome, cause, step: u64, z: f64| TrajectoryResult {
        outcome,
        cause,
        time: step as f64 * config.dt,
        steps: step,
        final_state: vec![z.max(0.0)],
        local_time: vec![0.0],
        path: None,
    };
    if x0 < config.eps_abs {
        return Ok(result(Outcome::Absorbed, Some(AbsorptionCause::EpsBall), 0, x0));
    }
    let mut z = x0;
    let max_steps = config.max_steps();
    for step in 1..=max_steps {
        z += drift + vol * rng.normal();
        if z <= 0.0 {
            return Ok(result(Outcome::Absorbed, Some(AbsorptionCause::Crossing), step, z));
        }
        if z < config.eps_abs {
            return Ok(result(Outcome::Absorbed, Some(AbsorptionCause::EpsBall), step, z));
        }
        if z > config.escape_radius {
            return Ok(result(Outcome::Escaped, None, step, z));
        }
    }
    Ok(result(Outcome::Undecided, None, max_steps, z))
}
