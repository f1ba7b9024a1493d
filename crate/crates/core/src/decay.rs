//! Classification of a model and the exponential decay vector.
//!
//! Under the structural assumptions the absorption probability is
//! `exp(a·x)` exactly when `det R = 0`; then `a` is the left kernel vector of
//! `R`, scaled so that `exp(a·x)` is harmonic for the generator
//! `½∇·Σ∇ + μ·∇`. The classical skew-symmetry analytics for the recurrent
//! case live here as well.

use crate::matrix::{self, check_assumptions, lemma2_certificate, AssumptionReport, MatrixError};
use crate::model::{facet_restrict, FacetSpec, ModelError, ModelSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `det R = 0` is decided as `σ_min ≤ SINGULAR_TOL · σ_max`.
pub const SINGULAR_TOL: f64 = 1e-9;
pub const SKEW_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecayError {
    #[error("model is classified {0:?}, expected DualSkewSymmetric")]
    WrongClassification(Verdict),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("quadratic form a'Σa' is not positive ({0:e})")]
    ZeroQuadraticForm(f64),
    #[error("reflection matrix is singular (σ_min/σ_max = {0:e})")]
    SingularReflection(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `½aΣaᵀ + a·μ = 0`, the zero set of the generator's symbol.
    #[default]
    Harmonic,
    /// `aΣaᵀ + a·μ = 0`, the quadric as printed without the factor ½.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    DualSkewSymmetric,
    NoExponentialForm,
    AssumptionsViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub det_r: f64,
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
    pub assumption_report: AssumptionReport,
}

fn reflection_block(spec: &ModelSpec, facet: Option<&FacetSpec>) -> Result<DMatrix<f64>, DecayError> {
    Ok(match facet {
        None => spec.reflection().clone(),
        Some(f) => facet_restrict(spec, f)?.reflection,
    })
}

pub fn classify(spec: &ModelSpec, facet: Option<&FacetSpec>) -> Result<Classification, DecayError> {
    let r = reflection_block(spec, facet)?;
    let assumption_report = check_assumptions(spec, facet)?;
    let sv = matrix::singular_values(&r);
    let (smallest, largest) = (sv.min(), sv.max());
    let verdict = if !assumption_report.all_hold() {
        Verdict::AssumptionsViolated
    } else if smallest <= SINGULAR_TOL * largest {
        Verdict::DualSkewSymmetric
    } else {
        Verdict::NoExponentialForm
    };
    Ok(Classification {
        verdict,
        det_r: r.clone().determinant(),
        smallest_singular_value: smallest,
        largest_singular_value: largest,
        assumption_report,
    })
}

/// The exponent of `exp(a·x)`, over `coordinates` (all of them at the apex,
/// the facet coordinates otherwise).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayVector {
    pub a: Vec<f64>,
    #[serde(with = "crate::one_based::vec")]
    pub coordinates: Vec<usize>,
    pub normalization: Normalization,
    /// Positive left kernel vector `a'` the decay vector is scaled from.
    pub a_prime: Vec<f64>,
    /// `a'Σa'ᵀ`.
    pub quad: f64,
    /// `a'·μ`.
    pub drift_projection: f64,
}

impl DecayVector {
    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.a)
    }
}

/// Scales a left kernel vector `a' > 0` onto the quadric selected by `normalization`.
///
/// Writing `a = k·a'`, harmonicity `½k²q + k·m = 0` gives `k = −2m/q`; the
/// literal quadric `k²q + k·m = 0` gives `k = −m/q`.
pub fn scale_left_kernel(
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
    a_prime: &DVector<f64>,
    normalization: Normalization,
) -> Result<(DVector<f64>, f64, f64), DecayError> {
    let quad = (a_prime.transpose() * sigma * a_prime)[(0, 0)];
    let proj = a_prime.dot(mu);
    if !(quad > 0.0) {
        return Err(DecayError::ZeroQuadraticForm(quad));
    }
    let k = match normalization {
        Normalization::Harmonic => -2.0 * proj / quad,
        Normalization::PaperLiteral => -proj / quad,
    };
    Ok((a_prime * k, quad, proj))
}

pub fn compute_decay_vector(
    spec: &ModelSpec,
    facet: Option<&FacetSpec>,
    normalization: Normalization,
) -> Result<DecayVector, DecayError> {
    let class = classify(spec, facet)?;
    if class.verdict != Verdict::DualSkewSymmetric {
        return Err(DecayError::WrongClassification(class.verdict));
    }
    let (sigma, mu, r, coordinates) = match facet {
        None => (
            spec.sigma().clone(),
            spec.mu().clone(),
            spec.reflection().clone(),
            (0..spec.dimension()).collect(),
        ),
        Some(f) => {
            let b = facet_restrict(spec, f)?;
            (b.sigma, b.mu, b.reflection, f.indices().to_vec())
        }
    };
    let cert = lemma2_certificate(&r)?;
    let a_prime = cert.left_kernel_vector();
    let (a, quad, proj) = scale_left_kernel(&sigma, &mu, &a_prime, normalization)?;
    Ok(DecayVector {
        a: a.iter().copied().collect(),
        coordinates,
        normalization,
        a_prime: cert.left_kernel,
        quad,
        drift_projection: proj,
    })
}

/// `exp(a·x)` restricted to the decay vector's coordinates. `x` is a full
/// point of the orthant.
pub fn predicted_absorption(decay: &DecayVector, x: &[f64]) -> f64 {
    decay
        .coordinates
        .iter()
        .zip(&decay.a)
        .map(|(&i, &a)| a * x[i])
        .sum::<f64>()
        .exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkewSymmetryCheck {
    pub holds: bool,
    pub residual: f64,
}

fn check_dims(sigma: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(), DecayError> {
    if sigma.shape() != r.shape() || !sigma.is_square() {
        return Err(DecayError::DimensionMismatch(format!(
            "sigma {:?}, reflection {:?}",
            sigma.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// `‖2Σ − R·diagΣ − diagΣ·Rᵀ‖∞` against a relative threshold.
pub fn check_skew_symmetry(
    sigma: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<SkewSymmetryCheck, DecayError> {
    check_dims(sigma, r)?;
    let diag = DMatrix::from_diagonal(&sigma.diagonal());
    let left = r * &diag;
    let right = &diag * r.transpose();
    let residual = matrix::inf_norm(&(sigma * 2.0 - &left - &right));
    let scale = (2.0 * matrix::inf_norm(sigma))
        .max(matrix::inf_norm(&left))
        .max(1.0);
    Ok(SkewSymmetryCheck {
        holds: residual <= SKEW_TOL * scale,
        residual,
    })
}

/// Rates `c` of the product-form density `exp(−c·x)` in the recurrent,
/// skew-symmetric case. Meaningful only under skew symmetry with a drift that
/// makes the process recurrent; neither is checked here.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryRates {
    pub c: Vec<f64>,
}

/// `c = −2·(diagΣ)⁻¹·R⁻¹·μ`.
pub fn stationary_rates(
    sigma: &DMatrix<f64>,
    r: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> Result<StationaryRates, DecayError> {
    check_dims(sigma, r)?;
    let sv = matrix::singular_values(r);
    if sv.min() <= SINGULAR_TOL * sv.max() {
        return Err(DecayError::SingularReflection(sv.min() / sv.max()));
    }
    let w = r
        .clone()
        .lu()
        .solve(mu)
        .ok_or(DecayError::SingularReflection(0.0))?;
    let c = w
        .iter()
        .zip(sigma.diagonal().iter())
        .map(|(w, s)| -2.0 * w / s)
        .collect();
    Ok(StationaryRates { c })
}

/// `R* = 2Σ − R·diag(Σ)`.
pub fn dual_boundary_matrix(
    sigma: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, DecayError> {
    check_dims(sigma, r)?;
    Ok(sigma * 2.0 - r * DMatrix::from_diagonal(&sigma.diagonal()))
}
