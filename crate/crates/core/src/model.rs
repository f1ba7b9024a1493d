//! Model data: covariance, drift, reflection matrix and facet selection.
//!
//! A [`ModelSpec`] can only be built from inputs that pass [`validate_model`],
//! so every other module may assume a symmetric positive definite covariance,
//! a unit-diagonal reflection matrix and consistent dimensions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Symmetry tolerance on the covariance, absolute.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Cholesky pivots must exceed this times the largest diagonal entry.
pub const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(Violation),
    #[error("facet index {index} out of range 1..={dimension}")]
    FacetOutOfRange { index: usize, dimension: usize },
    #[error("facet indices must be non-empty and strictly increasing")]
    FacetNotIncreasing,
    #[error("wedge angle {name} = {value} outside (0, pi)")]
    AngleOutOfRange { name: &'static str, value: f64 },
}

/// A single violated model invariant together with a machine-checkable witness.
/// Indices are 0-based in memory and 1-based when serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "invariant", rename_all = "snake_case")]
pub enum Violation {
    NonPositiveDimension,
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    NonFinite {
        field: String,
    },
    NonSymmetricSigma {
        #[serde(with = "crate::one_based")]
        row: usize,
        #[serde(with = "crate::one_based")]
        col: usize,
        difference: f64,
    },
    NonPositiveDefiniteSigma {
        /// Order of the first leading principal minor that failed.
        minor_order: usize,
        /// Value of that leading principal minor (product of pivots).
        minor_value: f64,
        pivot: f64,
    },
    NonUnitDiagonal {
        #[serde(with = "crate::one_based")]
        index: usize,
        value: f64,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonPositiveDimension => write!(f, "dimension must be positive"),
            Violation::DimensionMismatch {
                field,
                expected,
                found,
            } => write!(f, "{field}: expected size {expected}, found {found}"),
            Violation::NonFinite { field } => write!(f, "{field} contains a non-finite entry"),
            Violation::NonSymmetricSigma {
                row,
                col,
                difference,
            } => write!(
                f,
                "sigma not symmetric at ({}, {}): difference {difference:e}",
                row + 1,
                col + 1
            ),
            Violation::NonPositiveDefiniteSigma {
                minor_order,
                minor_value,
                ..
            } => write!(
                f,
                "sigma not positive definite: leading minor of order {minor_order} is {minor_value}"
            ),
            Violation::NonUnitDiagonal { index, value } => write!(
                f,
                "reflection diagonal entry {} is {value}, expected exactly 1",
                index + 1
            ),
        }
    }
}

/// The on-disk model description.
///
/// ```json
/// {"dimension": 2, "sigma": [[1,0],[0,1]], "mu": [1,1],
///  "reflection": [[1,-1],[-1,1]], "facet": [1,2]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dimension: usize,
    pub sigma: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub reflection: Vec<Vec<f64>>,
    /// 1-based facet coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facet: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn into_result(self) -> Result<(), ModelError> {
        match self.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(ModelError::Invalid(v)),
        }
    }
}

/// Checks every model invariant and reports all violations found.
///
/// Dimension problems short-circuit the matrix checks, since those need
/// square inputs of the declared size.
pub fn validate_model(file: &ModelFile) -> ValidationReport {
    let mut violations = Vec::new();
    let d = file.dimension;
    if d == 0 {
        violations.push(Violation::NonPositiveDimension);
    }
    let mut shape_ok = d > 0;
    let mut check_len = |field: String, found: usize, violations: &mut Vec<Violation>| {
        if found != d {
            violations.push(Violation::DimensionMismatch {
                field,
                expected: d,
                found,
            });
            shape_ok = false;
        }
    };
    check_len("mu".into(), file.mu.len(), &mut violations);
    check_len("sigma".into(), file.sigma.len(), &mut violations);
    check_len("reflection".into(), file.reflection.len(), &mut violations);
    for (i, row) in file.sigma.iter().enumerate() {
        check_len(format!("sigma[{}]", i + 1), row.len(), &mut violations);
    }
    for (i, row) in file.reflection.iter().enumerate() {
        check_len(format!("reflection[{}]", i + 1), row.len(), &mut violations);
    }
    if !shape_ok {
        return ValidationReport {
            valid: false,
            violations,
        };
    }

    let finite = |rows: &[Vec<f64>]| rows.iter().flatten().all(|v| v.is_finite());
    if !finite(&file.sigma) {
        violations.push(Violation::NonFinite {
            field: "sigma".into(),
        });
    }
    if !file.mu.iter().all(|v| v.is_finite()) {
        violations.push(Violation::NonFinite { field: "mu".into() });
    }
    if !finite(&file.reflection) {
        violations.push(Violation::NonFinite {
            field: "reflection".into(),
        });
    }
    if !violations.is_empty() {
        return ValidationReport {
            valid: false,
            violations,
        };
    }

    let sigma = rows_to_matrix(&file.sigma);
    violations.extend(symmetry_violation(&sigma));
    if let Err(v) = cholesky(&sigma) {
        violations.push(v);
    }
    for i in 0..d {
        let value = file.reflection[i][i];
        if value != 1.0 {
            violations.push(Violation::NonUnitDiagonal { index: i, value });
        }
    }
    ValidationReport {
        valid: violations.is_empty(),
        violations,
    }
}

fn symmetry_violation(sigma: &DMatrix<f64>) -> Option<Violation> {
    let d = sigma.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let difference = (sigma[(i, j)] - sigma[(j, i)]).abs();
            if difference > SYMMETRY_TOL {
                return Some(Violation::NonSymmetricSigma {
                    row: i,
                    col: j,
                    difference,
                });
            }
        }
    }
    None
}

/// Lower-triangular Cholesky factor `G` with `G Gᵀ = sigma`.
///
/// Only the lower triangle of `sigma` is read. Fails on the first pivot not
/// exceeding `PIVOT_TOL` times the largest diagonal entry, reporting the
/// corresponding leading principal minor.
pub fn cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>, Violation> {
    let d = sigma.nrows();
    let max_diag = (0..d).map(|i| sigma[(i, i)].abs()).fold(0.0, f64::max);
    let tol = PIVOT_TOL * max_diag;
    let mut g = DMatrix::<f64>::zeros(d, d);
    let mut minor = 1.0;
    for j in 0..d {
        let mut pivot = sigma[(j, j)];
        for k in 0..j {
            pivot -= g[(j, k)] * g[(j, k)];
        }
        minor *= pivot;
        if !(pivot > tol) {
            return Err(Violation::NonPositiveDefiniteSigma {
                minor_order: j + 1,
                minor_value: minor,
                pivot,
            });
        }
        let root = pivot.sqrt();
        g[(j, j)] = root;
        for i in (j + 1)..d {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= g[(i, k)] * g[(j, k)];
            }
            g[(i, j)] = s / root;
        }
    }
    Ok(g)
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// A validated model `(Σ, μ, R)`. Column `j` of `reflection` is the push
/// direction on the face `x_j = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
    reflection: DMatrix<f64>,
    sigma_factor: DMatrix<f64>,
}

impl ModelSpec {
    pub fn new(
        sigma: DMatrix<f64>,
        mu: DVector<f64>,
        reflection: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let file = ModelFile {
            dimension: mu.len(),
            sigma: matrix_to_rows(&sigma),
            mu: mu.iter().copied().collect(),
            reflection: matrix_to_rows(&reflection),
            facet: None,
        };
        Self::from_file(&file)
    }

    /// Row-major convenience constructor.
    pub fn from_rows(
        sigma: &[Vec<f64>],
        mu: &[f64],
        reflection: &[Vec<f64>],
    ) -> Result<Self, ModelError> {
        Self::from_file(&ModelFile {
            dimension: mu.len(),
            sigma: sigma.to_vec(),
            mu: mu.to_vec(),
            reflection: reflection.to_vec(),
            facet: None,
        })
    }

    pub fn from_file(file: &ModelFile) -> Result<Self, ModelError> {
        validate_model(file).into_result()?;
        let sigma = rows_to_matrix(&file.sigma);
        let sigma_factor = cholesky(&sigma).map_err(ModelError::Invalid)?;
        Ok(Self {
            sigma,
            mu: DVector::from_column_slice(&file.mu),
            reflection: rows_to_matrix(&file.reflection),
            sigma_factor,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn reflection(&self) -> &DMatrix<f64> {
        &self.reflection
    }

    /// Lower-triangular `G` with `G Gᵀ = Σ`.
    pub fn sigma_factor(&self) -> &DMatrix<f64> {
        &self.sigma_factor
    }

    pub fn to_file(&self, facet: Option<&FacetSpec>) -> ModelFile {
        ModelFile {
            dimension: self.dimension(),
            sigma: matrix_to_rows(&self.sigma),
            mu: self.mu.iter().copied().collect(),
            reflection: matrix_to_rows(&self.reflection),
            facet: facet.map(FacetSpec::one_based),
        }
    }

    /// The model restricted to the facet coordinates. Principal blocks of a
    /// valid model are valid, so this cannot fail once the facet fits.
    pub fn restrict(&self, facet: &FacetSpec) -> Result<ModelSpec, ModelError> {
        let blocks = facet_restrict(self, facet)?;
        ModelSpec::new(blocks.sigma, blocks.mu, blocks.reflection)
    }
}

/// Coordinates `{i₁ < … < i_k}` of a facet of the orthant, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FacetSpec {
    indices: Vec<usize>,
}

impl FacetSpec {
    /// Builds a facet from 1-based coordinates, as used in every external format.
    pub fn from_one_based(indices: &[usize], dimension: usize) -> Result<Self, ModelError> {
        if indices.is_empty() || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::FacetNotIncreasing);
        }
        if let Some(&index) = indices.iter().find(|&&i| i == 0 || i > dimension) {
            return Err(ModelError::FacetOutOfRange { index, dimension });
        }
        Ok(Self {
            indices: indices.iter().map(|i| i - 1).collect(),
        })
    }

    pub fn from_zero_based(indices: &[usize], dimension: usize) -> Result<Self, ModelError> {
        let one: Vec<usize> = indices.iter().map(|i| i + 1).collect();
        Self::from_one_based(&one, dimension)
    }

    pub fn full(dimension: usize) -> Self {
        Self {
            indices: (0..dimension).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_full(&self, dimension: usize) -> bool {
        self.indices.len() == dimension
    }
}

impl Serialize for FacetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

/// Principal sub-blocks `(Σ̃, μ̃, R̃)` selected by a facet.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetBlocks {
    pub sigma: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub reflection: DMatrix<f64>,
}

pub fn principal_submatrix(m: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(indices.len(), indices.len(), |i, j| {
        m[(indices[i], indices[j])]
    })
}

pub fn facet_restrict(spec: &ModelSpec, facet: &FacetSpec) -> Result<FacetBlocks, ModelError> {
    let d = spec.dimension();
    if let Some(&i) = facet.indices().iter().find(|&&i| i >= d) {
        return Err(ModelError::FacetOutOfRange {
            index: i + 1,
            dimension: d,
        });
    }
    let idx = facet.indices();
    Ok(FacetBlocks {
        sigma: principal_submatrix(spec.sigma(), idx),
        mu: DVector::from_iterator(idx.len(), idx.iter().map(|&i| spec.mu()[i])),
        reflection: principal_submatrix(spec.reflection(), idx),
    })
}

/// Wedge opening `beta` and reflection angles `delta`, `epsilon`, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeAngles {
    beta: f64,
    delta: f64,
    epsilon: f64,
}

impl WedgeAngles {
    pub fn new(beta: f64, delta: f64, epsilon: f64) -> Result<Self, ModelError> {
        for (name, value) in [("beta", beta), ("delta", delta), ("epsilon", epsilon)] {
            if !(value > 0.0 && value < PI) {
                return Err(ModelError::AngleOutOfRange { name, value });
            }
        }
        Ok(Self {
            beta,
            delta,
            epsilon,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// `α = (δ + ε − π) / β`.
pub fn compute_alpha(angles: &WedgeAngles) -> f64 {
    (angles.delta + angles.epsilon - PI) / angles.beta
}
