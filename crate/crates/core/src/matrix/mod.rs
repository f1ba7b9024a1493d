//! S-matrix and completely-S decisions with certificates, the structural
//! assumptions on the reflection matrix, and the positive-kernel certificate
//! for singular reflection matrices.

pub mod lp;
pub mod perron;

use crate::model::{principal_submatrix, FacetSpec, ModelSpec};
use itertools::Itertools;
use lp::LpError;
use nalgebra::{DMatrix, DVector};
use perron::power_iteration;
use serde::Serialize;
use thiserror::Error;

/// Optimal values within this distance of zero are not trusted as a positive verdict.
pub const S_TOL: f64 = 1e-9;
/// Exhaustive subset enumeration limit.
pub const MAX_ENUMERATION_DIM: usize = 20;
/// Relative singular value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Perron roots further than this from 2 abort the kernel construction.
pub const PERRON_ABORT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension {0} exceeds the subset enumeration limit {MAX_ENUMERATION_DIM}")]
    TooLarge(usize),
    #[error("S-membership indeterminate: LP value {lp_value:e}, no certificate validated")]
    Indeterminate { lp_value: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("principal sub-matrix {0:?} (1-based) is not S")]
    SubmatrixNotS(Vec<usize>),
    #[error("row {0} (1-based) yields a non-negative corner value; the matrix is S")]
    MatrixIsS(usize),
    #[error("Perron root {0} differs from 2; assumptions violated or det R != 0")]
    PerronRootMismatch(f64),
    #[error("kernel vector has a non-positive entry {0:e}")]
    NonPositiveKernel(f64),
    #[error("matrix must have dimension at least 2")]
    TooSmall,
}

/// Outcome of the S-membership test. Exactly one of `primal` and `dual` is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SCertificate {
    pub verdict: bool,
    /// `x ≥ 0`, `Σx = 1`, `min(Mx) > 0`.
    pub primal: Option<Vec<f64>>,
    /// `u ≥ 0`, `Σu = 1`, `max(uᵀM) ≤ S_TOL·‖M‖∞`.
    pub dual: Option<Vec<f64>>,
    /// Optimal value of `max_x min_i (Mx)_i` over the simplex.
    pub lp_value: f64,
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn validate_primal(m: &DMatrix<f64>, x: &[f64]) -> bool {
    let x = DVector::from_column_slice(x);
    x.iter().all(|&v| v >= 0.0) && (m * &x).min() > 0.0
}

pub fn validate_dual(m: &DMatrix<f64>, u: &[f64]) -> bool {
    let sum: f64 = u.iter().sum();
    let u = DVector::from_column_slice(u);
    u.iter().all(|&v| v >= 0.0)
        && (sum - 1.0).abs() <= 1e-12
        && (u.transpose() * m).max() <= S_TOL * inf_norm(m)
}

fn clean_simplex_point(x: Vec<f64>) -> Vec<f64> {
    let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
    let s: f64 = x.iter().sum();
    x.into_iter().map(|v| v / s).collect()
}

fn check_square(m: &DMatrix<f64>) -> Result<usize, MatrixError> {
    if m.nrows() != m.ncols() {
        return Err(MatrixError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Decides whether some `x ≥ 0` has `Mx > 0`.
///
/// Solves `max t` s.t. `Mx ≥ t·1`, `Σx = 1`, `x ≥ 0` for the primal side and
/// the transposed game `min s` s.t. `uᵀM ≤ s·1`, `Σu = 1`, `u ≥ 0` for the
/// Ville alternative. Zero optimal value (the singular case that matters
/// here) is a valid negative verdict as long as the dual certificate checks.
pub fn is_s_matrix(m: &DMatrix<f64>) -> Result<SCertificate, MatrixError> {
    let n = check_square(m)?;
    if n == 0 {
        return Err(MatrixError::TooSmall);
    }
    let (t, x) = lp::max_min_over_simplex(n, n, |i, j| m[(i, j)])?;
    if t > S_TOL {
        let x = clean_simplex_point(x);
        if validate_primal(m, &x) {
            return Ok(SCertificate {
                verdict: true,
                primal: Some(x),
                dual: None,
                lp_value: t,
            });
        }
        return Err(MatrixError::Indeterminate { lp_value: t });
    }
    // max_u min_j (−uᵀM)_j = −min_u max_j (uᵀM)_j
    let (neg_s, u) = lp::max_min_over_simplex(n, n, |j, i| -m[(i, j)])?;
    let u = clean_simplex_point(u);
    if validate_dual(m, &u) {
        return Ok(SCertificate {
            verdict: false,
            primal: None,
            dual: Some(u),
            lp_value: t.min(-neg_s),
        });
    }
    Err(MatrixError::Indeterminate { lp_value: t })
}

/// Result of an exhaustive principal-submatrix scan. Sets are 0-based in
/// memory and serialized 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletelySReport {
    pub holds: bool,
    #[serde(with = "crate::one_based::option_vec")]
    pub first_failure: Option<Vec<usize>>,
}

/// Visits principal index sets in increasing size, lexicographically within
/// a size, and returns the first accepted set whose block is not S.
fn first_non_s(
    m: &DMatrix<f64>,
    accept: impl Fn(&[usize]) -> bool,
) -> Result<Option<Vec<usize>>, MatrixError> {
    let n = check_square(m)?;
    if n > MAX_ENUMERATION_DIM {
        return Err(MatrixError::TooLarge(n));
    }
    for k in 1..=n {
        for set in (0..n).combinations(k) {
            if !accept(&set) {
                continue;
            }
            // Every 1x1 block with a positive entry is S.
            if k == 1 && m[(set[0], set[0])] > 0.0 {
                continue;
            }
            if !is_s_matrix(&principal_submatrix(m, &set))?.verdict {
                return Ok(Some(set));
            }
        }
    }
    Ok(None)
}

/// Checks every non-empty principal sub-matrix for S-membership; `2ⁿ − 1` LPs.
pub fn is_completely_s(m: &DMatrix<f64>) -> Result<CompletelySReport, MatrixError> {
    let first_failure = first_non_s(m, |_| true)?;
    Ok(CompletelySReport {
        holds: first_failure.is_none(),
        first_failure,
    })
}

/// Verdicts on the three structural assumptions, for the apex or a facet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// The reflection matrix (or its facet block) is not S.
    pub a1_not_s: bool,
    pub a1_certificate: SCertificate,
    /// Every relevant strict principal sub-matrix is S.
    pub a2_strict_submatrices: bool,
    #[serde(with = "crate::one_based::option_vec")]
    pub a2_first_failure: Option<Vec<usize>>,
    /// Every drift coordinate is positive.
    pub a3_positive_drift: bool,
    #[serde(with = "crate::one_based::option")]
    pub a3_first_nonpositive: Option<usize>,
    pub facet: Option<FacetSpec>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.a1_not_s && self.a2_strict_submatrices && self.a3_positive_drift
    }
}

/// Apex mode: `R` not S, every strict principal sub-matrix S, `μ > 0`.
/// Facet mode: the facet block `R̃` not S, every principal sub-matrix indexed
/// by a set that does not contain the facet is S, `μ > 0`.
pub fn check_assumptions(
    spec: &ModelSpec,
    facet: Option<&FacetSpec>,
) -> Result<AssumptionReport, MatrixError> {
    let r = spec.reflection();
    let d = spec.dimension();
    let (block, a2_first_failure) = match facet {
        None => (r.clone(), first_non_s(r, |s| s.len() < d)?),
        Some(f) => {
            let block = principal_submatrix(r, f.indices());
            let failure = first_non_s(r, |s| !f.indices().iter().all(|i| s.contains(i)))?;
            (block, failure)
        }
    };
    let a1_certificate = is_s_matrix(&block)?;
    let a3_first_nonpositive = spec.mu().iter().position(|&m| !(m > 0.0));
    Ok(AssumptionReport {
        a1_not_s: !a1_certificate.verdict,
        a1_certificate,
        a2_strict_submatrices: a2_first_failure.is_none(),
        a2_first_failure,
        a3_positive_drift: a3_first_nonpositive.is_none(),
        a3_first_nonpositive,
        facet: facet.cloned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma1Check {
    pub holds: bool,
    #[serde(with = "crate::one_based::option")]
    pub witness_row: Option<usize>,
}

/// Every row has a non-zero off-diagonal entry.
pub fn lemma1_check(r: &DMatrix<f64>) -> Lemma1Check {
    let n = r.nrows();
    let witness_row = (0..n).find(|&i| (0..r.ncols()).all(|j| j == i || r[(i, j)] == 0.0));
    Lemma1Check {
        holds: witness_row.is_none(),
        witness_row,
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let top = sv.max();
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Positive kernel vectors of a singular reflection matrix satisfying the
/// structural assumptions, with the positive matrix used to build them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma2Certificate {
    pub rank: usize,
    /// `U > 0` with `RU = 0`, unit ∞-norm.
    pub right_kernel: Vec<f64>,
    /// `a' > 0` with `a'R = 0`, unit ∞-norm.
    pub left_kernel: Vec<f64>,
    /// `T = 2·Id + RP`, entrywise positive with unit diagonal.
    pub perron_matrix: Vec<Vec<f64>>,
    pub perron_root: f64,
    /// Columns of `P`: for each face `j`, a non-negative `X_j` with `(RX_j)_j = −1`.
    pub pushes: Vec<Vec<f64>>,
    pub power_iterations: usize,
    pub smallest_singular_value: f64,
}

impl Lemma2Certificate {
    pub fn right_kernel_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.right_kernel)
    }
    pub fn left_kernel_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.left_kernel)
    }
}

/// Builds `U > 0` and `a' > 0` spanning the right and left kernels of `R`.
///
/// For each `j`, an S-certificate `X̃_j` of the `j`-deleted block is lifted to
/// `X_j` (zero in slot `j`) and scaled so `(R X_j)_j = −1`; the off-diagonal
/// entries of `R X_j` are then positive. With `P = (X_1, …, X_d)` the matrix
/// `T = 2·Id + RP` is positive, its Perron root is 2, `U = PV` for the right
/// Perron vector `V`, and the left Perron vector of `T` is proportional to `a'`.
pub fn lemma2_certificate(r: &DMatrix<f64>) -> Result<Lemma2Certificate, MatrixError> {
    let d = check_square(r)?;
    if d < 2 {
        return Err(MatrixError::TooSmall);
    }
    let mut p = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let others: Vec<usize> = (0..d).filter(|&i| i != j).collect();
        let cert = is_s_matrix(&principal_submatrix(r, &others))?;
        let x_tilde = match cert.primal {
            Some(x) => x,
            None => {
                return Err(MatrixError::SubmatrixNotS(
                    others.iter().map(|i| i + 1).collect(),
                ))
            }
        };
        // Row j of R applied to the lifted vector (its j-th slot is zero).
        let corner: f64 = others
            .iter()
            .zip(&x_tilde)
            .map(|(&i, &x)| r[(j, i)] * x)
            .sum();
        if !(corner < 0.0) {
            return Err(MatrixError::MatrixIsS(j + 1));
        }
        for (&i, &x) in others.iter().zip(&x_tilde) {
            p[(i, j)] = x / -corner;
        }
    }
    let t = DMatrix::<f64>::identity(d, d) * 2.0 + r * &p;
    if let Some(&bad) = t.iter().find(|&&v| !(v > 0.0)) {
        return Err(MatrixError::NonPositiveKernel(bad));
    }
    let right = power_iteration(&t);
    let left = power_iteration(&t.transpose());
    if (right.root - 2.0).abs() > PERRON_ABORT_TOL {
        return Err(MatrixError::PerronRootMismatch(right.root));
    }
    let u = &p * &right.vector;
    let u = &u / u.amax();
    let a = &left.vector / left.vector.amax();
    if let Some(&bad) = u.iter().chain(a.iter()).find(|&&v| !(v > 0.0)) {
        return Err(MatrixError::NonPositiveKernel(bad));
    }
    let sv = singular_values(r);
    let top = sv.max();
    Ok(Lemma2Certificate {
        rank: sv.iter().filter(|&&s| s > RANK_TOL * top).count(),
        right_kernel: u.iter().copied().collect(),
        left_kernel: a.iter().copied().collect(),
        perron_matrix: crate::model::matrix_to_rows(&t),
        perron_root: right.root,
        pushes: (0..d).map(|j| p.column(j).iter().copied().collect()).collect(),
        power_iterations: right.iterations.max(left.iterations),
        smallest_singular_value: sv.min(),
    })
}
