//! Residuals of the absorption PDE (harmonic in the orthant, Neumann
//! condition `R_i·∇f = 0` on each face) and of its dual for product-form
//! densities, evaluated exactly on exponential candidates, plus a
//! finite-difference check of the interior generator.

use crate::decay::{dual_boundary_matrix, DecayError, SINGULAR_TOL};
use crate::matrix;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dual PDE inapplicable: reflection matrix is singular")]
    Inapplicable,
    #[error("grid box must satisfy h < lower_i ≤ upper_i in every coordinate")]
    BoxTouchesBoundary,
    #[error("grid step must be positive")]
    NonPositiveStep,
}

impl From<DecayError> for PdeError {
    fn from(e: DecayError) -> Self {
        PdeError::DimensionMismatch(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `½aΣaᵀ + a·μ`: the generator applied to `exp(a·x)`, divided by it.
    pub generator_residual: f64,
    /// `a·R_i` for each face `i`.
    pub neumann_residuals: Vec<f64>,
    pub dual_generator_residual: Option<f64>,
    pub dual_boundary_residuals: Option<Vec<f64>>,
    /// False for the zero candidate, which is not an admissible exponent.
    pub valid_candidate: bool,
}

fn check(sigma: &DMatrix<f64>, mu: &DVector<f64>, r: &DMatrix<f64>, v: &DVector<f64>) -> Result<(), PdeError> {
    let d = mu.len();
    if sigma.shape() != (d, d) || r.shape() != (d, d) || v.len() != d {
        return Err(PdeError::DimensionMismatch(format!(
            "sigma {:?}, mu {}, reflection {:?}, vector {}",
            sigma.shape(),
            d,
            r.shape(),
            v.len()
        )));
    }
    Ok(())
}

pub fn absorption_pde_residuals(
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
    r: &DMatrix<f64>,
    a: &DVector<f64>,
) -> Result<ResidualReport, PdeError> {
    check(sigma, mu, r, a)?;
    let generator_residual = 0.5 * (a.transpose() * sigma * a)[(0, 0)] + a.dot(mu);
    let neumann = a.transpose() * r;
    Ok(ResidualReport {
        generator_residual,
        neumann_residuals: neumann.iter().copied().collect(),
        dual_generator_residual: None,
        dual_boundary_residuals: None,
        valid_candidate: a.iter().any(|&v| v != 0.0),
    })
}

/// Dual-side residuals of a product-form density candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualResiduals {
    pub generator: f64,
    pub boundary: Vec<f64>,
}

impl ResidualReport {
    pub fn with_dual(mut self, dual: DualResiduals) -> Self {
        self.dual_generator_residual = Some(dual.generator);
        self.dual_boundary_residuals = Some(dual.boundary);
        self
    }
}

/// Residuals of the stationary PDE for the density `exp(−c·x)`:
/// `½cΣcᵀ + μ·c` for the dual generator `½∇·Σ∇ − μ·∇`, and
/// `−R*_i·c − 2μ_i` on face `i`, with `R* = 2Σ − R·diag(Σ)`.
pub fn dual_pde_residuals(
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
    r: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<DualResiduals, PdeError> {
    check(sigma, mu, r, c)?;
    let sv = matrix::singular_values(r);
    if sv.min() <= SINGULAR_TOL * sv.max() {
        return Err(PdeError::Inapplicable);
    }
    let r_star = dual_boundary_matrix(sigma, r)?;
    Ok(DualResiduals {
        generator: 0.5 * (c.transpose() * sigma * c)[(0, 0)] + mu.dot(c),
        boundary: (0..mu.len())
            .map(|i| -r_star.column(i).dot(c) - 2.0 * mu[i])
            .collect(),
    })
}

/// Axis-aligned box of grid points, `points` per axis (at least 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: usize,
}

/// Second-order central-difference generator `½Σ_ij Σ_ij ∂_ij f + μ·∇f` of
/// `f = exp(a·x)` at `x`, minus its exact value `(½aΣaᵀ + a·μ) f(x)`.
pub fn fd_generator_residual_at(
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
    a: &DVector<f64>,
    h: f64,
    x: &[f64],
) -> f64 {
    let d = mu.len();
    let f = |shift: &[(usize, f64)]| {
        let mut s = 0.0;
        for i in 0..d {
            s += a[i] * x[i];
        }
        for &(i, dx) in shift {
            s += a[i] * dx;
        }
        s.exp()
    };
    let f0 = f(&[]);
    let mut fd = 0.0;
    for i in 0..d {
        let fp = f(&[(i, h)]);
        let fm = f(&[(i, -h)]);
        fd += 0.5 * sigma[(i, i)] * (fp - 2.0 * f0 + fm) / (h * h);
        fd += mu[i] * (fp - fm) / (2.0 * h);
        for j in (i + 1)..d {
            if sigma[(i, j)] != 0.0 {
                let mixed = (f(&[(i, h), (j, h)]) - f(&[(i, h), (j, -h)]) - f(&[(i, -h), (j, h)])
                    + f(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                // Σ symmetric: the (i,j) and (j,i) terms each carry ½.
                fd += sigma[(i, j)] * mixed;
            }
        }
    }
    let exact = (0.5 * (a.transpose() * sigma * a)[(0, 0)] + a.dot(mu)) * f0;
    fd - exact
}

/// Maximum absolute finite-difference residual over the grid.
pub fn fd_generator_check(
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
    a: &DVector<f64>,
    h: f64,
    grid: &GridBox,
) -> Result<f64, PdeError> {
    let d = mu.len();
    if !(h > 0.0) {
        return Err(PdeError::NonPositiveStep);
    }
    if grid.lower.len() != d || grid.upper.len() != d || a.len() != d || sigma.shape() != (d, d) {
        return Err(PdeError::DimensionMismatch("grid box".into()));
    }
    if grid
        .lower
        .iter()
        .zip(&grid.upper)
        .any(|(&lo, &hi)| !(lo > h && hi >= lo))
        || grid.points == 0
    {
        return Err(PdeError::BoxTouchesBoundary);
    }
    let axis = |i: usize, k: usize| {
        if grid.points == 1 {
            grid.lower[i]
        } else {
            grid.lower[i] + (grid.upper[i] - grid.lower[i]) * k as f64 / (grid.points - 1) as f64
        }
    };
    let total = grid.points.pow(d as u32);
    let mut worst = 0.0f64;
    let mut x = vec![0.0; d];
    for flat in 0..total {
        let mut rest = flat;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = axis(i, rest % grid.points);
            rest /= grid.points;
        }
        worst = worst.max(fd_generator_residual_at(sigma, mu, a, h, &x).abs());
    }
    Ok(worst)
}
