//! Dense two-phase simplex for the small linear programs used by the matrix
//! certificates (a few dozen variables at most).
//!
//! Pivoting follows Bland's rule, so the method terminates without cycling;
//! speed is irrelevant at these sizes.

use thiserror::Error;

const PIVOT_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize cᵀx` subject to the constraints and `x ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let n = self.objective.len();
        if let Some(c) = self.constraints.iter().find(|c| c.coeffs.len() != n) {
            return Err(LpError::Malformed(format!(
                "constraint has {} coefficients, expected {n}",
                c.coeffs.len()
            )));
        }
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    /// Rows `0..m` are constraints; each row holds `ncols` coefficients followed by the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_orig: usize,
    ncols: usize,
    artificial_start: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.objective.len();
        let m = lp.constraints.len();
        // Normalize to non-negative right-hand sides.
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let n_slack = normalized
            .iter()
            .filter(|(_, r, _)| *r != Relation::Eq)
            .count();
        let n_art = normalized
            .iter()
            .filter(|(_, r, _)| *r != Relation::Le)
            .count();
        let artificial_start = n + n_slack;
        let ncols = artificial_start + n_art;

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let (mut slack, mut art) = (n, artificial_start);
        for (coeffs, relation, rhs) in normalized {
            let mut row = vec![0.0; ncols + 1];
            row[..n].copy_from_slice(&coeffs);
            row[ncols] = rhs;
            match relation {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis.push(slack);
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
            }
            rows.push(row);
        }
        Self {
            rows,
            basis,
            n_orig: n,
            ncols,
            artificial_start,
        }
    }

    fn run(mut self, objective: &[f64]) -> Result<LpSolution, LpError> {
        let limit = 50 * (self.ncols + self.rows.len() + 10);
        if self.artificial_start < self.ncols {
            let mut phase_one = vec![0.0; self.ncols];
            for c in phase_one.iter_mut().skip(self.artificial_start) {
                *c = -1.0;
            }
            self.optimize(&phase_one, self.ncols, limit)?;
            let residual: f64 = self
                .basis
                .iter()
                .zip(&self.rows)
                .filter(|(&b, _)| b >= self.artificial_start)
                .map(|(_, row)| row[self.ncols])
                .sum();
            if residual > FEAS_EPS {
                return Err(LpError::Infeasible(residual));
            }
            self.evict_artificials();
        }
        let mut costs = vec![0.0; self.ncols];
        costs[..self.n_orig].copy_from_slice(objective);
        self.optimize(&costs, self.artificial_start, limit)?;

        let mut x = vec![0.0; self.n_orig];
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            if b < self.n_orig {
                x[b] = row[self.ncols].max(0.0);
            }
        }
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective: value,
        })
    }

    /// Maximizes `costs · x` using only columns `< allowed` as entering candidates.
    fn optimize(&mut self, costs: &[f64], allowed: usize, limit: usize) -> Result<(), LpError> {
        for _ in 0..limit {
            let reduced = self.reduced_costs(costs);
            let entering = match (0..allowed).find(|&j| reduced[j] > PIVOT_EPS) {
                Some(j) => j,
                None => return Ok(()),
            };
            let mut leaving: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[entering];
                if a > PIVOT_EPS {
                    let ratio = row[self.ncols] / a;
                    leaving = match leaving {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-14
                                || (ratio <= best + 1e-14 && self.basis[i] < self.basis[k])
                            {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            match leaving {
                None => return Err(LpError::Unbounded),
                Some((row, _)) => self.pivot(row, entering),
            }
        }
        Err(LpError::IterationLimit(limit))
    }

    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let mut reduced = costs.to_vec();
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = costs[b];
            if cb != 0.0 {
                for (r, a) in reduced.iter_mut().zip(row.iter()) {
                    *r -= cb * a;
                }
            }
        }
        reduced
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let inv = 1.0 / self.rows[pr][pc];
        for v in self.rows[pr].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[pr].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == pr {
                continue;
            }
            let factor = row[pc];
            if factor != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Pivots zero-level artificials out of the basis; rows where that is
    /// impossible are redundant and dropped.
    fn evict_artificials(&mut self) {
        let mut i = 0;
        while i < self.rows.len() {
            if self.basis[i] >= self.artificial_start {
                let col = (0..self.artificial_start).find(|&j| self.rows[i][j].abs() > PIVOT_EPS);
                match col {
                    Some(j) => {
                        self.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        self.rows.remove(i);
                        self.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }
}

/// Value and maximizer of `max_{x ∈ simplex} min_i (M x)_i`.
///
/// Solved as `max t` subject to `M x ≥ t·1`, `Σ x = 1`, `x ≥ 0`, with the free
/// variable split as `t = t⁺ − t⁻`.
pub fn max_min_over_simplex(rows: usize, cols: usize, m: impl Fn(usize, usize) -> f64) -> Result<(f64, Vec<f64>), LpError> {
    let mut objective = vec![0.0; cols + 2];
    objective[cols] = 1.0;
    objective[cols + 1] = -1.0;
    let mut lp = LinearProgram::new(objective);
    for i in 0..rows {
        let mut coeffs: Vec<f64> = (0..cols).map(|j| -m(i, j)).collect();
        coeffs.push(1.0);
        coeffs.push(-1.0);
        lp.constrain(coeffs, Relation::Le, 0.0);
    }
    let mut sum = vec![1.0; cols];
    sum.extend([0.0, 0.0]);
    lp.constrain(sum, Relation::Eq, 1.0);
    let sol = lp.solve()?;
    let x = sol.x[..cols].to_vec();
    Ok((sol.objective, x))
}
