//! One discrete Skorokhod step: given a tentative point `y`, find a push
//! `ΔL ≥ 0` with `z = y + R·ΔL ≥ 0` and `z_i·ΔL_i = 0`.

use crate::matrix::lp::{LinearProgram, LpError, Relation};
use nalgebra::DMatrix;
use serde::Serialize;

/// Feasibility slack for accepting an active set.
pub const ACCEPT_TOL: f64 = 1e-12;
pub const MAX_LCP_DIM: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepOutcome {
    Pushed { state: Vec<f64>, push: Vec<f64> },
    Infeasible,
}

/// Active-set enumerator with reusable scratch space.
///
/// Every non-empty active set `A` is tried in lexicographic order of its
/// sorted index list: solve `R_AA·ΔL_A = −y_A`, accept when `ΔL_A` and
/// `z = y + R_{·A}·ΔL_A` are non-negative up to `ACCEPT_TOL`. The accepted
/// set with the smallest `‖ΔL‖₁` wins; ties keep the earlier set.
#[derive(Debug, Clone)]
pub struct SkorokhodProjector {
    d: usize,
    /// Row-major copy of R.
    r: Vec<f64>,
    r_scale: f64,
    active: Vec<usize>,
    lu: Vec<f64>,
    rhs: Vec<f64>,
    best_push: Vec<f64>,
    cand_push: Vec<f64>,
    cand_state: Vec<f64>,
}

impl SkorokhodProjector {
    pub fn new(r: &DMatrix<f64>) -> Self {
        let d = r.nrows();
        assert!(d <= MAX_LCP_DIM && r.is_square(), "projector needs a square matrix with d <= 20");
        let flat: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| r[(i, j)]).collect();
        let r_scale = flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            d,
            r: flat,
            r_scale,
            active: Vec::with_capacity(d),
            lu: vec![0.0; d * d],
            rhs: vec![0.0; d],
            best_push: vec![0.0; d],
            cand_push: vec![0.0; d],
            cand_state: vec![0.0; d],
        }
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Projects `y`; on success writes the new state into `state` and the
    /// push into `push` and returns true.
    pub fn project_into(&mut self, y: &[f64], state: &mut [f64], push: &mut [f64]) -> bool {
        let d = self.d;
        if y.iter().all(|&v| v >= 0.0) {
            state.copy_from_slice(y);
            push.iter_mut().for_each(|p| *p = 0.0);
            return true;
        }
        let tol = ACCEPT_TOL * (1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut best_norm = f64::INFINITY;
        let mut found = false;
        // Subsets in lexicographic order: {1}, {1,2}, {1,2,3}, {1,3}, {2}, ...
        self.active.clear();
        self.active.push(0);
        loop {
            if let Some(norm) = self.try_active_set(y, tol) {
                if norm < best_norm - tol {
                    best_norm = norm;
                    found = true;
                    self.best_push.copy_from_slice(&self.cand_push);
                    state.copy_from_slice(&self.cand_state);
                }
            }
            let last = *self.active.last().expect("non-empty active set");
            if last + 1 < d {
                self.active.push(last + 1);
            } else {
                self.active.pop();
                match self.active.last_mut() {
                    Some(top) => *top += 1,
                    None => break,
                }
            }
        }
        if found {
            push.copy_from_slice(&self.best_push);
        }
        found
    }

    pub fn project(&mut self, y: &[f64]) -> StepOutcome {
        let mut state = vec![0.0; self.d];
        let mut push = vec![0.0; self.d];
        if self.project_into(y, &mut state, &mut push) {
            StepOutcome::Pushed { state, push }
        } else {
            StepOutcome::Infeasible
        }
    }

    /// Solves for the current active set; returns `‖ΔL‖₁` when admissible and
    /// leaves the clamped push and state in the candidate buffers.
    fn try_active_set(&mut self, y: &[f64], tol: f64) -> Option<f64> {
        let d = self.d;
        let k = self.active.len();
        for (a, &i) in self.active.iter().enumerate() {
            for (b, &j) in self.active.iter().enumerate() {
                self.lu[a * k + b] = self.r[i * d + j];
            }
            self.rhs[a] = -y[i];
        }
        if !solve_in_place(&mut self.lu[..k * k], &mut self.rhs[..k], k, 1e-12 * self.r_scale) {
            return None;
        }
        if self.rhs[..k].iter().any(|&v| v < -tol) {
            return None;
        }
        self.cand_push.iter_mut().for_each(|p| *p = 0.0);
        for (a, &i) in self.active.iter().enumerate() {
            self.cand_push[i] = self.rhs[a].max(0.0);
        }
        for i in 0..d {
            let mut z = y[i];
            for &j in &self.active {
                z += self.r[i * d + j] * self.cand_push[j];
            }
            if z < -tol {
                return None;
            }
            self.cand_state[i] = z.max(0.0);
        }
        for &i in &self.active {
            self.cand_state[i] = 0.0;
        }
        Some(self.cand_push.iter().sum())
    }
}

/// Gaussian elimination with partial pivoting on a row-major `k×k` system.
/// Returns false when a pivot falls below `pivot_tol`.
fn solve_in_place(a: &mut [f64], b: &mut [f64], k: usize, pivot_tol: f64) -> bool {
    for col in 0..k {
        let mut p = col;
        for row in (col + 1)..k {
            if a[row * k + col].abs() > a[p * k + col].abs() {
                p = row;
            }
        }
        if !(a[p * k + col].abs() > pivot_tol) {
            return false;
        }
        if p != col {
            for j in 0..k {
                a.swap(p * k + j, col * k + j);
            }
            b.swap(p, col);
        }
        let pivot = a[col * k + col];
        for row in (col + 1)..k {
            let f = a[row * k + col] / pivot;
            if f != 0.0 {
                for j in col..k {
                    a[row * k + j] -= f * a[col * k + j];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for col in (0..k).rev() {
        let mut s = b[col];
        for j in (col + 1)..k {
            s -= a[col * k + j] * b[j];
        }
        b[col] = s / a[col * k + col];
    }
    true
}

/// Single projection with a fresh projector.
pub fn skorokhod_step(r: &DMatrix<f64>, y: &[f64]) -> StepOutcome {
    SkorokhodProjector::new(r).project(y)
}

/// Searches for `u ≥ 0`, `Σu = 1`, supported on `support`, with `uᵀR ≤ 0`
/// and `uᵀy < 0`. Such a `u` proves that no `ΔL ≥ 0` makes `y + R·ΔL ≥ 0`.
pub fn infeasibility_witness(
    r: &DMatrix<f64>,
    y: &[f64],
    support: &[usize],
) -> Result<Option<Vec<f64>>, LpError> {
    let d = r.nrows();
    let k = support.len();
    if k == 0 {
        return Ok(None);
    }
    let objective: Vec<f64> = support.iter().map(|&i| -y[i]).collect();
    let mut lp = LinearProgram::new(objective);
    lp.constrain(vec![1.0; k], Relation::Eq, 1.0);
    for j in 0..d {
        lp.constrain(support.iter().map(|&i| r[(i, j)]).collect(), Relation::Le, 0.0);
    }
    let sol = match lp.solve() {
        Ok(sol) => sol,
        // No u ≥ 0 with uᵀR ≤ 0 on this support: the block is S.
        Err(LpError::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if -sol.objective < -ACCEPT_TOL * scale {
        let mut u = vec![0.0; d];
        for (&i, &v) in support.iter().zip(&sol.x) {
            u[i] = v;
        }
        Ok(Some(u))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pushed(o: StepOutcome) -> (Vec<f64>, Vec<f64>) {
        match o {
            StepOutcome::Pushed { state, push } => (state, push),
            StepOutcome::Infeasible => panic!("unexpected infeasible step"),
        }
    }

    #[test]
    fn one_dimensional_push() {
        let (z, l) = pushed(skorokhod_step(&DMatrix::identity(1, 1), &[-0.3]));
        assert_eq!(z, vec![0.0]);
        assert_abs_diff_eq!(l[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn triangular_corner_push() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.5, 1.0]);
        let (z, l) = pushed(skorokhod_step(&r, &[-0.4, 0.1]));
        assert_eq!(z, vec![0.0, 0.0]);
        assert_abs_diff_eq!(l[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(l[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn singular_corner_is_infeasible() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(skorokhod_step(&r, &[-0.1, -0.1]), StepOutcome::Infeasible);
        let u = infeasibility_witness(&r, &[-0.1, -0.1], &[0, 1]).unwrap().unwrap();
        assert_abs_diff_eq!(u[0] + u[1], 1.0, epsilon = 1e-12);
        // One-face push stays feasible when the sum is non-negative.
        let (z, l) = pushed(skorokhod_step(&r, &[-0.1, 0.3]));
        assert_abs_diff_eq!(z[1], 0.2, epsilon = 1e-15);
        assert_eq!(z[0], 0.0);
        assert_abs_diff_eq!(l[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn nonnegative_input_is_untouched() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let (z, l) = pushed(skorokhod_step(&r, &[0.0, 2.0]));
        assert_eq!(z, vec![0.0, 2.0]);
        assert_eq!(l, vec![0.0, 0.0]);
    }

    #[test]
    fn minimal_push_and_lexicographic_tie() {
        // With R = I and y = (−1, 2, −1) the unique solution pushes {1, 3}.
        let (z, l) = pushed(skorokhod_step(&DMatrix::identity(3, 3), &[-1.0, 2.0, -1.0]));
        assert_eq!(z, vec![0.0, 2.0, 0.0]);
        assert_eq!(l, vec![1.0, 0.0, 1.0]);
        // R with a zero column coupling: both {1} and {2} push by 1 and land at 0.
        // R = [[1, 1], [1, 1]] is singular; y = (−1, −1): sets {1} and {2}
        // each give ΔL = 1 and z = 0, so the lexicographically first wins.
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, l) = pushed(skorokhod_step(&r, &[-1.0, -1.0]));
        assert_eq!(l, vec![1.0, 0.0]);
    }

    #[test]
    fn witness_respects_support() {
        let r = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let y = [-0.1, -0.1, 0.5];
        assert_eq!(skorokhod_step(&r, &y), StepOutcome::Infeasible);
        let u = infeasibility_witness(&r, &y, &[0, 1]).unwrap().unwrap();
        assert_eq!(u[2], 0.0);
        assert!(infeasibility_witness(&r, &y, &[2]).unwrap().is_none());
    }
}
