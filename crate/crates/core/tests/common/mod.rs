#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use orthant_rbm::model::ModelSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn spec(sigma: &[&[f64]], mu: &[f64], r: &[&[f64]]) -> ModelSpec {
    let rows = |m: &[&[f64]]| m.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    ModelSpec::from_rows(&rows(sigma), mu, &rows(r)).unwrap()
}

pub fn e1() -> ModelSpec {
    spec(&[&[1.0, 0.0], &[0.0, 1.0]], &[1.0, 1.0], &[&[1.0, -1.0], &[-1.0, 1.0]])
}

pub fn e2() -> ModelSpec {
    spec(
        &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
        &[1.0, 1.0, 1.0],
        &[&[1.0, -1.0, 0.0], &[0.0, 1.0, -1.0], &[-1.0, 0.0, 1.0]],
    )
}

pub fn e3() -> ModelSpec {
    spec(&[&[1.0, 0.5], &[0.5, 1.0]], &[2.0, 1.0], &[&[1.0, -2.0], &[-0.5, 1.0]])
}

pub fn facet_model() -> ModelSpec {
    spec(
        &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
        &[1.0, 1.0, 1.0],
        &[&[1.0, -1.0, 0.0], &[-1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]],
    )
}

/// Unit-diagonal matrix with off-diagonal entries uniform in `[-2, 2]`.
pub fn random_unit_diagonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rng.gen_range(-2.0..2.0) })
}

/// `R = I − W` with `W ≥ 0` strictly positive off the diagonal and columns
/// scaled so that `a'ᵀR = 0` for a random `a' > 0`. Every proper principal
/// block is then a non-singular M-matrix, hence S.
pub fn random_singular_reflection(rng: &mut ChaCha8Rng, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let kernel = DVector::from_fn(d, |_, _| rng.gen_range(0.2..2.0));
    let mut r = DMatrix::identity(d, d);
    for j in 0..d {
        let w: Vec<f64> = (0..d).map(|i| if i == j { 0.0 } else { rng.gen_range(0.1..1.0) }).collect();
        let weighted: f64 = (0..d).map(|i| kernel[i] * w[i]).sum();
        let scale = kernel[j] / weighted;
        for i in 0..d {
            if i != j {
                r[(i, j)] = -w[i] * scale;
            }
        }
    }
    (r, kernel)
}

/// Random symmetric positive definite matrix `AAᵀ + I/2`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

pub fn random_positive(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(0.2..2.0)).collect()
}

/// All points of the simplex `{x ≥ 0, Σx = 1}` with coordinates in `(1/n)ℤ`.
pub fn simplex_grid(d: usize, n: usize) -> Vec<Vec<f64>> {
    fn rec(d: usize, left: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == d {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / n as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(d, left - k, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, n, n, &mut Vec::new(), &mut out);
    out
}

/// Brackets the game value `max_x min_i (Mx)_i` over the simplex by grid
/// search on both players: `max_x min_i` from below, `min_u max_j (uᵀM)_j`
/// from above.
pub fn grid_game_bracket(m: &DMatrix<f64>, grid: &[Vec<f64>]) -> (f64, f64) {
    let d = m.nrows();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for p in grid {
        let mut row_min = f64::INFINITY;
        let mut col_max = f64::NEG_INFINITY;
        for i in 0..d {
            let mut mx = 0.0;
            let mut um = 0.0;
            for k in 0..d {
                mx += m[(i, k)] * p[k];
                um += p[k] * m[(k, i)];
            }
            row_min = row_min.min(mx);
            col_max = col_max.max(um);
        }
        lower = lower.max(row_min);
        upper = upper.min(col_max);
    }
    (lower, upper)
}

/// Exact game value by enumerating the vertices of
/// `{(x, t) : Mx ≥ t·1, Σx = 1, x ≥ 0}`.
pub fn vertex_game_value(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut best = f64::NEG_INFINITY;
    // Constraints 0..d are rows of Mx − t ≥ 0, d..2d are x_k ≥ 0.
    for mask in 0u32..(1 << (2 * d)) {
        if mask.count_ones() as usize != d {
            continue;
        }
        let mut a = DMatrix::zeros(d + 1, d + 1);
        let mut b = DVector::zeros(d + 1);
        let mut row = 0;
        for c in 0..2 * d {
            if mask & (1 << c) == 0 {
                continue;
            }
            if c < d {
                for k in 0..d {
                    a[(row, k)] = m[(c, k)];
                }
                a[(row, d)] = -1.0;
            } else {
                a[(row, c - d)] = 1.0;
            }
            row += 1;
        }
        for k in 0..d {
            a[(d, k)] = 1.0;
        }
        b[d] = 1.0;
        let Some(sol) = a.lu().solve(&b) else { continue };
        let x = sol.rows(0, d);
        let t = sol[d];
        if x.iter().any(|&v| v < -1e-12) || (m * x).iter().any(|&v| v < t - 1e-10) {
            continue;
        }
        best = best.max(t);
    }
    best
}
