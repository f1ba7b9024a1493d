use nalgebra::{DMatrix, DVector};

pub const MAX_ITERATIONS: usize = 200;
pub const RELATIVE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct PerronPair {
    pub root: f64,
    /// Positive eigenvector, scaled to unit ∞-norm.
    pub vector: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration for the dominant eigenpair of an entrywise positive matrix.
///
/// Starts from the all-ones vector and stops once both the root estimate and
/// the normalized iterate change by less than `RELATIVE_TOL`, or after
/// `MAX_ITERATIONS` steps.
pub fn power_iteration(t: &DMatrix<f64>) -> PerronPair {
    let n = t.nrows();
    let mut v = DVector::from_element(n, 1.0);
    let mut root = 0.0;
    for k in 1..=MAX_ITERATIONS {
        let w = t * &v;
        let norm = w.amax();
        // v has unit ∞-norm, so the ratio of ∞-norms estimates the root.
        let next_root = norm / v.amax();
        let next = w / norm;
        let dv = (&next - &v).amax();
        let dr = (next_root - root).abs() / next_root.abs().max(f64::MIN_POSITIVE);
        v = next;
        root = next_root;
        if dr < RELATIVE_TOL && dv < RELATIVE_TOL {
            return PerronPair {
                root: rayleigh(t, &v, root),
                vector: v,
                iterations: k,
                converged: true,
            };
        }
    }
    PerronPair {
        root: rayleigh(t, &v, root),
        vector: v,
        iterations: MAX_ITERATIONS,
        converged: false,
    }
}

// Componentwise ratio (Tv)_i / v_i averaged with weights v_i; equals the
// Collatz–Wielandt bounds' common value at the eigenvector.
fn rayleigh(t: &DMatrix<f64>, v: &DVector<f64>, fallback: f64) -> f64 {
    let tv = t * v;
    let den: f64 = v.iter().sum();
    if den > 0.0 {
        tv.iter().sum::<f64>() / den
    } else {
        fallback
    }
}
