//! Perron-Frobenius eigenvalue of small nonnegative matrices.
//!
//! The matrix is split into its strongly connected components; the spectral
//! radius is the largest radius over the irreducible diagonal blocks, and a
//! component made of a single node without a self loop contributes zero.
//! Each irreducible block is handled by shifted power iteration with a
//! Collatz-Wielandt bracket, which certifies `lo <= rho <= hi` at every step.
//! Blocks whose bracket does not close within the iteration budget fall back
//! to a dense eigenvalue solve.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative width at which the Collatz-Wielandt bracket is accepted.
pub const RADIUS_TOL: f64 = 1e-10;
/// Power-iteration budget per irreducible block before the dense fallback.
pub const MAX_POWER_ITERS: usize = 10_000;

/// Spectral radius of an entrywise nonnegative square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("matrix is {}x{}, expected square", n, a.ncols())));
    }
    if let Some(v) = a.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("entry {v} is not finite and nonnegative")));
    }
    let mut radius: f64 = 0.0;
    for comp in strongly_connected_components(a) {
        if comp.len() == 1 {
            radius = radius.max(a[(comp[0], comp[0])]);
            continue;
        }
        let block = DMatrix::from_fn(comp.len(), comp.len(), |i, j| a[(comp[i], comp[j])]);
        radius = radius.max(irreducible_radius(&block));
    }
    Ok(radius)
}

/// Components of the directed graph with an edge `i -> j` whenever `a[i][j] > 0`.
fn strongly_connected_components(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    // Transitive closure; matrices here have at most a few dozen rows.
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if a[(i, j)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut assigned = vec![false; n];
    let mut comps = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let comp: Vec<usize> = (i..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &comp {
            assigned[j] = true;
        }
        comps.push(comp);
    }
    comps
}

fn irreducible_radius(block: &DMatrix<f64>) -> f64 {
    let n = block.nrows();
    let row_sums: Vec<f64> = block.row_iter().map(|r| r.sum()).collect();
    let lo_sum = row_sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_sum = row_sums.iter().cloned().fold(0.0, f64::max);
    if hi_sum - lo_sum <= RADIUS_TOL * hi_sum {
        // Constant row sums: the all-ones vector is the Perron vector.
        return hi_sum;
    }
    // A shift near the radius damps the rotating eigenvalues of periodic blocks.
    let shift = 0.5 * (lo_sum + hi_sum);
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..MAX_POWER_ITERS {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let mut s = shift * x[i];
            for j in 0..n {
                s += block[(i, j)] * x[j];
            }
            y[i] = s;
            let ratio = s / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if hi - lo <= RADIUS_TOL * hi {
            return (0.5 * (lo + hi) - shift).max(0.0);
        }
        let norm = y.iter().cloned().fold(0.0, f64::max);
        for i in 0..n {
            x[i] = y[i] / norm;
        }
    }
    dense_radius(block)
}

fn dense_radius(block: &DMatrix<f64>) -> f64 {
    block
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
