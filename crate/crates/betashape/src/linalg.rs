//! Small shared numerical helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with deterministic ordering and signs:
/// eigenvalues sorted descending, each eigenvector flipped so its
/// largest-magnitude entry is positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "sym_eigen_desc: {}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sym.eigenvalues[b]
            .partial_cmp(&sym.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (j, &src) in order.iter().enumerate() {
        vals[j] = sym.eigenvalues[src];
        let mut col = sym.eigenvectors.column(src).clone_owned();
        fix_sign(&mut col);
        vecs.set_column(j, &col);
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric eigendecomposition"));
    }
    Ok((vals, vecs))
}

/// Flip a vector in place so its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Max absolute asymmetry |M - M^T|.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solve the SPD system A x = b via Cholesky.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = nalgebra::Cholesky::new(a.clone())
        .ok_or_else(|| Error::OptimizationFailed("Cholesky factorization failed".into()))?;
    Ok(chol.solve(b))
}

/// Trapezoidal quadrature weights for a (not necessarily uniform) grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    let mut w = vec![0.0; m];
    if m == 1 {
        w[0] = 1.0;
        return w;
    }
    for j in 0..m - 1 {
        let h = grid[j + 1] - grid[j];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    w
}

/// Trapezoidal integral of sampled values over a grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    trapezoid_weights(grid)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// SplitMix64 step; used to derive independent per-replicate seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for replicate/chunk `idx` of a master seed.
pub fn derive_seed(master: u64, idx: u64) -> u64 {
    splitmix64(master ^ splitmix64(idx.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub const LAMBDA_GRID_LO: f64 = 1e-8;
pub const LAMBDA_GRID_HI: f64 = 1e8;
pub const LAMBDA_GRID_POINTS: usize = 41;
pub const LAMBDA_LOG_TOL: f64 = 1e-8;

/// Maximize a smooth objective over the variance ratio lambda >= 0.
///
/// Evaluates lambda = 0 explicitly, brackets the maximum on a 41-point
/// log grid over [1e-8, 1e8], then refines with golden-section search on
/// log lambda to absolute tolerance 1e-8. Returns (lambda, value).
pub fn maximize_over_lambda<F: Fn(f64) -> f64>(f: F) -> (f64, f64) {
    let at_zero = f(0.0);
    let lo = LAMBDA_GRID_LO.ln();
    let hi = LAMBDA_GRID_HI.ln();
    let npts = LAMBDA_GRID_POINTS;
    let step = (hi - lo) / (npts - 1) as f64;
    let mut best_i = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    let vals: Vec<f64> = (0..npts)
        .map(|i| {
            let v = f((lo + step * i as f64).exp());
            if v > best_v {
                best_v = v;
                best_i = i;
            }
            v
        })
        .collect();
    let _ = vals;
    // golden-section on the bracketing interval around the grid maximizer
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = lo + step * (best_i + 1).min(npts - 1) as f64;
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = f(x1.exp());
    let mut f2 = f(x2.exp());
    while b - a > LAMBDA_LOG_TOL {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = f(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = f(x2.exp());
        }
    }
    let (xr, fr) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    let (mut lam, mut val) = (xr.exp(), fr);
    if best_v > val {
        lam = (lo + step * best_i as f64).exp();
        val = best_v;
    }
    if at_zero >= val {
        (0.0, at_zero)
    } else {
        (lam, val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = dmatrix![4.0, 1.0, 0.5; 1.0, 3.0, 0.2; 0.5, 0.2, 1.0];
        let (vals, vecs) = sym_eigen_desc(&m).unwrap();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let rec = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((rec - &m).abs().max() < 1e-12);
    }

    #[test]
    fn eigen_sign_deterministic() {
        let m = dmatrix![2.0, 0.0; 0.0, 1.0];
        let (_, vecs) = sym_eigen_desc(&m).unwrap();
        assert!(vecs[(0, 0)] > 0.0 && vecs[(1, 1)] > 0.0);
    }

    #[test]
    fn trapezoid_matches_linear_exactly() {
        let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let vals: Vec<f64> = grid.iter().map(|t| 2.0 * t + 1.0).collect();
        assert!((trapezoid(&grid, &vals) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lambda_maximizer_hits_unimodal_peak() {
        // peak of -(ln x - ln 3)^2 at x = 3
        let (lam, _) = maximize_over_lambda(|x| {
            if x == 0.0 {
                -1e10
            } else {
                -(x.ln() - 3f64.ln()).powi(2)
            }
        });
        assert!((lam.ln() - 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn lambda_maximizer_prefers_zero_boundary() {
        let (lam, val) = maximize_over_lambda(|x| -x);
        assert_eq!(lam, 0.0);
        assert_eq!(val, 0.0);
    }
}
