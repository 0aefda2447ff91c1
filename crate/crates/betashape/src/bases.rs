//! B-spline bases, difference penalties, and the penalty eigendecomposition
//! that splits spline coefficients into penalized and unpenalized parts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative threshold below which a penalty eigenvalue counts as zero.
pub const EIGEN_ZERO_TOL: f64 = 1e-8;

/// A B-spline basis with equally spaced interior knots and full boundary
/// multiplicity. `num_basis` is always the column count of the evaluation
/// matrix.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub degree: usize,
    pub num_basis: usize,
    pub knots: Vec<f64>,
}

impl SplineBasis {
    /// Construct a basis of `num_basis` functions of the given degree on
    /// [lo, hi]. Defaults used elsewhere: degree 3, num_basis 30.
    pub fn new(domain_lo: f64, domain_hi: f64, num_basis: usize, degree: usize) -> Result<Self> {
        if !(domain_lo < domain_hi) || !domain_lo.is_finite() || !domain_hi.is_finite() {
            return Err(Error::InvalidDomain(domain_lo, domain_hi));
        }
        if num_basis < degree + 1 {
            return Err(Error::BasisTooSmall { num_basis, degree });
        }
        // num_basis - degree + 1 equally spaced breakpoints, then `degree`
        // extra copies of each boundary knot.
        let nbreak = num_basis - degree + 1;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        for _ in 0..degree {
            knots.push(domain_lo);
        }
        for i in 0..nbreak {
            let frac = i as f64 / (nbreak - 1) as f64;
            knots.push(domain_lo + frac * (domain_hi - domain_lo));
        }
        for _ in 0..degree {
            knots.push(domain_hi);
        }
        Ok(Self {
            domain_lo,
            domain_hi,
            degree,
            num_basis,
            knots,
        })
    }

    fn find_span(&self, t: f64) -> usize {
        let p = self.degree;
        if t >= self.domain_hi {
            return self.num_basis - 1;
        }
        // binary search over knots[p..=num_basis]
        let mut lo = p;
        let mut hi = self.num_basis;
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// All basis values at a single point (length `num_basis`).
    pub fn eval_point(&self, t: f64) -> Result<Vec<f64>> {
        let tol = 1e-12 * (self.domain_hi - self.domain_lo).abs();
        if t < self.domain_lo - tol || t > self.domain_hi + tol {
            return Err(Error::PointOutsideDomain(t, self.domain_lo, self.domain_hi));
        }
        let t = t.clamp(self.domain_lo, self.domain_hi);
        let p = self.degree;
        let span = self.find_span(t);
        // de Boor's algorithm for the p+1 nonzero basis functions
        let mut vals = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        let mut row = vec![0.0; self.num_basis];
        row[span - p..=span].copy_from_slice(&vals);
        Ok(row)
    }

    /// Evaluation matrix on a grid: len(grid) rows, `num_basis` columns.
    pub fn evaluate(&self, grid: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(grid.len(), self.num_basis);
        for (i, &t) in grid.iter().enumerate() {
            let row = self.eval_point(t)?;
            for (j, &v) in row.iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

/// d-th order difference penalty matrix P_d = D_d^T D_d (K_u x K_u).
/// Zero order is the identity (ridge on all coefficients).
pub fn difference_penalty(num_basis: usize, order: usize) -> Result<DMatrix<f64>> {
    if order > 2 {
        return Err(Error::UnsupportedPenaltyOrder(order));
    }
    if num_basis <= order {
        return Err(Error::PenaltyOrderTooLarge {
            order,
            num_basis,
        });
    }
    if order == 0 {
        return Ok(DMatrix::identity(num_basis, num_basis));
    }
    // forward-difference operator rows: d=1 -> (-1, 1); d=2 -> (1, -2, 1)
    let coeffs: Vec<f64> = match order {
        1 => vec![-1.0, 1.0],
        _ => vec![1.0, -2.0, 1.0],
    };
    let mut d_mat = DMatrix::zeros(num_basis - order, num_basis);
    for r in 0..num_basis - order {
        for (k, &c) in coeffs.iter().enumerate() {
            d_mat[(r, r + k)] = c;
        }
    }
    Ok(d_mat.transpose() * d_mat)
}

/// Eigendecomposition of a difference penalty split into penalized (Q1,
/// Lambda1) and unpenalized (Q2) parts.
#[derive(Debug, Clone)]
pub struct PenaltyDecomposition {
    pub order: usize,
    pub penalty: DMatrix<f64>,
    /// K_u x (K_u - d) eigenvectors of the nonzero eigenvalues.
    pub q1: DMatrix<f64>,
    /// K_u x d eigenvectors spanning the penalty null space.
    pub q2: DMatrix<f64>,
    /// The K_u - d positive eigenvalues, descending.
    pub lambda1: DVector<f64>,
}

impl PenaltyDecomposition {
    pub fn num_basis(&self) -> usize {
        self.q1.nrows()
    }
}

/// Decompose a symmetric PSD penalty of order `d`. Errors if the numerical
/// rank (eigenvalue threshold 1e-8 relative to the largest) is not K_u - d.
pub fn decompose_penalty(penalty: &DMatrix<f64>, order: usize) -> Result<PenaltyDecomposition> {
    let asym = linalg::max_asymmetry(penalty);
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let k = penalty.nrows();
    let (vals, vecs) = linalg::sym_eigen_desc(penalty)?;
    let thresh = EIGEN_ZERO_TOL * vals[0].max(0.0);
    let near_zero = vals.iter().filter(|&&v| v <= thresh).count();
    if near_zero != order {
        return Err(Error::PenaltyRankMismatch {
            expected: order,
            found: near_zero,
        });
    }
    let n_pos = k - order;
    let q1 = vecs.columns(0, n_pos).clone_owned();
    let q2 = vecs.columns(n_pos, order).clone_owned();
    let lambda1 = vals.rows(0, n_pos).clone_owned();
    Ok(PenaltyDecomposition {
        order,
        penalty: penalty.clone(),
        q1,
        q2,
        lambda1,
    })
}
