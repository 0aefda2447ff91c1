//! Assembly of the induced mixed-model design: the integrated
//! eigenfunction/B-spline cross-products J and the fixed/random design
//! matrices for a chosen hypothesis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bases::{PenaltyDecomposition, SplineBasis};
use crate::error::{Error, Result};
use crate::linalg;

/// The three coefficient-shape hypotheses, mapped to difference-penalty
/// orders 0, 1, 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    Nullity,
    Functionality,
    Linearity,
}

impl Hypothesis {
    pub fn penalty_order(&self) -> usize {
        match self {
            Hypothesis::Nullity => 0,
            Hypothesis::Functionality => 1,
            Hypothesis::Linearity => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Hypothesis::Nullity => "nullity",
            Hypothesis::Functionality => "functionality",
            Hypothesis::Linearity => "linearity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nullity" => Ok(Hypothesis::Nullity),
            "functionality" => Ok(Hypothesis::Functionality),
            "linearity" => Ok(Hypothesis::Linearity),
            other => Err(Error::Config(format!("unknown hypothesis '{other}'"))),
        }
    }
}

/// Fixed and random designs of the induced mixed model.
#[derive(Debug, Clone)]
pub struct GlmmDesign {
    pub hypothesis: Hypothesis,
    pub penalty_order: usize,
    /// K_x x K_u integrated eigenfunction/basis cross-products.
    pub j: DMatrix<f64>,
    /// n x (1 + d): intercept column plus xi^T J Q2.
    pub x: DMatrix<f64>,
    /// n x (K_u - d): xi^T J Q1 Lambda1^{-1/2}.
    pub z: DMatrix<f64>,
}

/// J = ∫ psi(t) B(t)^T dt by the trapezoidal rule on the common grid.
pub fn compute_j(
    psi: &DMatrix<f64>,
    basis: &SplineBasis,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    if psi.nrows() != grid.len() {
        return Err(Error::DimensionMismatch(
            "compute_j: psi rows must match grid length".into(),
        ));
    }
    let tol = 1e-9 * (basis.domain_hi - basis.domain_lo).abs();
    if grid[0] < basis.domain_lo - tol || grid[grid.len() - 1] > basis.domain_hi + tol {
        return Err(Error::DimensionMismatch(
            "compute_j: grid extends beyond the basis domain".into(),
        ));
    }
    let b = basis.evaluate(grid)?;
    let w = linalg::trapezoid_weights(grid);
    let wb = DMatrix::from_fn(grid.len(), basis.num_basis, |t, l| w[t] * b[(t, l)]);
    Ok(psi.transpose() * wb)
}

/// X = [1 | xi J Q2], Z = xi J Q1 Lambda1^{-1/2}. For d = 0 the fixed
/// design is the intercept column alone.
pub fn build_design(
    xi: &DMatrix<f64>,
    j: &DMatrix<f64>,
    pen: &PenaltyDecomposition,
    hypothesis: Hypothesis,
) -> Result<GlmmDesign> {
    let d = pen.order;
    if hypothesis.penalty_order() != d {
        return Err(Error::DimensionMismatch(format!(
            "hypothesis {} requires penalty order {}, decomposition has order {}",
            hypothesis.name(),
            hypothesis.penalty_order(),
            d
        )));
    }
    let n = xi.nrows();
    if xi.ncols() != j.nrows() || j.ncols() != pen.num_basis() {
        return Err(Error::DimensionMismatch(format!(
            "build_design: xi is {}x{}, J is {}x{}, penalty over {}",
            xi.nrows(),
            xi.ncols(),
            j.nrows(),
            j.ncols(),
            pen.num_basis()
        )));
    }
    let xij = xi * j; // n x K_u
    let mut x = DMatrix::zeros(n, 1 + d);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    if d > 0 {
        let fixed = &xij * &pen.q2;
        for i in 0..n {
            for c in 0..d {
                x[(i, c + 1)] = fixed[(i, c)];
            }
        }
    }
    let scale = DMatrix::from_diagonal(&DVector::from_fn(pen.lambda1.len(), |s, _| {
        1.0 / pen.lambda1[s].sqrt()
    }));
    let z = &xij * &pen.q1 * scale;
    Ok(GlmmDesign {
        hypothesis,
        penalty_order: d,
        j: j.clone(),
        x,
        z,
    })
}

/// Evaluate the coefficient function on a grid from the unpenalized and
/// penalized effect vectors: beta(t) = B(t)^T (Q1 u* + Q2 beta*).
pub fn coefficient_from_effects(
    pen: &PenaltyDecomposition,
    basis: &SplineBasis,
    grid: &[f64],
    beta_star: &DVector<f64>,
    u_star: &DVector<f64>,
) -> Result<Vec<f64>> {
    if beta_star.len() != pen.order || u_star.len() != pen.lambda1.len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient_from_effects: expected beta* of length {} and u* of length {}",
            pen.order,
            pen.lambda1.len()
        )));
    }
    let g = &pen.q1 * u_star + &pen.q2 * beta_star;
    let b = basis.evaluate(grid)?;
    let vals = b * g;
    Ok(vals.iter().copied().collect())
}
