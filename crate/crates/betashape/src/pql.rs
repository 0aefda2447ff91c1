//! Penalized quasi-likelihood fitting of the induced mixed model: the
//! normalized working response alternates with a working linear mixed
//! model estimated by REML over the single variance ratio.

use nalgebra::{DMatrix, DVector};

use crate::design::GlmmDesign;
use crate::error::{Error, Result};
use crate::family::{working_response, Family};
use crate::linalg::{self, maximize_over_lambda};

pub const PQL_MAX_ITER: usize = 200;
pub const PQL_TOL: f64 = 1e-6;

/// Precomputed cross-products of a working LMM y = X b + Z u + e with
/// V = I + lambda Z Z^T. All restricted-likelihood evaluations reduce to
/// K x K and p x p operations via Woodbury identities.
pub struct WorkingLmm {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    xtx: DMatrix<f64>,
    xtz: DMatrix<f64>,
    ztz: DMatrix<f64>,
    xty: DVector<f64>,
    zty: DVector<f64>,
    logdet_xtx: f64,
    chol_xtx: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Eigenvalues of Z^T P0 Z (P0 projects off X), descending, clipped at 0.
    pub mu_eigs: DVector<f64>,
    /// Coordinates of P0 y in the corresponding eigenbasis: U^T Z^T P0 y.
    pub proj_coords: DVector<f64>,
    /// y^T P0 y.
    pub resid0: f64,
}

impl WorkingLmm {
    pub fn new(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        let p = x.ncols();
        let k = z.ncols();
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::DimensionMismatch(
                "WorkingLmm: row counts of y, X, Z differ".into(),
            ));
        }
        if n <= p {
            return Err(Error::InvalidDataset(format!(
                "need more observations ({n}) than fixed effects ({p})"
            )));
        }
        let xtx = x.transpose() * x;
        let chol_xtx =
            nalgebra::Cholesky::new(xtx.clone()).ok_or(Error::RankDeficientDesign)?;
        let logdet_xtx = 2.0 * (0..p).map(|i| chol_xtx.l()[(i, i)].ln()).sum::<f64>();
        let xtz = x.transpose() * z;
        let ztz = z.transpose() * z;
        let xty = x.transpose() * y;
        let zty = z.transpose() * y;
        let yty = y.dot(y);
        // Z^T P0 Z and Z^T P0 y without forming the n x n projection
        let xtx_inv_xtz = chol_xtx.solve(&xtz);
        let a = &ztz - xtz.transpose() * &xtx_inv_xtz;
        let a = (&a + a.transpose()) * 0.5;
        let xtx_inv_xty = chol_xtx.solve(&xty);
        let ztp0y = &zty - xtz.transpose() * &xtx_inv_xty;
        let resid0 = yty - xty.dot(&xtx_inv_xty);
        if !resid0.is_finite() {
            return Err(Error::NonFinite("null residual sum of squares"));
        }
        // degenerate responses (e.g. complete separation collapsing the
        // working response into the span of X) would give a zero RSS; floor
        // it so the likelihood stays finite and the caller sees
        // nonconvergence instead of a hard error
        let resid0 = resid0.max(1e-12 * (1.0 + yty));
        let (mut mu_eigs, u) = linalg::sym_eigen_desc(&a)?;
        for v in mu_eigs.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let proj_coords = u.transpose() * ztp0y;
        Ok(Self {
            n,
            p,
            k,
            xtx,
            xtz,
            ztz,
            xty,
            zty,
            logdet_xtx,
            chol_xtx,
            mu_eigs,
            proj_coords,
            resid0,
        })
    }

    /// The strictly positive eigenvalues of Z^T P0 Z, used by the null
    /// distribution simulation and the score test.
    pub fn positive_eigs(&self) -> Vec<f64> {
        let thresh = 1e-10 * self.mu_eigs.get(0).copied().unwrap_or(0.0).max(0.0);
        self.mu_eigs
            .iter()
            .copied()
            .filter(|&v| v > thresh)
            .collect()
    }

    /// Residual quadratic form y^T P(lambda) y.
    pub fn resid_quad(&self, lambda: f64) -> f64 {
        let mut acc = self.resid0;
        for s in 0..self.mu_eigs.len() {
            let mu = self.mu_eigs[s];
            let c = self.proj_coords[s];
            acc -= c * c * lambda / (1.0 + lambda * mu);
        }
        acc
    }

    /// Restricted log-likelihood profiled over the error variance:
    /// REL(lambda) = -1/2 [ log|V| + log|X^T V^-1 X| + (n-p) log(y^T P y) ].
    pub fn rel(&self, lambda: f64) -> f64 {
        let (n, p, k) = (self.n as f64, self.p, self.k);
        if lambda == 0.0 {
            return -0.5 * (self.logdet_xtx + (n - p as f64) * self.resid0.ln());
        }
        // C = I + lambda Z^T Z; log|V| = log|C| by Sylvester's identity
        let mut c = self.ztz.clone() * lambda;
        for i in 0..k {
            c[(i, i)] += 1.0;
        }
        let chol_c = match nalgebra::Cholesky::new(c) {
            Some(ch) => ch,
            None => return f64::NEG_INFINITY,
        };
        let logdet_v = 2.0 * (0..k).map(|i| chol_c.l()[(i, i)].ln()).sum::<f64>();
        // X^T V^-1 X = X^T X - lambda (X^T Z) C^-1 (Z^T X)
        let cinv_ztx = chol_c.solve(&self.xtz.transpose());
        let xvx = &self.xtx - (&self.xtz * &cinv_ztx) * lambda;
        let xvx = (&xvx + xvx.transpose()) * 0.5;
        let chol_xvx = match nalgebra::Cholesky::new(xvx) {
            Some(ch) => ch,
            None => return f64::NEG_INFINITY,
        };
        let logdet_xvx = 2.0 * (0..p).map(|i| chol_xvx.l()[(i, i)].ln()).sum::<f64>();
        let quad = self.resid_quad(lambda);
        if quad <= 0.0 || !quad.is_finite() {
            return f64::NEG_INFINITY;
        }
        -0.5 * (logdet_v + logdet_xvx + (n - p as f64) * quad.ln())
    }

    /// Maximize REL over lambda >= 0 and recover the variance estimates.
    pub fn profile(&self) -> Result<RemlFit> {
        let (lambda_hat, rel_at_opt) = maximize_over_lambda(|lam| self.rel(lam));
        let rel_at_zero = self.rel(0.0);
        if !rel_at_opt.is_finite() || !rel_at_zero.is_finite() {
            return Err(Error::OptimizationFailed(
                "non-finite restricted likelihood".into(),
            ));
        }
        let sigma2_e = self.resid_quad(lambda_hat) / (self.n - self.p) as f64;
        Ok(RemlFit {
            lambda_hat,
            sigma2_u: lambda_hat * sigma2_e,
            sigma2_e,
            rel_at_opt,
            rel_at_zero,
        })
    }

    /// GLS fixed effects and random-effect BLUPs at a given lambda.
    pub fn effects(&self, lambda: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        if lambda == 0.0 {
            let beta = self.chol_xtx.solve(&self.xty);
            return Ok((beta, DVector::zeros(self.k)));
        }
        let mut c = self.ztz.clone() * lambda;
        for i in 0..self.k {
            c[(i, i)] += 1.0;
        }
        let chol_c = nalgebra::Cholesky::new(c).ok_or_else(|| {
            Error::OptimizationFailed("effects: capacitance factorization failed".into())
        })?;
        // X^T V^-1 X, X^T V^-1 y via Woodbury
        let cinv_ztx = chol_c.solve(&self.xtz.transpose());
        let xvx = &self.xtx - (&self.xtz * &cinv_ztx) * lambda;
        let cinv_zty = chol_c.solve(&self.zty);
        let xvy = &self.xty - (&self.xtz * &cinv_zty) * lambda;
        let xvx = (&xvx + xvx.transpose()) * 0.5;
        let chol_xvx = nalgebra::Cholesky::new(xvx)
            .ok_or(Error::RankDeficientDesign)?;
        let beta = chol_xvx.solve(&xvy);
        // u = lambda Z^T V^-1 (y - X beta) = lambda C^-1 Z^T (y - X beta)
        let zt_resid = &self.zty - self.xtz.transpose() * &beta;
        let u = chol_c.solve(&zt_resid) * lambda;
        Ok((beta, u))
    }
}

/// REML estimates of the working LMM variance components.
#[derive(Debug, Clone, Copy)]
pub struct RemlFit {
    pub lambda_hat: f64,
    pub sigma2_u: f64,
    pub sigma2_e: f64,
    pub rel_at_opt: f64,
    pub rel_at_zero: f64,
}

/// Options for the PQL loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct PqlOptions {
    /// Hold the variance ratio fixed (e.g. 0 for the null fit) instead of
    /// profiling it.
    pub lambda_fixed: Option<f64>,
}

/// Converged PQL state.
#[derive(Debug, Clone)]
pub struct PqlFit {
    /// Fixed effects (intercept first, then the unpenalized terms).
    pub beta_hat: DVector<f64>,
    /// Random effects u on the model scale (u = Lambda1^{1/2} u*).
    pub u_hat: DVector<f64>,
    pub sigma2_u: f64,
    pub sigma2_e: f64,
    pub lambda_hat: f64,
    pub rel_at_opt: f64,
    pub rel_at_zero: f64,
    pub y_work: DVector<f64>,
    pub x_work: DMatrix<f64>,
    pub z_work: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub eta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn initial_eta(y: &DVector<f64>, family: Family, trials: Option<&[u64]>) -> DVector<f64> {
    DVector::from_fn(y.len(), |i, _| {
        let ni = trials.map_or(1.0, |t| t[i] as f64);
        match family {
            Family::Gaussian => y[i],
            Family::Bernoulli => {
                let p = ((y[i] + 0.5) / 2.0).clamp(0.1, 0.9);
                (p / (1.0 - p)).ln()
            }
            Family::Binomial => {
                let p = ((y[i] + 0.5) / (ni + 1.0)).clamp(0.05, 0.95);
                (p / (1.0 - p)).ln()
            }
            Family::Poisson => (y[i] + 0.5).ln(),
        }
    })
}

/// Fit the GLMM by penalized quasi-likelihood. A gaussian identity-link fit
/// reduces to a single working-LMM REML fit.
pub fn pql_fit(
    design: &GlmmDesign,
    y: &DVector<f64>,
    family: Family,
    trials: Option<&[u64]>,
    opts: PqlOptions,
) -> Result<PqlFit> {
    let n = y.len();
    if design.x.nrows() != n {
        return Err(Error::DimensionMismatch(
            "pql_fit: design and response sizes differ".into(),
        ));
    }
    family.validate_responses(y.as_slice(), trials)?;

    let mut eta = initial_eta(y, family, trials);
    let mut iterations = 0;
    let mut converged = false;
    let mut state: Option<(DVector<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>, RemlFit, DVector<f64>, DVector<f64>)> =
        None;

    let max_iter = if family == Family::Gaussian { 1 } else { PQL_MAX_ITER };
    while iterations < max_iter {
        iterations += 1;
        let (y_work, weights) = working_response(y, &eta, family, trials)?;
        let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let x_work = DMatrix::from_fn(n, design.x.ncols(), |i, j| sw[i] * design.x[(i, j)]);
        let z_work = DMatrix::from_fn(n, design.z.ncols(), |i, j| sw[i] * design.z[(i, j)]);
        let lmm = WorkingLmm::new(&y_work, &x_work, &z_work)?;
        let fit = match opts.lambda_fixed {
            Some(lam) => {
                let rel_opt = lmm.rel(lam);
                let sigma2_e = lmm.resid_quad(lam) / (lmm.n - lmm.p) as f64;
                RemlFit {
                    lambda_hat: lam,
                    sigma2_u: lam * sigma2_e,
                    sigma2_e,
                    rel_at_opt: rel_opt,
                    rel_at_zero: lmm.rel(0.0),
                }
            }
            None => lmm.profile()?,
        };
        let (beta, u) = lmm.effects(fit.lambda_hat)?;
        let eta_new = &design.x * &beta + &design.z * &u;
        let delta = (&eta_new - &eta).abs().max();
        eta = eta_new;
        state = Some((y_work, x_work, z_work, weights, fit, beta, u));
        if family == Family::Gaussian || delta < PQL_TOL {
            converged = true;
            break;
        }
    }

    let (y_work, x_work, z_work, weights, fit, beta, u) =
        state.expect("at least one PQL iteration runs");
    Ok(PqlFit {
        beta_hat: beta,
        u_hat: u,
        sigma2_u: fit.sigma2_u,
        sigma2_e: fit.sigma2_e,
        lambda_hat: fit.lambda_hat,
        rel_at_opt: fit.rel_at_opt,
        rel_at_zero: fit.rel_at_zero,
        y_work,
        x_work,
        z_work,
        weights,
        eta,
        iterations,
        converged,
    })
}
