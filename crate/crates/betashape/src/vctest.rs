//! The shape tests: approximate RLRT with a simulated finite-sample null
//! distribution, and the variance-component score alternative.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

use crate::bases::{decompose_penalty, difference_penalty, SplineBasis};
use crate::data::FunctionalDataset;
use crate::design::{build_design, coefficient_from_effects, compute_j, Hypothesis};
use crate::error::{Error, Result};
use crate::fpca::{fit_fpca, FpcaOptions};
use crate::linalg::{derive_seed, maximize_over_lambda};
use crate::pql::{pql_fit, PqlFit, PqlOptions, WorkingLmm};

/// Draws per seeding chunk; fixed so the null sample is identical for any
/// thread count.
const NULL_SIM_CHUNK: usize = 64;

pub const DEFAULT_NULL_DRAWS: usize = 10_000;
pub const DEFAULT_KU: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "aRLRT")]
    Arlrt,
    #[serde(rename = "aScore")]
    Ascore,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Arlrt => "aRLRT",
            Method::Ascore => "aScore",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arlrt" | "rlrt" => Ok(Method::Arlrt),
            "ascore" | "score" => Ok(Method::Ascore),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestOptions {
    pub method: Method,
    pub n_null_draws: usize,
    pub seed: u64,
    pub k_u: usize,
    pub kx_override: Option<usize>,
    /// Evaluate REL(0) on a separately converged null-model working LMM
    /// instead of the alternative fit's own surface.
    pub two_fit_null: bool,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            method: Method::Arlrt,
            n_null_draws: DEFAULT_NULL_DRAWS,
            seed: 0,
            k_u: DEFAULT_KU,
            kx_override: None,
            two_fit_null: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub hypothesis: Hypothesis,
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub null_draws: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_at_zero: Option<f64>,
    pub k_x: usize,
    pub k_u: usize,
    pub lambda_hat: f64,
    pub sigma2_u: f64,
    pub sigma2_e: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grid: Vec<f64>,
    /// Estimated coefficient function on the common grid (alternative fit).
    pub beta_hat: Vec<f64>,
}

/// RLRT statistic on the converged working LMM, Eq. (5) with both sups
/// taken on the same restricted-likelihood surface.
pub fn rlrt_statistic(fit: &PqlFit) -> Result<f64> {
    if !fit.rel_at_opt.is_finite() || !fit.rel_at_zero.is_finite() {
        return Err(Error::NonFinite("restricted likelihood in RLRT"));
    }
    Ok((2.0 * (fit.rel_at_opt - fit.rel_at_zero)).max(0.0))
}

fn null_objective(mu: &[f64], w2: &[f64], extra: f64, n: usize, p: usize, lam: f64) -> f64 {
    let mut num = 0.0;
    let mut den = extra;
    let mut logdet = 0.0;
    for (&m, &w) in mu.iter().zip(w2) {
        let r = 1.0 + lam * m;
        num += lam * m * w / r;
        den += w / r;
        logdet += r.ln();
    }
    (n - p) as f64 * (1.0 + num / den).ln() - logdet
}

/// Spectral simulation of the finite-sample RLRT null distribution,
/// conditioning on the working design's eigenvalues. Deterministic for a
/// given seed regardless of thread count (fixed-size seeding chunks).
pub fn simulate_rlrt_null(
    mu_eigs: &[f64],
    n: usize,
    p: usize,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if mu_eigs.is_empty() {
        return Err(Error::EmptyNullSpectrum);
    }
    if mu_eigs.iter().any(|&m| m <= 0.0 || !m.is_finite()) {
        return Err(Error::Config(
            "null-spectrum eigenvalues must be positive and finite".into(),
        ));
    }
    if n <= p {
        return Err(Error::InvalidDataset(format!(
            "need n ({n}) > p ({p}) for the null simulation"
        )));
    }
    let k = mu_eigs.len();
    let extra_df = (n - p).saturating_sub(k);
    let n_chunks = n_draws.div_ceil(NULL_SIM_CHUNK);
    let mut draws: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, c as u64));
            let take = NULL_SIM_CHUNK.min(n_draws - c * NULL_SIM_CHUNK);
            let mut out = Vec::with_capacity(take);
            for _ in 0..take {
                let w2: Vec<f64> = (0..k)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        g * g
                    })
                    .collect();
                let extra = if extra_df > 0 {
                    ChiSquared::new(extra_df as f64).unwrap().sample(&mut rng)
                } else {
                    0.0
                };
                let (_, sup) =
                    maximize_over_lambda(|lam| null_objective(mu_eigs, &w2, extra, n, p, lam));
                out.push(sup.max(0.0));
            }
            out
        })
        .collect();
    draws.truncate(n_draws);
    Ok(draws)
}

/// Add-one Monte Carlo p-value.
pub fn rlrt_pvalue(stat: f64, null_sample: &[f64]) -> f64 {
    let hits = null_sample.iter().filter(|&&d| d >= stat).count();
    (1 + hits) as f64 / (1 + null_sample.len()) as f64
}

/// One-variance-component score statistic on the null working LMM with a
/// Satterthwaite-scaled chi-square reference.
pub fn score_test_statistic(lmm: &WorkingLmm) -> Result<(f64, f64)> {
    let sigma2_e = lmm.resid_quad(0.0) / (lmm.n - lmm.p) as f64;
    if sigma2_e <= 0.0 || !sigma2_e.is_finite() {
        return Err(Error::NonFinite("null error variance in score test"));
    }
    let mus = lmm.positive_eigs();
    let mut u_stat = 0.0;
    for s in 0..lmm.mu_eigs.len() {
        let a = lmm.proj_coords[s];
        u_stat += a * a;
    }
    let u_stat = u_stat / (2.0 * sigma2_e * sigma2_e);
    let e: f64 = mus.iter().sum::<f64>() / (2.0 * sigma2_e);
    let v: f64 = mus.iter().map(|m| m * m).sum::<f64>() / (2.0 * sigma2_e * sigma2_e);
    if e <= 0.0 || v <= 0.0 {
        // degenerate random design: no evidence against the null
        return Ok((0.0, 1.0));
    }
    let a_scale = v / (2.0 * e);
    let b_df = 2.0 * e * e / v;
    let chi = ChiSquaredDist::new(b_df)
        .map_err(|_| Error::NonFinite("Satterthwaite degrees of freedom"))?;
    let p = 1.0 - chi.cdf(u_stat / a_scale);
    Ok((u_stat, p.clamp(0.0, 1.0)))
}

/// Full pipeline: FPCA, penalty split, design assembly, PQL fits, and the
/// selected test.
pub fn run_test(
    data: &FunctionalDataset,
    hypothesis: Hypothesis,
    opts: &TestOptions,
) -> Result<TestResult> {
    let d = hypothesis.penalty_order();
    let fpca_opts = FpcaOptions {
        kx_override: opts.kx_override,
        ..FpcaOptions::default()
    };
    let model = fit_fpca(data, d, &fpca_opts)?;
    let grid = &model.grid;
    let basis = SplineBasis::new(grid[0], grid[grid.len() - 1], opts.k_u, 3)?;
    let pen = decompose_penalty(&difference_penalty(opts.k_u, d)?, d)?;
    let psi = model.eigenfunctions.columns(0, model.k_x).clone_owned();
    let j = compute_j(&psi, &basis, grid)?;
    let design = build_design(&model.scores, &j, &pen, hypothesis)?;
    let y = DVector::from_vec(data.responses.clone());
    let trials = data.trials.as_deref();

    let alt = pql_fit(&design, &y, data.family, trials, PqlOptions::default())?;

    // coefficient estimate from the alternative fit: g = Q1 u* + Q2 beta*
    // with u* = Lambda1^{-1/2} u_hat
    let beta_star = DVector::from_fn(d, |i, _| alt.beta_hat[i + 1]);
    let u_star = DVector::from_fn(opts.k_u - d, |s, _| alt.u_hat[s] / pen.lambda1[s].sqrt());
    let beta_fn = coefficient_from_effects(&pen, &basis, grid, &beta_star, &u_star)?;

    let (statistic, p_value, mass_at_zero, null_draws, converged) = match opts.method {
        Method::Arlrt => {
            let stat = if opts.two_fit_null {
                let null = pql_fit(
                    &design,
                    &y,
                    data.family,
                    trials,
                    PqlOptions {
                        lambda_fixed: Some(0.0),
                    },
                )?;
                (2.0 * (alt.rel_at_opt - null.rel_at_zero)).max(0.0)
            } else {
                rlrt_statistic(&alt)?
            };
            let lmm = WorkingLmm::new(&alt.y_work, &alt.x_work, &alt.z_work)?;
            let mus = lmm.positive_eigs();
            let draws = simulate_rlrt_null(&mus, lmm.n, lmm.p, opts.n_null_draws, opts.seed)?;
            let p = rlrt_pvalue(stat, &draws);
            let mass = draws.iter().filter(|&&v| v == 0.0).count() as f64 / draws.len() as f64;
            (stat, p, Some(mass), draws.len(), alt.converged)
        }
        Method::Ascore => {
            let null = pql_fit(
                &design,
                &y,
                data.family,
                trials,
                PqlOptions {
                    lambda_fixed: Some(0.0),
                },
            )?;
            let lmm = WorkingLmm::new(&null.y_work, &null.x_work, &null.z_work)?;
            let (stat, p) = score_test_statistic(&lmm)?;
            (stat, p, None, 0, alt.converged && null.converged)
        }
    };

    Ok(TestResult {
        hypothesis,
        method: opts.method,
        statistic,
        p_value,
        null_draws,
        mass_at_zero,
        k_x: model.k_x,
        k_u: opts.k_u,
        lambda_hat: alt.lambda_hat,
        sigma2_u: alt.sigma2_u,
        sigma2_e: alt.sigma2_e,
        converged,
        iterations: alt.iterations,
        grid: grid.clone(),
        beta_hat: beta_fn,
    })
}
