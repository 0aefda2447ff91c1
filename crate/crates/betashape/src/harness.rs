//! Monte Carlo harness: synthetic data generation, factorial experiments,
//! and empirical type I error / power tables.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FunctionalDataset, Subject};
use crate::design::Hypothesis;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::linalg::{derive_seed, trapezoid_weights};
use crate::vctest::{run_test, Method, TestOptions};

pub const DEFAULT_GRID_SIZE: usize = 80;
pub const DEFAULT_SIGMA2_X: f64 = 0.05;
pub const DEFAULT_EIGENVALUES: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

/// Coefficient-function forms for the data-generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum CoefficientSpec {
    /// beta(t) = delta (constant).
    Scalar { delta: f64 },
    /// beta(t) = 1 + delta t.
    Linear { delta: f64 },
    /// beta(t) = 1 + t + delta cos(2 pi t).
    Trig { delta: f64 },
    /// beta(t) = delta * values(t), values tabulated on the common grid.
    Tabulated { values: Vec<f64>, delta: f64 },
}

impl CoefficientSpec {
    pub fn with_delta(&self, delta: f64) -> Self {
        match self {
            CoefficientSpec::Scalar { .. } => CoefficientSpec::Scalar { delta },
            CoefficientSpec::Linear { .. } => CoefficientSpec::Linear { delta },
            CoefficientSpec::Trig { .. } => CoefficientSpec::Trig { delta },
            CoefficientSpec::Tabulated { values, .. } => CoefficientSpec::Tabulated {
                values: values.clone(),
                delta,
            },
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            CoefficientSpec::Scalar { delta }
            | CoefficientSpec::Linear { delta }
            | CoefficientSpec::Trig { delta }
            | CoefficientSpec::Tabulated { delta, .. } => *delta,
        }
    }

    pub fn form_name(&self) -> &'static str {
        match self {
            CoefficientSpec::Scalar { .. } => "scalar",
            CoefficientSpec::Linear { .. } => "linear",
            CoefficientSpec::Trig { .. } => "trig",
            CoefficientSpec::Tabulated { .. } => "tabulated",
        }
    }

    pub fn evaluate(&self, grid: &[f64]) -> Result<Vec<f64>> {
        match self {
            CoefficientSpec::Scalar { delta } => Ok(vec![*delta; grid.len()]),
            CoefficientSpec::Linear { delta } => {
                Ok(grid.iter().map(|&t| 1.0 + delta * t).collect())
            }
            CoefficientSpec::Trig { delta } => Ok(grid
                .iter()
                .map(|&t| 1.0 + t + delta * (2.0 * std::f64::consts::PI * t).cos())
                .collect()),
            CoefficientSpec::Tabulated { values, delta } => {
                if values.len() != grid.len() {
                    return Err(Error::Config(format!(
                        "tabulated coefficient has {} values for a {}-point grid",
                        values.len(),
                        grid.len()
                    )));
                }
                Ok(values.iter().map(|&v| delta * v).collect())
            }
        }
    }
}

/// One simulation cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub family: Family,
    pub coefficient: CoefficientSpec,
    pub n: usize,
    /// Observations per subject; None means dense (all grid points).
    pub m_i: Option<usize>,
    pub grid_size: usize,
    pub sigma2_x: f64,
    pub eigenvalues: Vec<f64>,
    pub alpha_level: f64,
    pub replicates: usize,
    pub n_null_draws: usize,
    pub trials: u64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            family: Family::Gaussian,
            coefficient: CoefficientSpec::Scalar { delta: 0.0 },
            n: 100,
            m_i: None,
            grid_size: DEFAULT_GRID_SIZE,
            sigma2_x: DEFAULT_SIGMA2_X,
            eigenvalues: DEFAULT_EIGENVALUES.to_vec(),
            alpha_level: 0.05,
            replicates: 200,
            n_null_draws: 1000,
            trials: 10,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 4 {
            return Err(Error::Config("grid_size must be at least 4".into()));
        }
        if let Some(m) = self.m_i {
            if m < 2 || m > self.grid_size {
                return Err(Error::Config(format!(
                    "m_i must be in [2, grid_size={}]",
                    self.grid_size
                )));
            }
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::Config("alpha_level must be in (0,1)".into()));
        }
        if self.eigenvalues.is_empty() || self.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::Config("eigenvalues must be positive".into()));
        }
        if self.n < 3 {
            return Err(Error::Config("n must be at least 3".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_size)
            .map(|i| i as f64 / (self.grid_size - 1) as f64)
            .collect()
    }
}

/// Default orthonormal Fourier eigenfunctions {1, sqrt2 sin 2pi t,
/// sqrt2 cos 2pi t, sqrt2 sin 4pi t, sqrt2 cos 4pi t, ...}.
pub fn fourier_eigenfunctions(grid: &[f64], k: usize) -> DMatrix<f64> {
    let pi2 = 2.0 * std::f64::consts::PI;
    DMatrix::from_fn(grid.len(), k, |i, j| {
        let t = grid[i];
        if j == 0 {
            1.0
        } else {
            let freq = ((j + 1) / 2) as f64;
            let v = if j % 2 == 1 {
                (pi2 * freq * t).sin()
            } else {
                (pi2 * freq * t).cos()
            };
            std::f64::consts::SQRT_2 * v
        }
    })
}

/// One synthetic dataset per Eq.-style DGP: latent curves from the
/// truncated Karhunen-Loeve sum, responses through the canonical link of
/// eta_i = integral of X_i beta (dense latent curve, no observation noise).
pub fn generate_dataset(config: &SimConfig, seed: u64) -> Result<FunctionalDataset> {
    config.validate()?;
    let grid = config.grid();
    let m = grid.len();
    let k = config.eigenvalues.len();
    let psi = fourier_eigenfunctions(&grid, k);
    let beta = config.coefficient.evaluate(&grid)?;
    let w = trapezoid_weights(&grid);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut subjects = Vec::with_capacity(config.n);
    let mut responses = Vec::with_capacity(config.n);
    let mut trials_col = Vec::with_capacity(config.n);
    let all_idx: Vec<usize> = (0..m).collect();
    for i in 0..config.n {
        let xi: Vec<f64> = config
            .eigenvalues
            .iter()
            .map(|&l| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * l.sqrt()
            })
            .collect();
        let latent: Vec<f64> = (0..m)
            .map(|t| (0..k).map(|j| xi[j] * psi[(t, j)]).sum())
            .collect();
        let eta: f64 = (0..m).map(|t| w[t] * latent[t] * beta[t]).sum();
        let ni = config.trials as f64;
        let mu = config.family.inv_link(eta, ni);
        let y = match config.family {
            Family::Gaussian => {
                let g: f64 = StandardNormal.sample(&mut rng);
                mu + g
            }
            Family::Bernoulli => {
                if rng.gen_range(0.0..1.0) < mu {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Binomial => {
                let p = mu / ni;
                (0..config.trials)
                    .filter(|_| rng.gen_range(0.0..1.0) < p)
                    .count() as f64
            }
            Family::Poisson => {
                // inversion sampling; means here are modest
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut cum = (-mu).exp();
                let mut pmf = cum;
                let mut count = 0u64;
                while u > cum && count < 10_000 {
                    count += 1;
                    pmf *= mu / count as f64;
                    cum += pmf;
                }
                count as f64
            }
        };
        // observation layer: latent value plus measurement noise at the
        // sampled grid points
        let grid_idx: Vec<usize> = match config.m_i {
            None => all_idx.clone(),
            Some(mi) if mi >= m => all_idx.clone(),
            Some(mi) => {
                let mut chosen: Vec<usize> =
                    all_idx.choose_multiple(&mut rng, mi).copied().collect();
                chosen.sort_unstable();
                chosen
            }
        };
        let values: Vec<f64> = grid_idx
            .iter()
            .map(|&t| {
                let e: f64 = StandardNormal.sample(&mut rng);
                latent[t] + config.sigma2_x.sqrt() * e
            })
            .collect();
        subjects.push(Subject {
            id: format!("s{i:05}"),
            grid_idx,
            values,
        });
        responses.push(y);
        trials_col.push(config.trials);
    }
    Ok(FunctionalDataset {
        subjects,
        common_grid: grid,
        responses,
        trials: if config.family.needs_trials() {
            Some(trials_col)
        } else {
            None
        },
        family: config.family,
        pre_centered: false,
    })
}

/// Aggregated cell result. Runtime is reported on stderr only so result
/// files stay byte-identical across machines and thread counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub family: String,
    pub hypothesis: Hypothesis,
    pub method: Method,
    pub n: usize,
    pub m_i: Option<usize>,
    pub coefficient: String,
    pub delta: f64,
    pub replicates: usize,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
    pub nonconverged: usize,
    /// Rejection rate over converged replicates only.
    pub rate_converged: f64,
}

/// Run one cell: `replicates` independent datasets, each tested once.
/// Nonconverged (or failed) replicates count as non-rejections in the
/// headline rate and are reported separately.
pub fn run_experiment(
    config: &SimConfig,
    method: Method,
    hypothesis: Hypothesis,
) -> Result<ExperimentResult> {
    config.validate()?;
    let start = std::time::Instant::now();
    let outcomes: Vec<(bool, bool)> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let data_seed = derive_seed(config.seed, 2 * rep as u64);
            let null_seed = derive_seed(config.seed, 2 * rep as u64 + 1);
            let data = match generate_dataset(config, data_seed) {
                Ok(d) => d,
                Err(_) => return (false, false),
            };
            let opts = TestOptions {
                method,
                n_null_draws: config.n_null_draws,
                seed: null_seed,
                ..TestOptions::default()
            };
            match run_test(&data, hypothesis, &opts) {
                Ok(r) => (r.p_value < config.alpha_level && r.converged, r.converged),
                Err(_) => (false, false),
            }
        })
        .collect();
    let rejections = outcomes.iter().filter(|o| o.0).count();
    let converged = outcomes.iter().filter(|o| o.1).count();
    let rej_conv = outcomes.iter().filter(|o| o.0 && o.1).count();
    let rate = rejections as f64 / config.replicates as f64;
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "cell {} {} {} n={} reps={}: rate {:.4} ({:.1}s, {:.1} ms/rep)",
        config.family.name(),
        hypothesis.name(),
        method.name(),
        config.n,
        config.replicates,
        rate,
        elapsed,
        1000.0 * elapsed / config.replicates as f64
    );
    Ok(ExperimentResult {
        family: config.family.name().to_string(),
        hypothesis,
        method,
        n: config.n,
        m_i: config.m_i,
        coefficient: config.coefficient.form_name().to_string(),
        delta: config.coefficient.delta(),
        replicates: config.replicates,
        rejections,
        rate,
        se: (rate * (1.0 - rate) / config.replicates as f64).sqrt(),
        nonconverged: config.replicates - converged,
        rate_converged: if converged > 0 {
            rej_conv as f64 / converged as f64
        } else {
            0.0
        },
    })
}

/// Power-analysis mode: one experiment per delta, plus the doubled-n
/// variant of each cell.
pub fn power_mode(
    config: &SimConfig,
    method: Method,
    hypothesis: Hypothesis,
    delta_grid: &[f64],
) -> Result<Vec<ExperimentResult>> {
    let mut out = Vec::with_capacity(2 * delta_grid.len());
    for (i, &delta) in delta_grid.iter().enumerate() {
        let mut cell = config.clone();
        cell.coefficient = config.coefficient.with_delta(delta);
        cell.seed = derive_seed(config.seed, 1000 + i as u64);
        out.push(run_experiment(&cell, method, hypothesis)?);
        let mut doubled = cell.clone();
        doubled.n = 2 * cell.n;
        doubled.seed = derive_seed(config.seed, 2000 + i as u64);
        out.push(run_experiment(&doubled, method, hypothesis)?);
    }
    Ok(out)
}

/// CSV rows: one per cell.
pub fn write_results_csv<W: std::io::Write>(w: W, results: &[ExperimentResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "family",
        "hypothesis",
        "method",
        "n",
        "m_i",
        "coefficient",
        "delta",
        "replicates",
        "rejections",
        "rate",
        "se",
        "nonconverged",
        "rate_converged",
    ])?;
    for r in results {
        out.write_record([
            r.family.clone(),
            r.hypothesis.name().to_string(),
            r.method.name().to_string(),
            r.n.to_string(),
            r.m_i.map_or_else(|| "dense".to_string(), |m| m.to_string()),
            r.coefficient.clone(),
            format!("{}", r.delta),
            r.replicates.to_string(),
            r.rejections.to_string(),
            format!("{:.6}", r.rate),
            format!("{:.6}", r.se),
            r.nonconverged.to_string(),
            format!("{:.6}", r.rate_converged),
        ])?;
    }
    out.flush().map_err(Error::Io)?;
    Ok(())
}

/// Text summary table (one line per cell) for terminal output.
pub fn write_summary<W: std::io::Write>(mut w: W, results: &[ExperimentResult]) -> Result<()> {
    writeln!(
        w,
        "{:<9} {:<13} {:<6} {:>5} {:>6} {:<9} {:>6} {:>6} {:>7} {:>6}",
        "family", "hypothesis", "method", "n", "m_i", "coef", "delta", "rate", "se", "nc"
    )
    .map_err(Error::Io)?;
    for r in results {
        writeln!(
            w,
            "{:<9} {:<13} {:<6} {:>5} {:>6} {:<9} {:>6} {:>6.3} {:>7.4} {:>6}",
            r.family,
            r.hypothesis.name(),
            r.method.name(),
            r.n,
            r.m_i.map_or_else(|| "dense".to_string(), |m| m.to_string()),
            r.coefficient,
            r.delta,
            r.rate,
            r.se,
            r.nonconverged
        )
        .map_err(Error::Io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trapezoid;

    #[test]
    fn null_scalar_gaussian_mean_near_zero() {
        let config = SimConfig {
            n: 400,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&config, 1).unwrap();
        let mean = ds.responses.iter().sum::<f64>() / ds.responses.len() as f64;
        let se = 1.0 / (ds.responses.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn eta_matches_quadrature_oracle() {
        // scalar delta0: eta_i = delta0 * integral of X_i; reconstruct from
        // the noiseless latent curve and compare with a gaussian response
        // generated with no observation noise and zero response noise is
        // impractical, so instead regenerate the latent curve from the
        // subject observations of a noise-free config
        let delta0 = 2.5;
        let config = SimConfig {
            coefficient: CoefficientSpec::Scalar { delta: delta0 },
            sigma2_x: 0.0,
            n: 20,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&config, 7).unwrap();
        // with sigma2_x = 0 observations equal the latent curve; rebuild
        // eta by the trapezoid oracle and check the gaussian mean shift
        let config2 = SimConfig {
            seed: 0,
            ..config.clone()
        };
        let ds2 = generate_dataset(&config2, 7).unwrap();
        for i in 0..20 {
            assert_eq!(ds.subjects[i].values, ds2.subjects[i].values);
        }
        // oracle: same RNG stream replay is implementation-coupled, so
        // verify the identity eta = delta0 * trapz(X) through the family
        // mean of a deterministic replay instead: regenerate with the same
        // seed and gaussian family, then the response minus the noise draw
        // equals eta. Simplest honest check: correlation of Y with
        // delta0 * trapz(X) across subjects is near 1 for large delta0.
        let w = trapezoid_weights(&ds.common_grid);
        let etas: Vec<f64> = ds
            .subjects
            .iter()
            .map(|s| {
                delta0
                    * s.values
                        .iter()
                        .zip(&w)
                        .map(|(&x, &wt)| wt * x)
                        .sum::<f64>()
            })
            .collect();
        let resid: Vec<f64> = ds
            .responses
            .iter()
            .zip(&etas)
            .map(|(&y, &e)| y - e)
            .collect();
        let var_resid = {
            let m = resid.iter().sum::<f64>() / 20.0;
            resid.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / 19.0
        };
        // residuals are pure N(0,1) noise
        assert!(var_resid > 0.3 && var_resid < 3.0, "residual var {var_resid}");
    }

    #[test]
    fn dataset_bit_identical_for_fixed_seed() {
        let config = SimConfig {
            family: Family::Bernoulli,
            m_i: Some(20),
            n: 30,
            ..SimConfig::default()
        };
        let a = generate_dataset(&config, 99).unwrap();
        let b = generate_dataset(&config, 99).unwrap();
        for (sa, sb) in a.subjects.iter().zip(&b.subjects) {
            assert_eq!(sa.grid_idx, sb.grid_idx);
            assert_eq!(sa.values, sb.values);
        }
        assert_eq!(a.responses, b.responses);
        let c = generate_dataset(&config, 100).unwrap();
        assert_ne!(a.responses, c.responses);
    }

    #[test]
    fn sparse_sampling_counts() {
        let config = SimConfig {
            m_i: Some(10),
            n: 25,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&config, 3).unwrap();
        for s in &ds.subjects {
            assert_eq!(s.num_obs(), 10);
            let mut sorted = s.grid_idx.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), 10, "duplicate grid indices");
        }
    }

    #[test]
    fn binomial_responses_within_trials() {
        let config = SimConfig {
            family: Family::Binomial,
            trials: 10,
            n: 50,
            ..SimConfig::default()
        };
        let ds = generate_dataset(&config, 5).unwrap();
        assert!(ds.trials.is_some());
        for &y in &ds.responses {
            assert!((0.0..=10.0).contains(&y));
            assert_eq!(y.fract(), 0.0);
        }
    }

    #[test]
    fn coefficient_forms_evaluate() {
        let grid: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let s = CoefficientSpec::Scalar { delta: 2.0 }.evaluate(&grid).unwrap();
        assert!(s.iter().all(|&v| v == 2.0));
        let l = CoefficientSpec::Linear { delta: 3.0 }.evaluate(&grid).unwrap();
        assert_eq!(l[4], 4.0);
        let t = CoefficientSpec::Trig { delta: 1.0 }.evaluate(&grid).unwrap();
        assert!((t[0] - 2.0).abs() < 1e-12); // 1 + 0 + cos(0)
        let tab = CoefficientSpec::Tabulated {
            values: vec![1.0; 5],
            delta: 0.5,
        }
        .evaluate(&grid)
        .unwrap();
        assert!(tab.iter().all(|&v| v == 0.5));
        assert!(CoefficientSpec::Tabulated {
            values: vec![1.0; 3],
            delta: 1.0
        }
        .evaluate(&grid)
        .is_err());
    }

    #[test]
    fn experiment_smoke_and_thread_invariance() {
        let config = SimConfig {
            n: 40,
            replicates: 12,
            n_null_draws: 200,
            seed: 8,
            ..SimConfig::default()
        };
        let a = run_experiment(&config, Method::Arlrt, Hypothesis::Nullity).unwrap();
        assert_eq!(a.replicates, 12);
        assert!(a.rate >= 0.0 && a.rate <= 1.0);
        let expected_se = (a.rate * (1.0 - a.rate) / 12.0).sqrt();
        assert!((a.se - expected_se).abs() < 1e-15);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| run_experiment(&config, Method::Arlrt, Hypothesis::Nullity))
            .unwrap();
        assert_eq!(a.rejections, b.rejections);
        assert_eq!(a.nonconverged, b.nonconverged);
    }

    #[test]
    fn power_rises_with_signal() {
        let base = SimConfig {
            n: 150,
            replicates: 50,
            n_null_draws: 300,
            seed: 21,
            coefficient: CoefficientSpec::Trig { delta: 0.0 },
            ..SimConfig::default()
        };
        let null_cell = run_experiment(&base, Method::Arlrt, Hypothesis::Linearity).unwrap();
        let mut strong = base.clone();
        strong.coefficient = CoefficientSpec::Trig { delta: 4.0 };
        strong.seed = 22;
        let alt_cell = run_experiment(&strong, Method::Arlrt, Hypothesis::Linearity).unwrap();
        assert!(
            alt_cell.rate > null_cell.rate + 0.2,
            "null {} alt {}",
            null_cell.rate,
            alt_cell.rate
        );
    }

    #[test]
    fn power_mode_emits_doubled_n() {
        let config = SimConfig {
            n: 30,
            replicates: 4,
            n_null_draws: 100,
            coefficient: CoefficientSpec::Scalar { delta: 0.0 },
            ..SimConfig::default()
        };
        let rows = power_mode(&config, Method::Arlrt, Hypothesis::Nullity, &[0.0, 1.0]).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].n, 30);
        assert_eq!(rows[1].n, 60);
        assert_eq!(rows[2].delta, 1.0);
        assert_eq!(rows[3].delta, 1.0);
    }

    #[test]
    fn csv_output_shape() {
        let config = SimConfig {
            n: 30,
            replicates: 3,
            n_null_draws: 100,
            ..SimConfig::default()
        };
        let r = run_experiment(&config, Method::Ascore, Hypothesis::Functionality).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("family,hypothesis,method"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("gaussian,functionality,aScore,30,dense,scalar"));
    }

    #[test]
    fn eta_scalar_identity_direct() {
        // direct check of the quadrature identity: with beta = delta0 and a
        // deterministic latent curve, eta equals delta0 * trapezoid(X)
        let grid: Vec<f64> = (0..80).map(|i| i as f64 / 79.0).collect();
        let latent: Vec<f64> = grid.iter().map(|&t| (3.0 * t).sin() + 0.2).collect();
        let delta0 = 1.7;
        let beta = CoefficientSpec::Scalar { delta: delta0 }.evaluate(&grid).unwrap();
        let w = trapezoid_weights(&grid);
        let eta: f64 = (0..80).map(|t| w[t] * latent[t] * beta[t]).sum();
        let oracle = delta0 * trapezoid(&grid, &latent);
        assert!((eta - oracle).abs() < 1e-10);
    }
}
