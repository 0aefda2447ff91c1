//! Exponential-family response distributions with canonical links, plus the
//! normalized working response used by penalized quasi-likelihood.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean clip bounds for stability near the boundary of the mean space.
pub const PROB_CLIP: f64 = 1e-6;
pub const POISSON_MEAN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
    Binomial,
    Poisson,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Binomial => "binomial",
            Family::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "bernoulli" => Ok(Family::Bernoulli),
            "binomial" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }

    /// Inverse canonical link on the count/mean scale; `trials` only
    /// matters for binomial.
    pub fn inv_link(&self, eta: f64, trials: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Bernoulli => sigmoid(eta),
            Family::Binomial => trials * sigmoid(eta),
            Family::Poisson => eta.exp(),
        }
    }

    /// Canonical link g(mu).
    pub fn link(&self, mu: f64, trials: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Bernoulli => (mu / (1.0 - mu)).ln(),
            Family::Binomial => {
                let p = mu / trials;
                (p / (1.0 - p)).ln()
            }
            Family::Poisson => mu.ln(),
        }
    }

    /// Link derivative g'(mu).
    pub fn dlink(&self, mu: f64, trials: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => 1.0 / (mu * (1.0 - mu)),
            Family::Binomial => {
                let p = mu / trials;
                1.0 / (trials * p * (1.0 - p))
            }
            Family::Poisson => 1.0 / mu,
        }
    }

    /// Conditional variance V(mu) on the working scale (unit dispersion;
    /// the gaussian residual variance is absorbed by the working LMM).
    pub fn variance(&self, mu: f64, trials: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Bernoulli => mu * (1.0 - mu),
            Family::Binomial => {
                let p = mu / trials;
                trials * p * (1.0 - p)
            }
            Family::Poisson => mu,
        }
    }

    /// Clip a mean away from the boundary of its space.
    pub fn clip_mean(&self, mu: f64, trials: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Bernoulli => mu.clamp(PROB_CLIP, 1.0 - PROB_CLIP),
            Family::Binomial => mu.clamp(trials * PROB_CLIP, trials * (1.0 - PROB_CLIP)),
            Family::Poisson => mu.max(POISSON_MEAN_FLOOR),
        }
    }

    pub fn needs_trials(&self) -> bool {
        matches!(self, Family::Binomial)
    }

    /// Check that responses are inside the family's support.
    pub fn validate_responses(&self, y: &[f64], trials: Option<&[u64]>) -> Result<()> {
        match self {
            Family::Gaussian => {}
            Family::Bernoulli => {
                if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::FamilyMismatch(
                        "bernoulli responses must be 0 or 1".into(),
                    ));
                }
            }
            Family::Binomial => {
                let tr = trials.ok_or_else(|| {
                    Error::FamilyMismatch("binomial responses require a trials column".into())
                })?;
                if tr.len() != y.len() {
                    return Err(Error::FamilyMismatch(
                        "trials length must match responses".into(),
                    ));
                }
                for (&yi, &ni) in y.iter().zip(tr) {
                    if ni < 1 || yi < 0.0 || yi > ni as f64 || yi.fract() != 0.0 {
                        return Err(Error::FamilyMismatch(format!(
                            "binomial response {yi} invalid for trials {ni}"
                        )));
                    }
                }
            }
            Family::Poisson => {
                if y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                    return Err(Error::FamilyMismatch(
                        "poisson responses must be nonnegative integers".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Normalized working response and weights at the current linear predictor:
/// Ytilde_i = W_i^{1/2} [eta_i + g'(mu_i)(Y_i - mu_i)], W_i = [g'(mu_i)^2 V(mu_i)]^{-1}.
pub fn working_response(
    y: &DVector<f64>,
    eta: &DVector<f64>,
    family: Family,
    trials: Option<&[u64]>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = y.len();
    if eta.len() != n {
        return Err(Error::DimensionMismatch(
            "working_response: y and eta lengths differ".into(),
        ));
    }
    let mut y_work = DVector::zeros(n);
    let mut weights = DVector::zeros(n);
    for i in 0..n {
        let ni = trials.map_or(1.0, |t| t[i] as f64);
        let e = eta[i];
        if !e.is_finite() {
            return Err(Error::NonFinite("working response linear predictor"));
        }
        let mu = family.clip_mean(family.inv_link(e, ni), ni);
        let h = family.dlink(mu, ni);
        let v = family.variance(mu, ni);
        let w = 1.0 / (h * h * v);
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::NonFinite("working weight"));
        }
        weights[i] = w;
        y_work[i] = w.sqrt() * (e + h * (y[i] - mu));
    }
    Ok((y_work, weights))
}
