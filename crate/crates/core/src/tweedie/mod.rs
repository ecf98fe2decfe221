//! Tweedie exponential-dispersion models with variance `phi * mu^p`.
//!
//! For `1 < p < 2` the law is compound Poisson-Gamma: `N ~ Poisson(lambda)`
//! claims with `lambda = mu^(2-p) / (phi (2-p))`, each Gamma with shape
//! `(2-p)/(p-1)` and scale `phi (p-1) mu^(p-1)`. The canonical parameter is
//! `psi = mu^(1-p)/(1-p)` and the cumulant `kappa = mu^(2-p)/(2-p)`.

mod glm;
mod power;

pub use glm::{fit_glm, fit_glm_full, two_stage_fit, GlmFit, GlmModel, TwoStageFit, INTERCEPT};
pub(crate) use glm::check_inputs as check_response;
pub use power::{estimate_power, default_power_grid, PhiMethod, PowerEstimate};

use rand_distr::{Distribution, Gamma, InverseGaussian, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TweedieParams {
    pub p: f64,
    pub mu: f64,
    pub phi: f64,
}

impl TweedieParams {
    pub fn new(mu: f64, phi: f64, p: f64) -> Result<Self> {
        let params = TweedieParams { p, mu, phi };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::domain(format!("mean must be positive, got {}", self.mu)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::domain(format!("dispersion must be positive, got {}", self.phi)));
        }
        if !(self.p <= 0.0 || self.p >= 1.0) || !self.p.is_finite() {
            return Err(Error::domain(format!("no Tweedie model has power {}", self.p)));
        }
        Ok(())
    }
}

/// `V(mu) = mu^p`.
pub fn variance_function(mu: f64, p: f64) -> f64 {
    mu.powf(p)
}

fn poisson_rate(mu: f64, phi: f64, p: f64) -> f64 {
    mu.powf(2.0 - p) / (phi * (2.0 - p))
}

fn compound_poisson(p: f64) -> bool {
    p > 1.0 && p < 2.0
}

/// Probability of an exact zero, defined only for `1 < p < 2`.
pub fn zero_mass(mu: f64, phi: f64, p: f64) -> Result<f64> {
    if !compound_poisson(p) {
        return Err(Error::domain(format!("power {p} has no probability atom at zero")));
    }
    TweedieParams::new(mu, phi, p)?;
    Ok((-poisson_rate(mu, phi, p)).exp())
}

/// Precomputed log-gamma terms of the series for one power.
#[derive(Debug, Clone)]
pub(crate) struct Series {
    p: f64,
    /// `(2-p)/(p-1)`, the Gamma shape of one claim.
    shape: f64,
    lg_fact: Vec<f64>,
    lg_shape: Vec<f64>,
}

const SERIES_TABLE: usize = 2048;
/// ln(1e-17): terms below this fraction of the largest are negligible.
const SERIES_CUTOFF: f64 = -39.1439465808987;

impl Series {
    pub(crate) fn new(p: f64) -> Self {
        let shape = (2.0 - p) / (p - 1.0);
        let lg_fact = (0..SERIES_TABLE).map(|j| ln_gamma(1.0 + j as f64)).collect();
        let lg_shape = (0..SERIES_TABLE)
            .map(|j| if j == 0 { f64::INFINITY } else { ln_gamma(j as f64 * shape) })
            .collect();
        Series { p, shape, lg_fact, lg_shape }
    }

    fn log_term(&self, j: usize, log_z: f64) -> f64 {
        let (a, b) = if j < SERIES_TABLE {
            (self.lg_fact[j], self.lg_shape[j])
        } else {
            (ln_gamma(1.0 + j as f64), ln_gamma(j as f64 * self.shape))
        };
        j as f64 * log_z - a - b
    }

    /// `ln sum_j W_j` where `a(y, phi) = sum_j W_j / y`, summed outwards from
    /// the dominant index.
    fn log_w_sum(&self, y: f64, phi: f64) -> f64 {
        let p = self.p;
        let c = self.shape;
        let log_z = c * y.ln() - c * (p - 1.0).ln() - (1.0 + c) * phi.ln() - (2.0 - p).ln();
        let j_peak = ((y.powf(2.0 - p) / (phi * (2.0 - p))).round() as usize).max(1);
        let peak = self.log_term(j_peak, log_z);
        let mut max = peak;
        let mut acc = 1.0;
        let mut j = j_peak + 1;
        loop {
            let t = self.log_term(j, log_z);
            if t > max {
                acc = acc * (max - t).exp() + 1.0;
                max = t;
            } else {
                acc += (t - max).exp();
            }
            if t - max < SERIES_CUTOFF {
                break;
            }
            j += 1;
        }
        let mut j = j_peak;
        while j > 1 {
            j -= 1;
            let t = self.log_term(j, log_z);
            if t > max {
                acc = acc * (max - t).exp() + 1.0;
                max = t;
            } else {
                acc += (t - max).exp();
            }
            if t - max < SERIES_CUTOFF {
                break;
            }
        }
        max + acc.ln()
    }

    /// Log density for `1 < p < 2`; `-inf` off the support.
    pub(crate) fn log_density(&self, y: f64, mu: f64, phi: f64) -> f64 {
        let p = self.p;
        if y < 0.0 {
            return f64::NEG_INFINITY;
        }
        let kappa = mu.powf(2.0 - p) / (2.0 - p);
        if y == 0.0 {
            return -kappa / phi;
        }
        let theta = mu.powf(1.0 - p) / (1.0 - p);
        -y.ln() + self.log_w_sum(y, phi) + (y * theta - kappa) / phi
    }
}

/// Log density. Closed forms cover `p` in {0, 1, 2, 3}; `1 < p < 2` uses
/// the series expansion of the normalizing function. At `p = 1` the law
/// lives on the lattice `phi * {0, 1, 2, ...}`.
pub fn log_density(y: f64, params: &TweedieParams) -> Result<f64> {
    params.validate()?;
    let TweedieParams { p, mu, phi } = *params;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(if p == 0.0 {
        -0.5 * (ln_2pi + phi.ln()) - (y - mu).powi(2) / (2.0 * phi)
    } else if p == 1.0 {
        let k = y / phi;
        if y < 0.0 || (k - k.round()).abs() > 1e-9 * k.max(1.0) {
            f64::NEG_INFINITY
        } else {
            let k = k.round();
            let rate = mu / phi;
            let log_rate = if k == 0.0 { 0.0 } else { k * rate.ln() };
            log_rate - rate - ln_gamma(k + 1.0)
        }
    } else if compound_poisson(p) {
        Series::new(p).log_density(y, mu, phi)
    } else if p == 2.0 {
        if y <= 0.0 {
            f64::NEG_INFINITY
        } else {
            let shape = 1.0 / phi;
            let scale = mu * phi;
            (shape - 1.0) * y.ln() - y / scale - ln_gamma(shape) - shape * scale.ln()
        }
    } else if p == 3.0 {
        if y <= 0.0 {
            f64::NEG_INFINITY
        } else {
            -0.5 * (ln_2pi + phi.ln() + 3.0 * y.ln()) - (y - mu).powi(2) / (2.0 * phi * mu * mu * y)
        }
    } else {
        return Err(Error::domain(format!("density is not provided for power {p}")));
    })
}

pub fn density(y: f64, params: &TweedieParams) -> Result<f64> {
    Ok(log_density(y, params)?.exp())
}

/// Unit deviance `d(y, mu)`. Returns NaN outside the support (`y < 0` for
/// `p >= 1`, `y <= 0` for `p >= 2`).
pub fn unit_deviance(y: f64, mu: f64, p: f64) -> f64 {
    if p == 0.0 {
        return (y - mu).powi(2);
    }
    if y < 0.0 || (p >= 2.0 && y == 0.0) {
        return f64::NAN;
    }
    if p == 1.0 {
        let ylogy = if y == 0.0 { 0.0 } else { y * (y / mu).ln() };
        return 2.0 * (ylogy - (y - mu));
    }
    if p == 2.0 {
        return 2.0 * ((y - mu) / mu - (y / mu).ln());
    }
    let first = if y == 0.0 { 0.0 } else { y.powf(2.0 - p) / ((1.0 - p) * (2.0 - p)) };
    let d = 2.0 * (first - y * mu.powf(1.0 - p) / (1.0 - p) + mu.powf(2.0 - p) / (2.0 - p));
    d.max(0.0)
}

/// Weighted total deviance.
pub fn total_deviance(y: &[f64], mu: &[f64], p: f64, weights: Option<&[f64]>) -> f64 {
    y.iter()
        .zip(mu)
        .enumerate()
        .map(|(i, (y, m))| weights.map_or(1.0, |w| w[i]) * unit_deviance(*y, *m, p))
        .sum()
}

/// `n` independent draws, deterministic per seed.
pub fn sample(params: &TweedieParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let TweedieParams { p, mu, phi } = *params;
    let mut rng = stream_rng(seed, 0);
    let bad = |e: &dyn std::fmt::Display| Error::domain(format!("sampler: {e}"));
    if compound_poisson(p) {
        let rate = poisson_rate(mu, phi, p);
        let shape = (2.0 - p) / (p - 1.0);
        let scale = phi * (p - 1.0) * mu.powf(p - 1.0);
        let counts = Poisson::new(rate).map_err(|e| bad(&e))?;
        return Ok((0..n)
            .map(|_| {
                let k: f64 = counts.sample(&mut rng);
                if k == 0.0 {
                    0.0
                } else {
                    // A sum of k iid Gamma(shape) claims is Gamma(k * shape).
                    Gamma::new(k * shape, scale).expect("positive shape").sample(&mut rng)
                }
            })
            .collect());
    }
    Ok(if p == 0.0 {
        let d = Normal::new(mu, phi.sqrt()).map_err(|e| bad(&e))?;
        (0..n).map(|_| d.sample(&mut rng)).collect()
    } else if p == 1.0 {
        let d = Poisson::new(mu / phi).map_err(|e| bad(&e))?;
        (0..n).map(|_| phi * d.sample(&mut rng)).collect()
    } else if p == 2.0 {
        let d = Gamma::new(1.0 / phi, mu * phi).map_err(|e| bad(&e))?;
        (0..n).map(|_| d.sample(&mut rng)).collect()
    } else if p == 3.0 {
        let d = InverseGaussian::new(mu, 1.0 / phi).map_err(|e| bad(&e))?;
        (0..n).map(|_| d.sample(&mut rng)).collect()
    } else {
        return Err(Error::domain(format!("no sampler for power {p}")));
    })
}
