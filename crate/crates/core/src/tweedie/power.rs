use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::glm::{check_inputs, fitted_means};
use super::Series;
use crate::error::{Error, Result};

/// How the dispersion is chosen at each candidate power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMethod {
    /// Total deviance over residual degrees of freedom.
    MeanDeviance,
    /// Mean-deviance start refined by maximizing the exact likelihood.
    #[default]
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub p: f64,
    pub phi: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub p: f64,
    pub phi: f64,
    /// The best grid point is the first or last one.
    pub edge: bool,
    pub profile: Vec<ProfilePoint>,
}

/// `{1.02, 1.04, ..., 1.98}`.
pub fn default_power_grid() -> Vec<f64> {
    (1..=49).map(|i| 1.0 + 0.02 * i as f64).collect()
}

fn loglik(series: &Series, y: &[f64], mu: &[f64], phi: f64, weights: Option<&[f64]>) -> f64 {
    y.iter()
        .zip(mu)
        .enumerate()
        .map(|(i, (y, m))| {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                0.0
            } else {
                w * series.log_density(*y, *m, phi)
            }
        })
        .sum()
}

/// Golden-section search for the likelihood-maximizing dispersion on a
/// log scale around `start`.
fn profile_phi(series: &Series, y: &[f64], mu: &[f64], start: f64, weights: Option<&[f64]>) -> (f64, f64) {
    let f = |log_phi: f64| loglik(series, y, mu, log_phi.exp(), weights);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (start.ln() - 2.5, start.ln() + 2.5);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-4 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let (best, ll) = if fc > fd { (c, fc) } else { (d, fd) };
    (best.exp(), ll)
}

fn evaluate(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    weights: Option<&[f64]>,
    p: f64,
    phi_method: PhiMethod,
) -> Result<ProfilePoint> {
    let (mu, deviance, k) = fitted_means(x, names, y, p, weights)?;
    let n = y.len();
    if n <= k {
        return Err(Error::domain("too few observations to estimate the dispersion"));
    }
    let series = Series::new(p);
    let phi0 = (deviance / (n - k) as f64).max(1e-12);
    let (phi, ll) = match phi_method {
        PhiMethod::MeanDeviance => (phi0, loglik(&series, y, &mu, phi0, weights)),
        PhiMethod::Profile => profile_phi(&series, y, &mu, phi0, weights),
    };
    Ok(ProfilePoint { p, phi, loglik: ll })
}

/// Profile likelihood over a grid of powers in (1, 2). For every power the
/// mean model is refitted, the dispersion chosen per `phi_method`, and the
/// exact series likelihood evaluated. The maximizer is refined by a
/// parabola through its neighbours.
pub fn estimate_power(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    weights: Option<&[f64]>,
    grid: &[f64],
    phi_method: PhiMethod,
) -> Result<PowerEstimate> {
    check_inputs(x, names, y, 1.5, weights)?;
    if grid.is_empty() {
        return Err(Error::domain("empty power grid"));
    }
    if grid.iter().any(|p| !(*p > 1.0 && *p < 2.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("power grid must be increasing inside (1, 2)"));
    }
    if y.iter().all(|v| *v == 0.0) {
        return Err(Error::domain("likelihood is degenerate when every response is zero"));
    }
    let attempts: Vec<Result<ProfilePoint>> =
        grid.par_iter().map(|&p| evaluate(x, names, y, weights, p, phi_method)).collect();
    let mut profile = Vec::with_capacity(grid.len());
    let mut first_failure = None;
    for (p, r) in grid.iter().zip(attempts) {
        match r {
            Ok(pt) => profile.push(pt),
            // Quasi-separated data can leave the mean model without a
            // finite optimum at some powers only; those drop out of the profile.
            Err(e @ (Error::NonConvergence { .. } | Error::Domain(_))) => {
                log::warn!("power {p}: mean model failed ({}), skipped", short(&e));
                first_failure.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if profile.is_empty() {
        return Err(first_failure.expect("grid is not empty"));
    }

    let mut best = 0;
    for (i, pt) in profile.iter().enumerate() {
        if pt.loglik > profile[best].loglik {
            best = i;
        }
    }
    let last = profile.len() - 1;
    let edge = last > 0 && (best == 0 || best == last);
    if last == 0 || edge {
        let pt = profile[best];
        return Ok(PowerEstimate { p: pt.p, phi: pt.phi, edge, profile });
    }
    let (a, b, c) = (profile[best - 1], profile[best], profile[best + 1]);
    let num = (b.p - a.p).powi(2) * (b.loglik - c.loglik) - (b.p - c.p).powi(2) * (b.loglik - a.loglik);
    let den = (b.p - a.p) * (b.loglik - c.loglik) - (b.p - c.p) * (b.loglik - a.loglik);
    let refined = if den.abs() > 0.0 { (b.p - 0.5 * num / den).clamp(a.p, c.p) } else { b.p };
    let pt = if refined == b.p { b } else { evaluate(x, names, y, weights, refined, phi_method).unwrap_or(b) };
    Ok(PowerEstimate {
        p: pt.p,
        phi: pt.phi,
        edge,
        profile,
    })
}

fn short(e: &Error) -> String {
    match e {
        Error::NonConvergence { iterations, .. } => format!("no convergence in {iterations} iterations"),
        other => other.to_string(),
    }
}
