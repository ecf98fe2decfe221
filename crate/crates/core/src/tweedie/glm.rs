use indexmap::IndexMap;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::power::{estimate_power, PhiMethod, PowerEstimate};
use super::{total_deviance, variance_function};
use crate::data::cook_cutoff;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;

/// Log-link Tweedie GLM. Coefficients are on the original feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub coefficients: IndexMap<String, f64>,
    pub p: f64,
    pub phi: f64,
    pub deviance: f64,
    pub n_iter: usize,
    /// Feature columns dropped because they were constant.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

impl GlmModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[INTERCEPT]
    }

    /// Linear predictor for rows of `x` whose columns are named by `names`.
    pub fn linear_predictor(&self, x: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
        if names.len() != x.ncols() {
            return Err(Error::LengthMismatch(names.len(), x.ncols()));
        }
        let mut eta = vec![self.intercept(); x.nrows()];
        for (name, beta) in self.coefficients.iter().skip(1) {
            let j = names.iter().position(|n| n == name).ok_or_else(|| {
                Error::Schema(format!("prediction data lacks model column `{name}`"))
            })?;
            for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
                *e += beta * v;
            }
        }
        Ok(eta)
    }

    pub fn predict(&self, x: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
        Ok(self.linear_predictor(x, names)?.into_iter().map(f64::exp).collect())
    }
}

/// A fit together with the per-observation quantities used by diagnostics.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub model: GlmModel,
    pub fitted: Vec<f64>,
    /// Diagonal of the weighted hat matrix at convergence.
    pub leverage: Vec<f64>,
    pub deviance_trace: Vec<f64>,
}

pub(crate) fn check_inputs(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    p: f64,
    weights: Option<&[f64]>,
) -> Result<()> {
    if names.len() != x.ncols() {
        return Err(Error::LengthMismatch(names.len(), x.ncols()));
    }
    if y.len() != x.nrows() {
        return Err(Error::LengthMismatch(y.len(), x.nrows()));
    }
    if let Some(w) = weights {
        if w.len() != y.len() {
            return Err(Error::LengthMismatch(w.len(), y.len()));
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::domain("prior weights must be finite and non-negative"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("response contains non-finite values"));
    }
    if p >= 1.0 && y.iter().any(|v| *v < 0.0) {
        return Err(Error::domain("response must be non-negative"));
    }
    if p >= 2.0 && y.iter().any(|v| *v <= 0.0) {
        return Err(Error::domain(format!("power {p} needs a strictly positive response")));
    }
    Ok(())
}

fn is_constant(col: nalgebra::DVectorView<f64>) -> bool {
    let first = col[0];
    col.iter().all(|v| *v == first)
}

/// Internal standardized design: intercept plus kept columns.
struct Design {
    z: DMatrix<f64>,
    kept: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize(x: &DMatrix<f64>, names: &[String]) -> Result<(Design, Vec<String>)> {
    let n = x.nrows();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..x.ncols() {
        if n == 0 || is_constant(x.column(j)) {
            dropped.push(names[j].clone());
        } else {
            kept.push(j);
        }
    }
    let mut z = DMatrix::from_element(n, kept.len() + 1, 1.0);
    let mut center = Vec::with_capacity(kept.len());
    let mut scale = Vec::with_capacity(kept.len());
    for (c, &j) in kept.iter().enumerate() {
        let col = x.column(j);
        let m = col.mean();
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            z[(i, c + 1)] = (col[i] - m) / s;
        }
        center.push(m);
        scale.push(s);
    }

    // Modified Gram-Schmidt on the standardized columns flags any column
    // that is (numerically) a combination of earlier ones.
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for c in 0..z.ncols() {
        let mut v = z.column(c).clone_owned();
        let norm0 = v.norm();
        for b in &q {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        let norm = v.norm();
        if norm <= 1e-7 * norm0 {
            collinear.push(if c == 0 { INTERCEPT.to_string() } else { names[kept[c - 1]].clone() });
        } else {
            q.push(v / norm);
        }
    }
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }
    Ok((Design { z, kept, center, scale }, dropped))
}

fn eta_of(z: &DMatrix<f64>, gamma: &DVector<f64>) -> Vec<f64> {
    (z * gamma).iter().map(|e| e.clamp(-700.0, 700.0)).collect()
}

struct Irls {
    gamma: DVector<f64>,
    mu: Vec<f64>,
    deviance: f64,
    trace: Vec<f64>,
    n_iter: usize,
    chol: Cholesky<f64, Dyn>,
    working: Vec<f64>,
}

fn weighted_system(
    z: &DMatrix<f64>,
    eta: &[f64],
    mu: &[f64],
    y: &[f64],
    p: f64,
    weights: Option<&[f64]>,
) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let n = z.nrows();
    let k = z.ncols();
    let mut zw = DMatrix::zeros(n, k);
    let mut rhs = DVector::zeros(n);
    let mut working = vec![0.0; n];
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]) * mu[i].powf(2.0 - p);
        working[i] = w;
        let sw = w.sqrt();
        let target = eta[i] + (y[i] - mu[i]) / mu[i];
        rhs[i] = sw * target;
        for c in 0..k {
            zw[(i, c)] = sw * z[(i, c)];
        }
    }
    (zw, rhs, working)
}

fn irls(z: &DMatrix<f64>, y: &[f64], p: f64, weights: Option<&[f64]>) -> Result<Irls> {
    let n = y.len();
    let k = z.ncols();
    let wsum: f64 = (0..n).map(|i| weights.map_or(1.0, |w| w[i])).sum();
    let ybar = (0..n).map(|i| weights.map_or(1.0, |w| w[i]) * y[i]).sum::<f64>() / wsum;
    if !(ybar > 0.0) {
        return Err(Error::domain("log-link fit needs a positive weighted mean response"));
    }
    let mut gamma = DVector::zeros(k);
    gamma[0] = ybar.ln();
    let mut eta = eta_of(z, &gamma);
    let mut mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let mut deviance = total_deviance(y, &mu, p, weights);
    let mut trace = vec![deviance];
    let singular = || Error::domain("weighted normal equations are numerically singular");

    for iter in 1..=MAX_ITER {
        let (zw, rhs, _) = weighted_system(z, &eta, &mu, y, p, weights);
        let chol = Cholesky::new(zw.tr_mul(&zw)).ok_or_else(singular)?;
        let proposal = chol.solve(&zw.tr_mul(&rhs));

        let mut step = proposal.clone();
        let mut accepted = None;
        for _ in 0..30 {
            let e = eta_of(z, &step);
            let m: Vec<f64> = e.iter().map(|v| v.exp()).collect();
            let d = total_deviance(y, &m, p, weights);
            if d.is_finite() && d <= deviance * (1.0 + 1e-12) + 1e-300 {
                accepted = Some((e, m, d));
                break;
            }
            step = (&gamma + &step) * 0.5;
        }
        let Some((e, m, d)) = accepted else {
            // No descent step exists: the current point is already optimal
            // to working precision.
            return finish(z, y, p, weights, gamma, eta, mu, deviance, trace, iter);
        };
        let change = (deviance - d).abs() / (d.abs() + 0.1);
        gamma = step;
        eta = e;
        mu = m;
        deviance = d;
        trace.push(d);
        if change < TOL {
            return finish(z, y, p, weights, gamma, eta, mu, deviance, trace, iter);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    z: &DMatrix<f64>,
    y: &[f64],
    p: f64,
    weights: Option<&[f64]>,
    gamma: DVector<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
    trace: Vec<f64>,
    n_iter: usize,
) -> Result<Irls> {
    let (zw, _, working) = weighted_system(z, &eta, &mu, y, p, weights);
    let chol = Cholesky::new(zw.tr_mul(&zw))
        .ok_or_else(|| Error::domain("weighted normal equations are numerically singular"))?;
    Ok(Irls {
        gamma,
        mu,
        deviance,
        trace,
        n_iter,
        chol,
        working,
    })
}

fn leverage(z: &DMatrix<f64>, fit: &Irls) -> Vec<f64> {
    let mut zw = z.clone();
    for (i, w) in fit.working.iter().enumerate() {
        let sw = w.sqrt();
        for c in 0..z.ncols() {
            zw[(i, c)] *= sw;
        }
    }
    // h_i = || L^-1 sqrt(w_i) z_i ||^2
    let l = fit.chol.l();
    let solved = l
        .solve_lower_triangular(&zw.transpose())
        .expect("Cholesky factor is invertible");
    solved.column_iter().map(|c| c.norm_squared()).collect()
}

fn build_model(
    design: &Design,
    names: &[String],
    dropped: Vec<String>,
    fit: &Irls,
    p: f64,
    n: usize,
) -> Result<GlmModel> {
    let k = design.z.ncols();
    if n <= k {
        return Err(Error::domain(format!(
            "{n} observations cannot identify {k} coefficients and a dispersion"
        )));
    }
    let mut coefficients = IndexMap::new();
    let mut intercept = fit.gamma[0];
    for (c, &j) in design.kept.iter().enumerate() {
        let beta = fit.gamma[c + 1] / design.scale[c];
        intercept -= beta * design.center[c];
        coefficients.insert(names[j].clone(), beta);
    }
    coefficients.shift_insert(0, INTERCEPT.to_string(), intercept);
    Ok(GlmModel {
        coefficients,
        p,
        phi: fit.deviance / (n - k) as f64,
        deviance: fit.deviance,
        n_iter: fit.n_iter,
        dropped,
    })
}

/// IRLS fit returning the per-observation diagnostics as well.
pub fn fit_glm_full(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    p: f64,
    weights: Option<&[f64]>,
) -> Result<GlmFit> {
    check_inputs(x, names, y, p, weights)?;
    let (design, dropped) = standardize(x, names)?;
    let fit = irls(&design.z, y, p, weights)?;
    let model = build_model(&design, names, dropped, &fit, p, y.len())?;
    Ok(GlmFit {
        leverage: leverage(&design.z, &fit),
        fitted: fit.mu.clone(),
        deviance_trace: fit.trace.clone(),
        model,
    })
}

/// Log-link Tweedie GLM by iteratively reweighted least squares. An
/// intercept is always added; constant feature columns are dropped.
pub fn fit_glm(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    p: f64,
    weights: Option<&[f64]>,
) -> Result<GlmModel> {
    check_inputs(x, names, y, p, weights)?;
    let (design, dropped) = standardize(x, names)?;
    let fit = irls(&design.z, y, p, weights)?;
    build_model(&design, names, dropped, &fit, p, y.len())
}

/// Fitted means only, skipping model assembly.
pub(crate) fn fitted_means(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    p: f64,
    weights: Option<&[f64]>,
) -> Result<(Vec<f64>, f64, usize)> {
    let (design, _) = standardize(x, names)?;
    let fit = irls(&design.z, y, p, weights)?;
    Ok((fit.mu, fit.deviance, design.z.ncols()))
}

#[derive(Debug, Clone)]
pub struct TwoStageFit {
    pub model: GlmModel,
    /// `true` for observations removed as influential.
    pub outlier_mask: Vec<bool>,
    pub first_stage: PowerEstimate,
    pub final_stage: PowerEstimate,
    pub cooks_distance: Vec<f64>,
}

/// Estimates the power, fits the GLM, removes influential observations
/// (never more than 5 % of them), then estimates the power again and refits
/// on the retained rows.
pub fn two_stage_fit(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    weights: Option<&[f64]>,
    grid: &[f64],
    phi_method: PhiMethod,
) -> Result<TwoStageFit> {
    let first_stage = estimate_power(x, names, y, weights, grid, phi_method)?;
    let first = fit_glm_full(x, names, y, first_stage.p, weights)?;
    let n = y.len();
    let k = first.model.coefficients.len();
    let cutoff = cook_cutoff(n, k - 1)?;
    let phi = first.model.phi;
    let p = first.model.p;
    let cooks: Vec<f64> = (0..n)
        .map(|i| {
            let mu = first.fitted[i];
            let w = weights.map_or(1.0, |w| w[i]);
            let pearson2 = w * (y[i] - mu).powi(2) / (phi * variance_function(mu, p));
            let h = first.leverage[i].min(1.0 - 1e-12);
            pearson2 * h / (k as f64 * (1.0 - h).powi(2))
        })
        .collect();

    let mut flagged: Vec<usize> = (0..n).filter(|&i| cooks[i] > cutoff).collect();
    let cap = n / 20;
    if flagged.len() > cap {
        flagged.sort_by(|&a, &b| cooks[b].total_cmp(&cooks[a]).then(a.cmp(&b)));
        flagged.truncate(cap);
    }
    let mut outlier_mask = vec![false; n];
    for &i in &flagged {
        outlier_mask[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !outlier_mask[i]).collect();
    let x_kept = x.select_rows(&keep);
    let y_kept: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let w_kept: Option<Vec<f64>> = weights.map(|w| keep.iter().map(|&i| w[i]).collect());

    let final_stage = estimate_power(&x_kept, names, &y_kept, w_kept.as_deref(), grid, phi_method)?;
    let model = fit_glm(&x_kept, names, &y_kept, final_stage.p, w_kept.as_deref())?;
    Ok(TwoStageFit {
        model,
        outlier_mask,
        first_stage,
        final_stage,
        cooks_distance: cooks,
    })
}
