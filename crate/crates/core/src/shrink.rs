//! Penalized Tweedie regression: LASSO and elastic net with a group penalty
//! so that the dummy block of a categorical variable enters or leaves the
//! model as a whole.
//!
//! The loss is `(1/W) sum_i w_i d(y_i, mu_i) / 2` with a log link (identity
//! for `p = 0`) and the penalty
//! `lambda sum_g omega_g (alpha ||b_g|| + (1 - alpha)/2 ||b_g||^2)`,
//! `omega_g = sqrt(|g|)`. Each outer step builds the IRLS quadratic
//! approximation and minimizes it by blockwise majorization descent; the
//! step is then backtracked on the exact objective.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::stratified_folds;
use crate::error::{Error, Result};
use crate::tweedie::unit_deviance;

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    z.signum() * (z.abs() - gamma).max(0.0)
}

/// Partition of feature columns into penalty groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Groups {
    pub names: Vec<String>,
    /// Group index of every feature column.
    pub of_column: Vec<usize>,
}

impl Groups {
    pub fn new(names: Vec<String>, of_column: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; names.len()];
        for &g in &of_column {
            if g >= names.len() {
                return Err(Error::Config(format!("column assigned to unknown group {g}")));
            }
            seen[g] = true;
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("group `{}` has no columns", names[g])));
        }
        Ok(Groups { names, of_column })
    }

    pub fn singletons(features: &[String]) -> Self {
        Groups {
            names: features.to_vec(),
            of_column: (0..features.len()).collect(),
        }
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.names.len()];
        for (c, &g) in self.of_column.iter().enumerate() {
            m[g].push(c);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    /// 1 is the LASSO; values in (0, 1) give the elastic net.
    pub alpha_mix: f64,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Explicit decreasing path; overrides `n_lambda` and the ratio.
    pub lambdas: Option<Vec<f64>>,
    /// Convergence threshold on standardized coefficient changes.
    pub tol: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            alpha_mix: 1.0,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            lambdas: None,
            tol: 1e-7,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_mix > 0.0 && self.alpha_mix <= 1.0) {
            return Err(Error::Config(format!("alpha_mix must lie in (0, 1], got {}", self.alpha_mix)));
        }
        if let Some(l) = &self.lambdas {
            if l.is_empty() || l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || l.windows(2).any(|w| w[0] <= w[1]) {
                return Err(Error::Config("lambda path must be non-negative and strictly decreasing".into()));
            }
        } else if self.n_lambda == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::Config("need n_lambda >= 1 and lambda_min_ratio in (0, 1)".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub intercept: f64,
    /// Original-scale coefficients aligned with the feature names.
    pub coefficients: Vec<f64>,
    pub deviance: f64,
    /// Penalized objective at the solution (standardized scale).
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkModel {
    pub features: Vec<String>,
    pub groups: Groups,
    pub p: f64,
    pub phi: f64,
    pub alpha_mix: f64,
    pub path: Vec<PathPoint>,
    /// Index of the chosen point on the path.
    pub chosen: Option<usize>,
}

impl ShrinkModel {
    fn point(&self, index: Option<usize>) -> Result<&PathPoint> {
        let i = index.or(self.chosen).unwrap_or(self.path.len() - 1);
        self.path
            .get(i)
            .ok_or_else(|| Error::domain(format!("path has no point {i}")))
    }

    pub fn linear_predictor_at(&self, index: Option<usize>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.features.len() {
            return Err(Error::Schema(format!(
                "model expects {} feature columns, got {}",
                self.features.len(),
                x.ncols()
            )));
        }
        let pt = self.point(index)?;
        let mut eta = vec![pt.intercept; x.nrows()];
        for (j, b) in pt.coefficients.iter().enumerate() {
            if *b != 0.0 {
                for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
                    *e += b * v;
                }
            }
        }
        Ok(eta)
    }

    /// Predicted means at a path point (`None` means the chosen one).
    pub fn predict_at(&self, index: Option<usize>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let eta = self.linear_predictor_at(index, x)?;
        Ok(if self.p == 0.0 { eta } else { eta.into_iter().map(f64::exp).collect() })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.predict_at(None, x)
    }

    /// Names of groups with a non-zero coefficient block.
    pub fn selected_groups(&self, index: Option<usize>) -> Result<Vec<String>> {
        let pt = self.point(index)?;
        let mut active = vec![false; self.groups.names.len()];
        for (j, b) in pt.coefficients.iter().enumerate() {
            if *b != 0.0 {
                active[self.groups.of_column[j]] = true;
            }
        }
        Ok(self
            .groups
            .names
            .iter()
            .zip(active)
            .filter(|(_, a)| *a)
            .map(|(n, _)| n.clone())
            .collect())
    }
}

/// Standardized problem on the non-constant columns.
struct Problem<'a> {
    xs: DMatrix<f64>,
    kept: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
    y: &'a [f64],
    /// Prior weights normalized to sum to one.
    w: Vec<f64>,
    p: f64,
    alpha: f64,
    /// Columns of `xs` per group (groups with no kept column are empty).
    groups: Vec<Vec<usize>>,
    omega: Vec<f64>,
    /// Loss of the intercept-only model, the scale of objective changes.
    null_loss: f64,
}

impl<'a> Problem<'a> {
    fn new(
        x: &DMatrix<f64>,
        names: &[String],
        groups: &Groups,
        y: &'a [f64],
        weights: Option<&[f64]>,
        p: f64,
        alpha: f64,
    ) -> Result<Self> {
        crate::tweedie::check_response(x, names, y, p, weights)?;
        if groups.of_column.len() != x.ncols() {
            return Err(Error::LengthMismatch(groups.of_column.len(), x.ncols()));
        }
        let n = x.nrows();
        let mut kept = Vec::new();
        let mut center = Vec::new();
        let mut scale = Vec::new();
        for j in 0..x.ncols() {
            let col = x.column(j);
            let m = col.mean();
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            if s > 0.0 && col.iter().any(|v| *v != col[0]) {
                kept.push(j);
                center.push(m);
                scale.push(s);
            } else {
                warn!("dropping constant column `{}`", names[j]);
            }
        }
        let mut xs = DMatrix::zeros(n, kept.len());
        for (c, &j) in kept.iter().enumerate() {
            for i in 0..n {
                xs[(i, c)] = (x[(i, j)] - center[c]) / scale[c];
            }
        }
        let mut members = vec![Vec::new(); groups.names.len()];
        for (c, &j) in kept.iter().enumerate() {
            members[groups.of_column[j]].push(c);
        }
        let omega = members.iter().map(|m| (m.len() as f64).sqrt()).collect();
        let wsum: f64 = (0..n).map(|i| weights.map_or(1.0, |w| w[i])).sum();
        let w = (0..n).map(|i| weights.map_or(1.0, |w| w[i]) / wsum).collect();
        let mut problem = Problem {
            xs,
            kept,
            center,
            scale,
            y,
            w,
            p,
            alpha,
            groups: members,
            omega,
            null_loss: 0.0,
        };
        if let Ok(b0) = problem.null_intercept() {
            problem.null_loss = problem.loss(&vec![b0; n]);
        }
        Ok(problem)
    }

    fn inv_link(&self, eta: f64) -> f64 {
        if self.p == 0.0 {
            eta
        } else {
            eta.clamp(-700.0, 700.0).exp()
        }
    }

    fn null_intercept(&self) -> Result<f64> {
        let ybar: f64 = self.y.iter().zip(&self.w).map(|(y, w)| y * w).sum();
        if self.p == 0.0 {
            Ok(ybar)
        } else if ybar > 0.0 {
            Ok(ybar.ln())
        } else {
            Err(Error::domain("log-link fit needs a positive weighted mean response"))
        }
    }

    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.xs.nrows()];
        for (c, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (e, v) in eta.iter_mut().zip(self.xs.column(c).iter()) {
                    *e += b * v;
                }
            }
        }
        eta
    }

    fn loss(&self, eta: &[f64]) -> f64 {
        eta.iter()
            .enumerate()
            .map(|(i, e)| self.w[i] * unit_deviance(self.y[i], self.inv_link(*e), self.p))
            .sum::<f64>()
            / 2.0
    }

    fn penalty(&self, lambda: f64, beta: &[f64]) -> f64 {
        self.groups
            .iter()
            .zip(&self.omega)
            .map(|(g, om)| {
                let sq: f64 = g.iter().map(|&c| beta[c] * beta[c]).sum();
                om * (self.alpha * sq.sqrt() + (1.0 - self.alpha) / 2.0 * sq)
            })
            .sum::<f64>()
            * lambda
    }

    /// Negative loss gradient factor `w_i (y_i - mu_i) mu_i^(1-p)` per row.
    fn score_rows(&self, eta: &[f64]) -> Vec<f64> {
        eta.iter()
            .enumerate()
            .map(|(i, e)| {
                let mu = self.inv_link(*e);
                let f = if self.p == 0.0 { 1.0 } else { mu.powf(1.0 - self.p) };
                self.w[i] * (self.y[i] - mu) * f
            })
            .collect()
    }

    fn group_grad_norm(&self, g: usize, score: &[f64]) -> f64 {
        self.groups[g]
            .iter()
            .map(|&c| {
                let s: f64 = self.xs.column(c).iter().zip(score).map(|(x, s)| x * s).sum();
                s * s
            })
            .sum::<f64>()
            .sqrt()
    }

    fn lambda_max(&self) -> Result<f64> {
        let b0 = self.null_intercept()?;
        let score = self.score_rows(&vec![b0; self.xs.nrows()]);
        let mut best: f64 = 0.0;
        for g in 0..self.groups.len() {
            if !self.groups[g].is_empty() {
                best = best.max(self.group_grad_norm(g, &score) / (self.omega[g] * self.alpha));
            }
        }
        Ok(best)
    }

    /// Solves one lambda starting from (`b0`, `beta`). `working` marks the
    /// groups iterated over; it grows when the optimality check finds a
    /// violating group outside it. Returns the objective trace.
    fn solve(
        &self,
        lambda: f64,
        b0: &mut f64,
        beta: &mut [f64],
        working: &mut [bool],
        tol: f64,
        lambda_index: usize,
    ) -> Result<Vec<f64>> {
        let n = self.xs.nrows();
        let mut eta = self.eta(*b0, beta);
        let mut obj = self.loss(&eta) + self.penalty(lambda, beta);
        let mut trace = vec![obj];
        // Coordinate sweeps left for this lambda, shared by all outer steps.
        let mut budget = 50_000usize;
        for _ in 0..200 {
            // Quadratic approximation around eta.
            let mut v = vec![0.0; n];
            let mut r = vec![0.0; n];
            for i in 0..n {
                let mu = self.inv_link(eta[i]);
                if self.p == 0.0 {
                    v[i] = self.w[i];
                    r[i] = self.y[i] - mu;
                } else {
                    v[i] = self.w[i] * mu.powf(2.0 - self.p);
                    r[i] = (self.y[i] - mu) / mu;
                }
            }
            // Weighted Gram of the intercept and the working columns; inner
            // coordinate updates then cost O(columns) instead of O(rows).
            let mut slot = vec![usize::MAX; self.xs.ncols()];
            let mut cols_in = Vec::new();
            for g in 0..self.groups.len() {
                if working[g] {
                    for &c in &self.groups[g] {
                        slot[c] = cols_in.len() + 1;
                        cols_in.push(c);
                    }
                }
            }
            let k = cols_in.len() + 1;
            let mut a = DMatrix::zeros(n, k);
            let mut ar = DVector::zeros(n);
            for i in 0..n {
                let sv = v[i].sqrt();
                a[(i, 0)] = sv;
                ar[i] = sv * r[i];
            }
            for (j, &c) in cols_in.iter().enumerate() {
                for i in 0..n {
                    a[(i, j + 1)] = a[(i, 0)] * self.xs[(i, c)];
                }
            }
            // Gram columns are built lazily: only coordinates that move
            // need theirs.
            let mut gram: Vec<Option<DVector<f64>>> = vec![None; k];
            let mut q = a.tr_mul(&ar);
            let gammas: Vec<f64> = (0..self.groups.len())
                .map(|g| {
                    let cols = &self.groups[g];
                    if !working[g] || cols.is_empty() {
                        return 0.0;
                    }
                    let block = DMatrix::from_fn(cols.len(), cols.len(), |i, j| {
                        a.column(slot[cols[i]]).dot(&a.column(slot[cols[j]]))
                    });
                    if cols.len() == 1 {
                        block[(0, 0)]
                    } else {
                        SymmetricEigen::new(block).eigenvalues.max()
                    }
                })
                .collect();
            let mut column = |j: usize| -> DVector<f64> {
                gram[j].get_or_insert_with(|| a.tr_mul(&a.column(j))).clone()
            };
            let g0 = column(0);
            let vsum = g0[0];
            let mut new_b0 = *b0;
            let mut new_beta = beta.to_vec();
            // Coordinates stop when either every change is below `tol / 10`
            // or no update moves the quadratic model by more than a tiny
            // fraction of the null loss (slow zig-zag on collinear columns).
            let obj_tol = tol * 1e-3 * self.null_loss;
            while budget > 0 {
                budget -= 1;
                let mut max_change: f64 = 0.0;
                let shift = q[0] / vsum;
                new_b0 += shift;
                q.axpy(-shift, &g0, 1.0);
                max_change = max_change.max(shift.abs());
                let mut max_gain = vsum * shift * shift;
                for g in 0..self.groups.len() {
                    let cols = &self.groups[g];
                    if !working[g] || cols.is_empty() || gammas[g] <= 0.0 {
                        continue;
                    }
                    let gamma = gammas[g];
                    let u: Vec<f64> = cols.iter().map(|&c| gamma * new_beta[c] + q[slot[c]]).collect();
                    let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let om = self.omega[g];
                    let threshold = lambda * self.alpha * om;
                    // Borderline groups stay at zero so that lambda_max yields
                    // the exact null model despite rounding.
                    let shrink = if norm > threshold * (1.0 + 1e-12) { 1.0 - threshold / norm } else { 0.0 };
                    let denom = gamma + lambda * (1.0 - self.alpha) * om;
                    let mut moved = 0.0;
                    for (j, &c) in cols.iter().enumerate() {
                        let nb = u[j] * shrink / denom;
                        let delta = nb - new_beta[c];
                        if delta != 0.0 {
                            q.axpy(-delta, &column(slot[c]), 1.0);
                            new_beta[c] = nb;
                            max_change = max_change.max(delta.abs());
                            moved += delta * delta;
                        }
                    }
                    max_gain = max_gain.max(gamma * moved);
                }
                if max_change < tol * 0.1 || max_gain < obj_tol {
                    break;
                }
            }
            // An unfinished inner solve still gives a descent direction for
            // the line search below.

            // Backtrack on the exact objective.
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let cand_b0 = *b0 + t * (new_b0 - *b0);
                let cand: Vec<f64> = beta.iter().zip(&new_beta).map(|(a, b)| a + t * (b - a)).collect();
                let cand_eta = self.eta(cand_b0, &cand);
                let cand_obj = self.loss(&cand_eta) + self.penalty(lambda, &cand);
                if cand_obj <= obj + 1e-14 * obj.abs().max(1e-300) {
                    accepted = Some((cand_b0, cand, cand_eta, cand_obj));
                    break;
                }
                t *= 0.5;
            }
            let prev_obj = obj;
            let step = match accepted {
                Some((cb0, cb, ce, co)) => {
                    let step = beta.iter().zip(&cb).map(|(a, b)| (a - b).abs()).fold((cb0 - *b0).abs(), f64::max);
                    *b0 = cb0;
                    beta.copy_from_slice(&cb);
                    eta = ce;
                    obj = co;
                    trace.push(co);
                    step
                }
                None => 0.0,
            };
            // Standardized effects this large mean the fit is separating
            // zeros from positives and the solution does not exist.
            if beta.iter().any(|b| b.abs() > 30.0) || budget == 0 {
                return Err(Error::PathNonConvergence { lambda_index });
            }
            if step < tol || prev_obj - obj < tol * 0.1 * self.null_loss {
                // Optimality check for groups left out of the working set.
                let score = self.score_rows(&eta);
                let mut added = false;
                for g in 0..self.groups.len() {
                    if working[g] || self.groups[g].is_empty() {
                        continue;
                    }
                    if self.group_grad_norm(g, &score) > lambda * self.alpha * self.omega[g] * (1.0 + 1e-9) {
                        working[g] = true;
                        added = true;
                    }
                }
                if !added {
                    return Ok(trace);
                }
            }
        }
        Err(Error::PathNonConvergence { lambda_index })
    }

    fn to_original(&self, b0: f64, beta: &[f64], n_features: usize) -> (f64, Vec<f64>) {
        let mut coef = vec![0.0; n_features];
        let mut intercept = b0;
        for (c, &j) in self.kept.iter().enumerate() {
            let b = beta[c] / self.scale[c];
            coef[j] = b;
            intercept -= b * self.center[c];
        }
        (intercept, coef)
    }
}

/// Smallest penalty at which the intercept-only model is optimal.
pub fn lambda_max(
    x: &DMatrix<f64>,
    names: &[String],
    groups: &Groups,
    y: &[f64],
    weights: Option<&[f64]>,
    alpha_mix: f64,
    p: f64,
) -> Result<f64> {
    if !(alpha_mix > 0.0) {
        return Err(Error::domain("lambda_max is infinite for alpha_mix = 0"));
    }
    Problem::new(x, names, groups, y, weights, p, alpha_mix)?.lambda_max()
}

/// Smallest gain in explained deviance that keeps a generated path going.
const PATH_MIN_GAIN: f64 = 1e-5;

fn build_path(problem: &Problem, config: &PenaltyConfig) -> Result<Vec<f64>> {
    if let Some(l) = &config.lambdas {
        return Ok(l.clone());
    }
    let max = problem.lambda_max()?;
    let k = config.n_lambda;
    if k == 1 {
        return Ok(vec![max]);
    }
    Ok((0..k)
        .map(|i| max * config.lambda_min_ratio.powf(i as f64 / (k - 1) as f64))
        .collect())
}

/// Warm-started solution path. The objective trace of every lambda is
/// returned alongside the model.
pub fn fit_path_traced(
    x: &DMatrix<f64>,
    names: &[String],
    groups: &Groups,
    y: &[f64],
    weights: Option<&[f64]>,
    config: &PenaltyConfig,
    p: f64,
    phi: f64,
) -> Result<(ShrinkModel, Vec<Vec<f64>>)> {
    config.validate()?;
    let problem = Problem::new(x, names, groups, y, weights, p, config.alpha_mix)?;
    let lambdas = build_path(&problem, config)?;
    let m = problem.xs.ncols();
    let mut b0 = problem.null_intercept()?;
    let mut beta = vec![0.0; m];
    let mut working = vec![false; problem.groups.len()];
    let mut prev_lambda = lambdas[0];
    let mut path = Vec::with_capacity(lambdas.len());
    let mut traces = Vec::with_capacity(lambdas.len());
    for (k, &lambda) in lambdas.iter().enumerate() {
        // Sequential strong rule: screen groups whose gradient is far from
        // the threshold; the optimality check inside `solve` corrects any
        // wrongly screened group.
        let eta = problem.eta(b0, &beta);
        let score = problem.score_rows(&eta);
        for g in 0..problem.groups.len() {
            if problem.groups[g].is_empty() {
                continue;
            }
            let nonzero = problem.groups[g].iter().any(|&c| beta[c] != 0.0);
            let strong = problem.group_grad_norm(g, &score)
                >= problem.alpha * problem.omega[g] * (2.0 * lambda - prev_lambda);
            working[g] = nonzero || strong;
        }
        // A lambda that cannot be solved (typically quasi-separation at small
        // penalties) ends the path; the solved prefix is kept.
        let trace = match problem.solve(lambda, &mut b0, &mut beta, &mut working, config.tol, k) {
            Ok(t) => t,
            Err(e @ Error::PathNonConvergence { .. }) if k > 0 => {
                warn!("{e}; path truncated to {k} lambda values");
                break;
            }
            Err(e) => return Err(e),
        };
        let eta = problem.eta(b0, &beta);
        let (intercept, coefficients) = problem.to_original(b0, &beta, x.ncols());
        path.push(PathPoint {
            lambda,
            intercept,
            coefficients,
            deviance: problem.loss(&eta) * 2.0,
            objective: *trace.last().expect("trace starts with the initial objective"),
        });
        traces.push(trace);
        prev_lambda = lambda;
        // Generated paths stop once the explained deviance saturates.
        if config.lambdas.is_none() && problem.null_loss > 0.0 && k > 0 {
            let n = path.len();
            let gain = (path[n - 2].deviance - path[n - 1].deviance) / (2.0 * problem.null_loss);
            if gain < PATH_MIN_GAIN || path[n - 1].deviance < 1e-3 * 2.0 * problem.null_loss {
                break;
            }
        }
    }
    Ok((
        ShrinkModel {
            features: names.to_vec(),
            groups: groups.clone(),
            p,
            phi,
            alpha_mix: config.alpha_mix,
            path,
            chosen: None,
        },
        traces,
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn fit_path(
    x: &DMatrix<f64>,
    names: &[String],
    groups: &Groups,
    y: &[f64],
    weights: Option<&[f64]>,
    config: &PenaltyConfig,
    p: f64,
    phi: f64,
) -> Result<ShrinkModel> {
    Ok(fit_path_traced(x, names, groups, y, weights, config, p, phi)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub alpha_mix: f64,
    pub lambda_index: usize,
    pub lambda: f64,
    pub rmse: f64,
    pub mean_deviance: f64,
    pub folds_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    pub lambda_index: usize,
    pub alpha_mix: f64,
    pub table: Vec<CvRow>,
}

fn rmse(y: &[f64], mu: &[f64]) -> f64 {
    (y.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

/// Mean out-of-fold RMSE over a joint (alpha, lambda) grid. Fold paths reuse
/// the lambda values computed on the full data for each alpha. Only lambda
/// values solved on the full data and on every used fold compete. Ties go to
/// the larger lambda, then the larger alpha.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    x: &DMatrix<f64>,
    names: &[String],
    groups: &Groups,
    y: &[f64],
    weights: Option<&[f64]>,
    alpha_grid: &[f64],
    config: &PenaltyConfig,
    p: f64,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    Ok(cv_with_models(x, names, groups, y, weights, alpha_grid, config, p, 1.0, folds, seed)?.0)
}

type FoldCurves = Option<(Vec<f64>, Vec<f64>)>;

#[allow(clippy::too_many_arguments)]
fn cv_with_models(
    x: &DMatrix<f64>,
    names: &[String],
    groups: &Groups,
    y: &[f64],
    weights: Option<&[f64]>,
    alpha_grid: &[f64],
    config: &PenaltyConfig,
    p: f64,
    phi: f64,
    folds: usize,
    seed: u64,
) -> Result<(CvResult, Vec<ShrinkModel>)> {
    if alpha_grid.is_empty() {
        return Err(Error::Config("empty alpha grid".into()));
    }
    let assignment = stratified_folds(y, folds, seed)?;
    let mut paths = Vec::new();
    for &alpha in alpha_grid {
        let cfg = PenaltyConfig { alpha_mix: alpha, ..config.clone() };
        cfg.validate()?;
        let problem = Problem::new(x, names, groups, y, weights, p, alpha)?;
        paths.push(build_path(&problem, &cfg)?);
    }
    let full: Vec<ShrinkModel> = (0..alpha_grid.len())
        .into_par_iter()
        .map(|a| {
            let cfg = PenaltyConfig { alpha_mix: alpha_grid[a], ..config.clone() };
            fit_path(x, names, groups, y, weights, &cfg, p, phi)
        })
        .collect::<Result<_>>()?;
    for (path, model) in paths.iter_mut().zip(&full) {
        path.truncate(model.path.len());
    }
    let cfg_for = |a: usize| PenaltyConfig {
        alpha_mix: alpha_grid[a],
        lambdas: Some(paths[a].clone()),
        ..config.clone()
    };

    let cells: Vec<(usize, usize)> = (0..alpha_grid.len()).flat_map(|a| (0..folds).map(move |f| (a, f))).collect();
    let results: Vec<FoldCurves> = cells
        .par_iter()
        .map(|&(a, f)| -> Result<FoldCurves> {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == f).collect();
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            if p > 0.0 && y_train.iter().all(|v| *v == 0.0) {
                warn!("skipping fold {f}: training response is all zero");
                return Ok(None);
            }
            let w_train: Option<Vec<f64>> = weights.map(|w| train.iter().map(|&i| w[i]).collect());
            let model = fit_path(&x.select_rows(&train), names, groups, &y_train, w_train.as_deref(), &cfg_for(a), p, 1.0)?;
            let x_test = x.select_rows(&test);
            let y_test: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let mut rmses = Vec::with_capacity(model.path.len());
            let mut devs = Vec::with_capacity(model.path.len());
            for k in 0..model.path.len() {
                let mu = model.predict_at(Some(k), &x_test)?;
                rmses.push(rmse(&y_test, &mu));
                devs.push(
                    y_test.iter().zip(&mu).map(|(a, b)| unit_deviance(*a, *b, p)).sum::<f64>() / y_test.len() as f64,
                );
            }
            Ok(Some((rmses, devs)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = Vec::new();
    for (a, &alpha) in alpha_grid.iter().enumerate() {
        let used: Vec<&(Vec<f64>, Vec<f64>)> = (0..folds).filter_map(|f| results[a * folds + f].as_ref()).collect();
        if used.is_empty() {
            return Err(Error::domain("every cross-validation fold was skipped"));
        }
        let solved = used.iter().map(|r| r.0.len()).fold(full[a].path.len(), usize::min);
        for (k, &lambda) in paths[a].iter().enumerate().take(solved) {
            let m = used.len() as f64;
            table.push(CvRow {
                alpha_mix: alpha,
                lambda_index: k,
                lambda,
                rmse: used.iter().map(|r| r.0[k]).sum::<f64>() / m,
                mean_deviance: used.iter().map(|r| r.1[k]).sum::<f64>() / m,
                folds_used: used.len(),
            });
        }
    }
    let mut best: Option<&CvRow> = None;
    for row in &table {
        best = match best {
            None => Some(row),
            Some(b) => {
                let better = row.rmse < b.rmse
                    || (row.rmse == b.rmse && (row.lambda > b.lambda || (row.lambda == b.lambda && row.alpha_mix > b.alpha_mix)));
                Some(if better { row } else { b })
            }
        };
    }
    let best = best.expect("every path keeps its first lambda");
    let cv = CvResult {
        lambda: best.lambda,
        lambda_index: best.lambda_index,
        alpha_mix: best.alpha_mix,
        table,
    };
    Ok((cv, full))
}

/// Cross-validates, then returns the full-data path at the chosen alpha with
/// the chosen lambda marked.
#[allow(clippy::too_many_arguments)]
pub fn fit_cv(
    x: &DMatrix<f64>,
    names: &[String],
    groups: &Groups,
    y: &[f64],
    weights: Option<&[f64]>,
    alpha_grid: &[f64],
    config: &PenaltyConfig,
    p: f64,
    phi: f64,
    folds: usize,
    seed: u64,
) -> Result<(ShrinkModel, CvResult)> {
    let (cv, full) = cv_with_models(x, names, groups, y, weights, alpha_grid, config, p, phi, folds, seed)?;
    let a = alpha_grid.iter().position(|v| *v == cv.alpha_mix).expect("chosen alpha is on the grid");
    let mut model = full.into_iter().nth(a).expect("one model per alpha");
    model.chosen = Some(cv.lambda_index);
    Ok((model, cv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::tweedie::{fit_glm, sample, TweedieParams};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    fn gaussian_design(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 3);
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    fn tweedie_response(x: &DMatrix<f64>, beta: &[f64], b0: f64, seed: u64) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let eta: f64 = b0 + (0..beta.len()).map(|j| beta[j] * x[(i, j)]).sum::<f64>();
                let params = TweedieParams::new(eta.exp(), 1.0, 1.5).unwrap();
                sample(&params, 1, seed * 100_000 + i as u64).unwrap()[0]
            })
            .collect()
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 0.0), -2.5);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
    }

    #[test]
    fn null_model_at_lambda_max() {
        let x = gaussian_design(300, 6, 1);
        let y = tweedie_response(&x, &[0.5, 0.0, -0.3, 0.0, 0.0, 0.2], 0.3, 1);
        let g = Groups::singletons(&names(6));
        let lmax = lambda_max(&x, &names(6), &g, &y, None, 1.0, 1.5).unwrap();
        let cfg = PenaltyConfig { lambdas: Some(vec![lmax * 1.5, lmax, 0.99 * lmax]), ..Default::default() };
        let m = fit_path(&x, &names(6), &g, &y, None, &cfg, 1.5, 1.0).unwrap();
        for k in 0..2 {
            assert!(m.path[k].coefficients.iter().all(|b| *b == 0.0));
            let ybar = y.iter().sum::<f64>() / y.len() as f64;
            assert!((m.path[k].intercept - ybar.ln()).abs() < 1e-9);
        }
        assert!(m.path[2].coefficients.iter().any(|b| *b != 0.0));
        assert!(lambda_max(&x, &names(6), &g, &y, None, 0.0, 1.5).is_err());
    }

    #[test]
    fn noise_has_smaller_lambda_max_than_signal() {
        let x = gaussian_design(400, 5, 2);
        let signal = tweedie_response(&x, &[0.8, 0.0, 0.0, 0.0, 0.0], 0.0, 2);
        let noise = tweedie_response(&x, &[0.0; 5], 0.0, 3);
        let g = Groups::singletons(&names(5));
        let a = lambda_max(&x, &names(5), &g, &signal, None, 1.0, 1.5).unwrap();
        let b = lambda_max(&x, &names(5), &g, &noise, None, 1.0, 1.5).unwrap();
        assert!(b < a / 3.0);
    }

    #[test]
    fn orthonormal_gaussian_lasso_is_soft_threshold() {
        // Centered orthogonal columns with x'x = n: Walsh patterns.
        let n = 64;
        let m = 4;
        let x = DMatrix::from_fn(n, m, |i, j| if (i >> j) & 1 == 0 { 1.0 } else { -1.0 });
        let mut rng = stream_rng(9, 0);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.0 + 2.0 * x[(i, 0)] - 0.7 * x[(i, 1)] + 0.1 * x[(i, 3)] + e
            })
            .collect();
        let ols: Vec<f64> = (0..m).map(|j| (0..n).map(|i| x[(i, j)] * y[i]).sum::<f64>() / n as f64).collect();
        let lambdas = vec![1.0, 0.5, 0.2, 0.05];
        let cfg = PenaltyConfig { lambdas: Some(lambdas.clone()), tol: 1e-10, ..Default::default() };
        let model = fit_path(&x, &names(m), &Groups::singletons(&names(m)), &y, None, &cfg, 0.0, 1.0).unwrap();
        for (pt, lam) in model.path.iter().zip(&lambdas) {
            for j in 0..m {
                assert!((pt.coefficients[j] - soft_threshold(ols[j], *lam)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_lambda_matches_glm() {
        let x = gaussian_design(500, 3, 4);
        let y = tweedie_response(&x, &[0.4, -0.2, 0.1], 0.5, 4);
        let cfg = PenaltyConfig {
            lambdas: Some(vec![0.1, 0.01, 0.0]),
            tol: 1e-9,
            ..Default::default()
        };
        let m = fit_path(&x, &names(3), &Groups::singletons(&names(3)), &y, None, &cfg, 1.5, 1.0).unwrap();
        let glm = fit_glm(&x, &names(3), &y, 1.5, None).unwrap();
        let last = m.path.last().unwrap();
        assert!((last.intercept - glm.intercept()).abs() < 1e-5);
        for j in 0..3 {
            assert!((last.coefficients[j] - glm.coefficients[&format!("x{j}")]).abs() < 1e-5);
        }
    }

    fn grouped_fixture(seed: u64) -> (DMatrix<f64>, Vec<String>, Groups, Vec<f64>) {
        let n = 400;
        let base = gaussian_design(n, 3, seed);
        // Columns 3..6: dummies of a 4-level factor with the first level dropped.
        let x = DMatrix::from_fn(n, 6, |i, j| if j < 3 { base[(i, j)] } else if i % 4 == j - 2 { 1.0 } else { 0.0 });
        let y = tweedie_response(&x, &[0.5, 0.0, 0.2, 0.3, -0.2, 0.1], 0.0, seed);
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into(), "F.2".into(), "F.3".into(), "F.4".into()];
        let groups = Groups::new(vec!["a".into(), "b".into(), "c".into(), "F".into()], vec![0, 1, 2, 3, 3, 3]).unwrap();
        (x, names, groups, y)
    }

    #[test]
    fn categorical_block_enters_together() {
        let (x, names, groups, y) = grouped_fixture(5);
        let cfg = PenaltyConfig { n_lambda: 40, ..Default::default() };
        let (m, traces) = fit_path_traced(&x, &names, &groups, &y, None, &cfg, 1.5, 1.0).unwrap();
        let mut entered = false;
        for pt in &m.path {
            let nz: Vec<bool> = pt.coefficients[3..].iter().map(|b| *b != 0.0).collect();
            assert!(nz.iter().all(|v| *v) || nz.iter().all(|v| !*v));
            entered |= nz[0];
        }
        assert!(entered);
        for t in traces {
            for w in t.windows(2) {
                assert!(w[1] <= w[0] + 1e-14 * w[0].abs());
            }
        }
    }

    #[test]
    fn cv_with_single_alpha_and_determinism() {
        let (x, names, groups, y) = grouped_fixture(6);
        let cfg = PenaltyConfig { n_lambda: 20, ..Default::default() };
        let a = cross_validate(&x, &names, &groups, &y, None, &[0.5], &cfg, 1.5, 3, 8).unwrap();
        assert_eq!(a.alpha_mix, 0.5);
        let b = cross_validate(&x, &names, &groups, &y, None, &[0.5], &cfg, 1.5, 3, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn destandardized_predictions_match() {
        let (x, names, groups, y) = grouped_fixture(7);
        let cfg = PenaltyConfig { n_lambda: 10, ..Default::default() };
        let problem = Problem::new(&x, &names, &groups, &y, None, 1.5, 1.0).unwrap();
        let m = fit_path(&x, &names, &groups, &y, None, &cfg, 1.5, 1.0).unwrap();
        for (k, pt) in m.path.iter().enumerate() {
            // Map back to the standardized scale and compare linear predictors.
            let mut beta = vec![0.0; problem.xs.ncols()];
            let mut b0 = pt.intercept;
            for (c, &j) in problem.kept.iter().enumerate() {
                beta[c] = pt.coefficients[j] * problem.scale[c];
                b0 += pt.coefficients[j] * problem.center[c];
            }
            let std_eta = problem.eta(b0, &beta);
            let orig_eta = m.linear_predictor_at(Some(k), &x).unwrap();
            for (a, b) in std_eta.iter().zip(&orig_eta) {
                assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn above_lambda_max_is_null(seed in 0u64..1000, factor in 1.0..5.0f64) {
            let x = gaussian_design(120, 4, seed);
            let y = tweedie_response(&x, &[0.3, -0.3, 0.0, 0.1], 0.2, seed);
            if y.iter().all(|v| *v == 0.0) {
                return Ok(());
            }
            let g = Groups::new(vec!["a".into(), "b".into()], vec![0, 0, 1, 1]).unwrap();
            let lmax = lambda_max(&x, &names(4), &g, &y, None, 0.7, 1.5).unwrap();
            let cfg = PenaltyConfig { alpha_mix: 0.7, lambdas: Some(vec![lmax * factor]), ..Default::default() };
            let m = fit_path(&x, &names(4), &g, &y, None, &cfg, 1.5, 1.0).unwrap();
            prop_assert!(m.path[0].coefficients.iter().all(|b| *b == 0.0));
        }
    }
}
