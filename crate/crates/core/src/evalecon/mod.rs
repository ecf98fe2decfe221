//! Goodness-of-fit metrics for ratemaking models and the economic
//! evaluation of the premiums they imply.

mod rating;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tweedie::total_deviance;

pub use rating::{
    build_rating_data, economic_evaluation, fit_family, run_out_of_sample, summarize_cells, FamilySettings,
    ModelFamily, OosCell, OosResult, OosSummaryRow, RateModel, RatingData, RatingRow,
    DERIVED_FEATURES,
};

/// Compatibility levels of the economic evaluation, as fractions of the
/// previous year's value added.
pub const COMPATIBILITY_LEVELS: [f64; 4] = [1.0, 0.5, 0.25, 0.1];

/// Magnitude boundaries of the net-premium classes.
pub const CLASS_BOUNDARIES: [f64; 5] = [100_000.0, 250_000.0, 500_000.0, 750_000.0, 1_000_000.0];

/// Deviance-based pseudo R²: one minus the model deviance over the deviance
/// of the constant mean model.
pub fn r2_cw(y: &[f64], mu_hat: &[f64], p: f64) -> Result<f64> {
    if y.len() != mu_hat.len() {
        return Err(Error::LengthMismatch(y.len(), mu_hat.len()));
    }
    if y.is_empty() {
        return Err(Error::domain("r2 of an empty sample"));
    }
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let null = total_deviance(y, &vec![ybar; y.len()], p, None);
    if !(null > 0.0) {
        return Err(Error::domain("null deviance is zero, r2 is undefined"));
    }
    let model = total_deviance(y, mu_hat, p, None);
    if model.is_nan() {
        return Err(Error::domain("predictions outside the support of the power"));
    }
    Ok(1.0 - model / null)
}

pub fn rmse(y: &[f64], mu_hat: &[f64]) -> Result<f64> {
    if y.len() != mu_hat.len() {
        return Err(Error::LengthMismatch(y.len(), mu_hat.len()));
    }
    if y.is_empty() {
        return Err(Error::domain("rmse of an empty sample"));
    }
    let sse: f64 = y.iter().zip(mu_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub feature: String,
    pub count: usize,
    /// Share of models selecting the feature, rounded to an integer percent.
    pub percent: u32,
}

/// How often each feature of `universe` appears in the selected sets.
/// Features outside `universe` are appended in order of appearance. Rows are
/// sorted by descending count, ties kept in universe order.
pub fn selection_frequency(selected: &[Vec<String>], universe: &[String]) -> Vec<SelectionRow> {
    let mut names: Vec<String> = universe.to_vec();
    for set in selected {
        for f in set {
            if !names.contains(f) {
                names.push(f.clone());
            }
        }
    }
    let total = selected.len();
    let mut rows: Vec<SelectionRow> = names
        .into_iter()
        .map(|feature| {
            let count = selected.iter().filter(|s| s.contains(&feature)).count();
            let percent = if total == 0 { 0 } else { (100.0 * count as f64 / total as f64).round() as u32 };
            SelectionRow { feature, count, percent }
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumQuote {
    pub farm_id: String,
    pub year: i32,
    pub expected_indemnity: f64,
    pub delta: f64,
    pub premium: f64,
}

/// Loaded premiums `mu * (1 + delta)`, clipped at zero.
pub fn quote_premiums(
    farm_ids: &[String],
    years: &[i32],
    predictions: &[f64],
    delta: f64,
) -> Result<Vec<PremiumQuote>> {
    if farm_ids.len() != predictions.len() {
        return Err(Error::LengthMismatch(farm_ids.len(), predictions.len()));
    }
    if years.len() != predictions.len() {
        return Err(Error::LengthMismatch(years.len(), predictions.len()));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("loading must be finite and non-negative, got {delta}")));
    }
    let mut clipped = 0;
    let quotes = farm_ids
        .iter()
        .zip(years)
        .zip(predictions)
        .map(|((id, &year), &mu)| {
            let mut premium = mu * (1.0 + delta);
            if premium < 0.0 {
                clipped += 1;
                premium = 0.0;
            }
            PremiumQuote {
                farm_id: id.clone(),
                year,
                expected_indemnity: mu,
                delta,
                premium,
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} negative premiums clipped to zero");
    }
    Ok(quotes)
}

/// A farm takes part iff its premium is at most `threshold` times last
/// year's value added, and that value added is positive.
pub fn compatibility_filter(quotes: &[PremiumQuote], va_prev: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if quotes.len() != va_prev.len() {
        return Err(Error::LengthMismatch(quotes.len(), va_prev.len()));
    }
    if !(threshold > 0.0) {
        return Err(Error::domain(format!("threshold must be positive, got {threshold}")));
    }
    Ok(quotes
        .iter()
        .zip(va_prev)
        .map(|(q, &va)| va > 0.0 && q.premium <= threshold * va)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceEntry {
    pub year: i32,
    pub premium: f64,
    pub indemnity: f64,
}

/// Annual `sum(premium - indemnity)` for each year in `span` and their
/// total. Entries outside `span` are ignored.
pub fn balance(entries: &[BalanceEntry], span: &[i32]) -> (Vec<f64>, f64) {
    let mut annual = vec![0.0; span.len()];
    for e in entries {
        if let Some(i) = span.iter().position(|y| *y == e.year) {
            annual[i] += e.premium - e.indemnity;
        }
    }
    let total = annual.iter().sum();
    (annual, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTally {
    /// `">=0"`, `">=100000"`, ..., `"<0"`, `"<=-100000"`, ...
    pub label: String,
    pub farms: usize,
    pub total: f64,
}

/// Tallies per-farm net premiums into the two sign classes and the
/// inclusive magnitude classes on each side.
pub fn net_premium_classes(values: &[f64]) -> Vec<ClassTally> {
    let mut classes = Vec::with_capacity(2 * (CLASS_BOUNDARIES.len() + 1));
    let mut tally = |label: String, keep: &dyn Fn(f64) -> bool| {
        let picked: Vec<f64> = values.iter().copied().filter(|v| keep(*v)).collect();
        classes.push(ClassTally {
            label,
            farms: picked.len(),
            total: picked.iter().sum(),
        });
    };
    tally(">=0".into(), &|v| v >= 0.0);
    for b in CLASS_BOUNDARIES {
        tally(format!(">={b}"), &|v| v >= b);
    }
    tally("<0".into(), &|v| v < 0.0);
    for b in CLASS_BOUNDARIES {
        tally(format!("<=-{b}"), &|v| v <= -b);
    }
    classes
}

/// Economic results of one model family at one compatibility level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconReport {
    pub family: String,
    pub threshold: f64,
    pub delta: f64,
    pub years: Vec<i32>,
    /// Participating farms per year.
    pub participants: Vec<usize>,
    pub annual_balance: Vec<f64>,
    pub balance: f64,
    pub annual_balance_weighted: Vec<f64>,
    pub balance_weighted: f64,
    /// Distinct farms participating in at least one year.
    pub farms: usize,
    pub classes: Vec<ClassTally>,
}

impl EconReport {
    /// Years in which premiums covered indemnities.
    pub fn solvent_years(&self) -> usize {
        self.annual_balance.iter().filter(|b| **b >= 0.0).count()
    }
}
