use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{balance, compatibility_filter, net_premium_classes, quote_premiums, r2_cw, rmse, BalanceEntry, EconReport};
use crate::boost::{self, BoostConfig, BoostModel};
use crate::data::{reference_income, stratified_split, FarmPanel};
use crate::error::{Error, Result};
use crate::ist::{indemnity, IstParams};
use crate::rng::derive_seed;
use crate::shrink::{fit_cv, Groups, PenaltyConfig, ShrinkModel};
use crate::stats;
use crate::tweedie::{fit_glm, GlmModel, INTERCEPT};

/// Regressors built from the income history rather than read from the
/// panel: the reference income, the sd of the window incomes and last
/// year's income.
pub const DERIVED_FEATURES: [&str; 3] = ["AVG_VA", "sd_VA", "VA_L1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRow {
    pub farm_id: String,
    /// Year of the indemnity; the regressors describe the year before.
    pub year: i32,
    pub weight: f64,
    pub indemnity: f64,
    /// Value added of the year before.
    pub va_prev: f64,
}

/// Labeled ratemaking data: one row per farm-year with a defined positive
/// reference income, regressors lagged by one year.
#[derive(Debug, Clone)]
pub struct RatingData {
    pub features: Vec<String>,
    pub groups: Groups,
    pub rows: Vec<RatingRow>,
    pub x: DMatrix<f64>,
}

impl RatingData {
    pub fn years(&self) -> Vec<i32> {
        let mut years: Vec<i32> = self.rows.iter().map(|r| r.year).collect();
        years.sort_unstable();
        years.dedup();
        years
    }

    pub fn year_rows(&self, year: i32) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].year == year).collect()
    }

    pub fn design(&self, rows: &[usize]) -> DMatrix<f64> {
        self.x.select_rows(rows.iter())
    }

    pub fn response(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.rows[i].indemnity).collect()
    }
}

/// Builds the labeled data. Categorical columns are treatment-coded against
/// their first level and grouped; every other regressor is its own group.
pub fn build_rating_data(panel: &FarmPanel, params: &IstParams) -> Result<RatingData> {
    params.validate()?;
    let schema = panel.schema();
    let mut features: Vec<String> = schema.numeric.iter().map(|c| c.name.clone()).collect();
    features.extend(DERIVED_FEATURES.iter().map(|s| s.to_string()));
    let mut group_names = features.clone();
    let mut of_column: Vec<usize> = (0..features.len()).collect();
    for cat in &schema.categorical {
        let g = group_names.len();
        group_names.push(cat.name.clone());
        for level in &cat.levels[1..] {
            features.push(format!("{}={}", cat.name, level));
            of_column.push(g);
        }
    }
    let groups = Groups::new(group_names, of_column)?;

    let mut rows = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for farm in panel.farms() {
        for pos in 0..farm.len() {
            let Some(expected) = reference_income(farm, pos, params.window) else {
                continue;
            };
            if expected <= 0.0 {
                continue;
            }
            let rec = &farm[pos];
            let prev = &farm[pos - 1];
            let history: Vec<f64> = farm[pos - params.window..pos].iter().map(|r| r.income).collect();
            rows.push(RatingRow {
                farm_id: rec.farm_id.clone(),
                year: rec.year,
                weight: rec.weight,
                indemnity: indemnity(rec.income, expected, params),
                va_prev: prev.income,
            });
            values.extend_from_slice(&prev.covariates);
            values.extend([expected, stats::sd(&history).unwrap_or(0.0), prev.income]);
            for (c, cat) in schema.categorical.iter().enumerate() {
                for level in 1..cat.levels.len() {
                    values.push(if prev.categories[c] == level { 1.0 } else { 0.0 });
                }
            }
        }
    }
    let x = DMatrix::from_row_slice(rows.len(), features.len(), &values);
    Ok(RatingData { features, groups, rows, x })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Glm,
    Lasso,
    ElasticNet,
    Boosting,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [ModelFamily::Glm, ModelFamily::Lasso, ModelFamily::ElasticNet, ModelFamily::Boosting];

    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Glm => "GLM",
            ModelFamily::Lasso => "LASSO",
            ModelFamily::ElasticNet => "EN",
            ModelFamily::Boosting => "Boosting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySettings {
    pub penalty: PenaltyConfig,
    /// Mixing values tried by the elastic net.
    pub en_alpha_grid: Vec<f64>,
    pub boost: BoostConfig,
    pub cv_folds: usize,
    pub train_fraction: f64,
}

impl Default for FamilySettings {
    fn default() -> Self {
        FamilySettings {
            penalty: PenaltyConfig::default(),
            en_alpha_grid: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            boost: BoostConfig::default(),
            cv_folds: 5,
            train_fraction: 0.75,
        }
    }
}

impl FamilySettings {
    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        self.boost.validate()?;
        if self.en_alpha_grid.is_empty() || self.en_alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::Config("en_alpha_grid needs values in (0, 1]".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv_folds must be at least 2".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A fitted ratemaking model of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum RateModel {
    Glm(GlmModel),
    Shrink(ShrinkModel),
    Boost(BoostModel),
}

fn check_features(expected: &[String], names: &[String]) -> Result<()> {
    if expected != names {
        return Err(Error::Schema(format!(
            "model expects features [{}], data has [{}]",
            expected.join(", "),
            names.join(", ")
        )));
    }
    Ok(())
}

impl RateModel {
    pub fn predict(&self, x: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
        match self {
            RateModel::Glm(m) => m.predict(x, names),
            RateModel::Shrink(m) => {
                check_features(&m.features, names)?;
                m.predict(x)
            }
            RateModel::Boost(m) => {
                check_features(&m.features, names)?;
                m.predict(x)
            }
        }
    }

    /// Groups with at least one active column.
    pub fn selected(&self, groups: &Groups, names: &[String]) -> Result<Vec<String>> {
        match self {
            RateModel::Glm(m) => {
                let mut active = vec![false; groups.names.len()];
                for (c, name) in names.iter().enumerate() {
                    if m.coefficients.contains_key(name) && name != INTERCEPT {
                        active[groups.of_column[c]] = true;
                    }
                }
                Ok(groups.names.iter().zip(active).filter(|(_, a)| *a).map(|(n, _)| n.clone()).collect())
            }
            RateModel::Shrink(m) => m.selected_groups(m.chosen),
            RateModel::Boost(m) => Ok(boost::selected_groups(m, groups).into_iter().map(|(n, _)| n).collect()),
        }
    }
}

/// Fits one family with its internal tuning (cross-validated lambda, mixing
/// value or number of trees).
#[allow(clippy::too_many_arguments)]
pub fn fit_family(
    family: ModelFamily,
    x: &DMatrix<f64>,
    names: &[String],
    groups: &Groups,
    y: &[f64],
    p: f64,
    phi: f64,
    settings: &FamilySettings,
    seed: u64,
) -> Result<RateModel> {
    match family {
        ModelFamily::Glm => Ok(RateModel::Glm(fit_glm(x, names, y, p, None)?)),
        ModelFamily::Lasso | ModelFamily::ElasticNet => {
            let grid = if family == ModelFamily::Lasso { vec![1.0] } else { settings.en_alpha_grid.clone() };
            let (model, _) = fit_cv(x, names, groups, y, None, &grid, &settings.penalty, p, phi, settings.cv_folds, seed)?;
            Ok(RateModel::Shrink(model))
        }
        ModelFamily::Boosting => {
            let cfg = BoostConfig { seed, ..settings.boost.clone() };
            let cv = boost::select_trees_by_cv(x, names, y, None, p, &cfg, settings.cv_folds, seed)?;
            let model = boost::fit(x, names, y, None, p, &BoostConfig { max_trees: cv.best_trees, ..cfg })?;
            Ok(RateModel::Boost(model))
        }
    }
}

/// Metrics of one (target year, resample, family) cell. Failed fits carry
/// the error and NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosCell {
    pub year: i32,
    pub resample: usize,
    pub family: ModelFamily,
    pub n_train: usize,
    pub n_test: usize,
    pub train_r2: f64,
    pub test_r2: f64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub selected: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct OosResult {
    /// In (year, resample, family) order.
    pub cells: Vec<OosCell>,
    /// Resample-0 model of every successful (year, family).
    pub models: Vec<(i32, ModelFamily, RateModel)>,
}

impl OosResult {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

fn metric(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::NAN)
}

/// For each target year `t`, trains every family on a stratified sample of
/// the year `t - 1` rows and tests on all rows of year `t`. The split of a
/// given (year, resample) is shared by all families.
#[allow(clippy::too_many_arguments)]
pub fn run_out_of_sample(
    data: &RatingData,
    families: &[ModelFamily],
    target_years: &[i32],
    resamples: usize,
    p: f64,
    phi: f64,
    settings: &FamilySettings,
    seed: u64,
) -> Result<OosResult> {
    settings.validate()?;
    if resamples == 0 || families.is_empty() {
        return Err(Error::domain("need at least one resample and one family"));
    }
    let mut splits = Vec::new();
    for (yi, &year) in target_years.iter().enumerate() {
        let train_pool = data.year_rows(year - 1);
        let test = data.year_rows(year);
        if train_pool.is_empty() || test.is_empty() {
            return Err(Error::domain(format!(
                "target year {year} needs labeled rows in {} and {year}",
                year - 1
            )));
        }
        let labels = data.response(&train_pool);
        for r in 0..resamples {
            let split_seed = derive_seed(seed, (yi * resamples + r) as u64);
            let split = stratified_split(&labels, settings.train_fraction, split_seed)?;
            let train: Vec<usize> = split.train.iter().map(|&i| train_pool[i]).collect();
            splits.push((year, r, split_seed, train, test.clone()));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..splits.len())
        .flat_map(|s| (0..families.len()).map(move |f| (s, f)))
        .collect();
    let outputs: Vec<(OosCell, Option<RateModel>)> = jobs
        .par_iter()
        .map(|&(s, f)| {
            let (year, resample, split_seed, ref train, ref test) = splits[s];
            let family = families[f];
            let mut cell = OosCell {
                year,
                resample,
                family,
                n_train: train.len(),
                n_test: test.len(),
                train_r2: f64::NAN,
                test_r2: f64::NAN,
                train_rmse: f64::NAN,
                test_rmse: f64::NAN,
                selected: Vec::new(),
                error: None,
            };
            let x_train = data.design(train);
            let y_train = data.response(train);
            let fitted = fit_family(
                family,
                &x_train,
                &data.features,
                &data.groups,
                &y_train,
                p,
                phi,
                settings,
                derive_seed(split_seed, f as u64 + 1),
            );
            let evaluated = fitted.and_then(|model| {
                let mu_train = model.predict(&x_train, &data.features)?;
                let x_test = data.design(test);
                let y_test = data.response(test);
                let mu_test = model.predict(&x_test, &data.features)?;
                cell.train_r2 = metric(r2_cw(&y_train, &mu_train, p));
                cell.test_r2 = metric(r2_cw(&y_test, &mu_test, p));
                cell.train_rmse = metric(rmse(&y_train, &mu_train));
                cell.test_rmse = metric(rmse(&y_test, &mu_test));
                cell.selected = model.selected(&data.groups, &data.features)?;
                Ok(model)
            });
            match evaluated {
                Ok(model) => (cell, (resample == 0).then_some(model)),
                Err(e) => {
                    log::warn!("{} failed for {year}, resample {resample}: {e}", family.label());
                    cell.error = Some(e.to_string());
                    (cell, None)
                }
            }
        })
        .collect();

    let mut cells = Vec::with_capacity(outputs.len());
    let mut models = Vec::new();
    for (cell, model) in outputs {
        if let Some(m) = model {
            models.push((cell.year, cell.family, m));
        }
        cells.push(cell);
    }
    Ok(OosResult { cells, models })
}

/// Mean and sd over resamples of each metric, per (year, family).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosSummaryRow {
    pub year: i32,
    pub family: ModelFamily,
    pub fits: usize,
    pub failed: usize,
    pub train_r2_mean: f64,
    pub train_r2_sd: f64,
    pub test_r2_mean: f64,
    pub test_r2_sd: f64,
    pub test_rmse_mean: f64,
    pub test_rmse_sd: f64,
}

pub fn summarize_cells(cells: &[OosCell]) -> Vec<OosSummaryRow> {
    let mut keys: Vec<(i32, ModelFamily)> = cells.iter().map(|c| (c.year, c.family)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(year, family)| {
            let group: Vec<&OosCell> = cells.iter().filter(|c| c.year == year && c.family == family).collect();
            let ms = |f: fn(&OosCell) -> f64| {
                let v: Vec<f64> = group.iter().map(|c| f(c)).filter(|v| v.is_finite()).collect();
                let m = if v.is_empty() { f64::NAN } else { stats::mean(&v) };
                (m, stats::sd(&v).unwrap_or(f64::NAN))
            };
            let (train_r2_mean, train_r2_sd) = ms(|c| c.train_r2);
            let (test_r2_mean, test_r2_sd) = ms(|c| c.test_r2);
            let (test_rmse_mean, test_rmse_sd) = ms(|c| c.test_rmse);
            OosSummaryRow {
                year,
                family,
                fits: group.len(),
                failed: group.iter().filter(|c| c.error.is_some()).count(),
                train_r2_mean,
                train_r2_sd,
                test_r2_mean,
                test_r2_sd,
                test_rmse_mean,
                test_rmse_sd,
            }
        })
        .collect()
}

/// Prices every target year with its model, applies each compatibility
/// level and balances premiums against the realized indemnities of the
/// participants. One report per (family, threshold), families in order of
/// first appearance.
pub fn economic_evaluation(
    data: &RatingData,
    models: &[(i32, ModelFamily, RateModel)],
    thresholds: &[f64],
    delta: f64,
) -> Result<Vec<EconReport>> {
    let mut families: Vec<ModelFamily> = Vec::new();
    for (_, f, _) in models {
        if !families.contains(f) {
            families.push(*f);
        }
    }
    // Premiums do not depend on the threshold; price once per model.
    let mut priced = Vec::new();
    for (year, family, model) in models {
        let rows = data.year_rows(*year);
        let mu = model.predict(&data.design(&rows), &data.features)?;
        let ids: Vec<String> = rows.iter().map(|&i| data.rows[i].farm_id.clone()).collect();
        let quotes = quote_premiums(&ids, &vec![*year; rows.len()], &mu, delta)?;
        priced.push((*family, rows, quotes));
    }

    let mut reports = Vec::new();
    for &family in &families {
        let mut years: Vec<i32> = models.iter().filter(|m| m.1 == family).map(|m| m.0).collect();
        years.sort_unstable();
        years.dedup();
        for &threshold in thresholds {
            let mut entries = Vec::new();
            let mut weighted = Vec::new();
            let mut participants = vec![0; years.len()];
            let mut per_farm: BTreeMap<&str, f64> = BTreeMap::new();
            for (f, rows, quotes) in &priced {
                if *f != family {
                    continue;
                }
                let va: Vec<f64> = rows.iter().map(|&i| data.rows[i].va_prev).collect();
                let keep = compatibility_filter(quotes, &va, threshold)?;
                for ((&i, q), k) in rows.iter().zip(quotes).zip(keep) {
                    if !k {
                        continue;
                    }
                    let row = &data.rows[i];
                    let yi = years.binary_search(&row.year).expect("year listed above");
                    participants[yi] += 1;
                    entries.push(BalanceEntry { year: row.year, premium: q.premium, indemnity: row.indemnity });
                    weighted.push(BalanceEntry {
                        year: row.year,
                        premium: row.weight * q.premium,
                        indemnity: row.weight * row.indemnity,
                    });
                    *per_farm.entry(row.farm_id.as_str()).or_insert(0.0) += q.premium - row.indemnity;
                }
            }
            let (annual_balance, total) = balance(&entries, &years);
            let (annual_balance_weighted, total_weighted) = balance(&weighted, &years);
            let nets: Vec<f64> = per_farm.values().copied().collect();
            reports.push(EconReport {
                family: family.label().to_string(),
                threshold,
                delta,
                years: years.clone(),
                participants,
                annual_balance,
                balance: total,
                annual_balance_weighted,
                balance_weighted: total_weighted,
                farms: nets.len(),
                classes: net_premium_classes(&nets),
            });
        }
    }
    Ok(reports)
}
