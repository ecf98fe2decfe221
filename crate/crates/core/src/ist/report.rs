//! Summary tables of simulated schemes: variability of fund indemnity
//! rates, per-farm income variability under the scheme and the spread of
//! net benefits.

use serde::{Deserialize, Serialize};

use super::{ContributionScheme, FarmYearOutcome, ScenarioResult};
use crate::error::{Error, Result};
use crate::stats::{self, BootstrapConfig, Kde};

/// Per-fund row: indemnity rate over the simulated years and how much it
/// varies from year to year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingRow {
    pub scenario: String,
    pub fund: String,
    pub members: usize,
    /// Share of the scenario's total weight-years.
    pub weight_share: f64,
    pub mean_rate: f64,
    pub sd_rate: f64,
    pub cv: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn annual_rates(years: &[i32], farms: &[&[FarmYearOutcome]], picks: &[usize]) -> Vec<f64> {
    let mut ind = vec![0.0; years.len()];
    let mut exp = vec![0.0; years.len()];
    for &f in picks {
        for o in farms[f] {
            let y = years.binary_search(&o.record.year).expect("outcome year is a scenario year");
            ind[y] += o.weight * o.record.indemnity;
            exp[y] += o.weight * o.record.expected_income;
        }
    }
    ind.iter().zip(&exp).filter(|(_, e)| **e > 0.0).map(|(i, e)| i / e).collect()
}

/// One row per non-empty fund. Confidence intervals resample the farms of
/// the fund and recompute the year-to-year coefficient of variation.
pub fn pooling_table(result: &ScenarioResult, boot: &BootstrapConfig) -> Result<Vec<PoolingRow>> {
    let by_farm = result.outcomes_by_farm();
    let total_weight: f64 = result.funds.iter().flat_map(|f| &f.years).map(|y| y.total_weight).sum();
    let mut rows = Vec::new();
    for (k, fund) in result.funds.iter().enumerate() {
        let farms: Vec<&[FarmYearOutcome]> = by_farm.iter().copied().filter(|f| f[0].fund == k).collect();
        let rates = result.fund_rates(k);
        if farms.is_empty() || rates.len() < 2 {
            continue;
        }
        let all: Vec<usize> = (0..farms.len()).collect();
        let cv = stats::cv(&annual_rates(&result.years, &farms, &all))?;
        let cfg = BootstrapConfig {
            seed: crate::rng::derive_seed(boot.seed, k as u64),
            ..*boot
        };
        let (ci_low, ci_high) = stats::bootstrap_ci_indexed(
            farms.len(),
            |idx| stats::cv(&annual_rates(&result.years, &farms, idx)).unwrap_or(f64::NAN),
            &cfg,
        )?;
        let weight: f64 = fund.years.iter().map(|y| y.total_weight).sum();
        rows.push(PoolingRow {
            scenario: result.scenario.name.clone(),
            fund: fund.label.clone(),
            members: farms.len(),
            weight_share: weight / total_weight,
            mean_rate: stats::mean(&rates),
            sd_rate: stats::sd(&rates)?,
            cv,
            ci_low,
            ci_high,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indicator {
    /// Observed income `I`.
    Observed,
    /// Income plus indemnities `I_I`.
    WithIndemnity,
    /// Income plus indemnities minus contributions.
    Net,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub mad: f64,
    /// `None` for a non-positive mean.
    pub cv: Option<f64>,
}

impl SpreadStats {
    fn of(xs: &[f64]) -> Result<Self> {
        let mean = stats::mean(xs);
        let sd = stats::sd(xs)?;
        Ok(SpreadStats {
            mean,
            median: stats::median(xs)?,
            sd,
            mad: stats::mad(xs)?,
            cv: (mean > 0.0).then(|| sd / mean),
        })
    }
}

/// Variability of one farm's incomes over the simulated years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmStatistics {
    pub farm_id: String,
    pub fund: usize,
    pub observed: SpreadStats,
    pub with_indemnity: SpreadStats,
    pub net: SpreadStats,
}

impl FarmStatistics {
    pub fn get(&self, indicator: Indicator) -> &SpreadStats {
        match indicator {
            Indicator::Observed => &self.observed,
            Indicator::WithIndemnity => &self.with_indemnity,
            Indicator::Net => &self.net,
        }
    }

    fn comparable(&self) -> bool {
        self.observed.cv.is_some() && self.with_indemnity.cv.is_some() && self.net.cv.is_some()
    }
}

/// Statistics for every farm with at least two simulated years.
pub fn farm_statistics(result: &ScenarioResult) -> Result<Vec<FarmStatistics>> {
    result
        .outcomes_by_farm()
        .into_iter()
        .filter(|f| f.len() >= 2)
        .map(|f| {
            let series = |g: fn(&FarmYearOutcome) -> f64| f.iter().map(g).collect::<Vec<f64>>();
            Ok(FarmStatistics {
                farm_id: f[0].record.farm_id.clone(),
                fund: f[0].fund,
                observed: SpreadStats::of(&series(|o| o.record.realized_income))?,
                with_indemnity: SpreadStats::of(&series(|o| o.income_with_indemnity))?,
                net: SpreadStats::of(&series(|o| o.income_net))?,
            })
        })
        .collect()
}

/// Median over farms of each per-farm statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    /// `I`, `I_I`, `I_IF` or `I_IE`.
    pub indicator: String,
    pub farms: usize,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub mad: f64,
    pub cv: f64,
    /// Signed-rank test of the per-farm CVs against those of `I`.
    pub p_value: Option<f64>,
}

fn net_label(scheme: ContributionScheme) -> &'static str {
    match scheme {
        ContributionScheme::Flat => "I_IF",
        ContributionScheme::ProportionalToExpectedIncome => "I_IE",
    }
}

fn median_of(stats: &[&FarmStatistics], f: impl Fn(&FarmStatistics) -> f64) -> Result<f64> {
    stats::median(&stats.iter().map(|s| f(s)).collect::<Vec<f64>>())
}

fn indicator_row(
    label: &str,
    farms: &[&FarmStatistics],
    indicator: Indicator,
) -> Result<IndicatorRow> {
    let cvs: Vec<f64> = farms.iter().map(|s| s.get(indicator).cv.expect("comparable farm")).collect();
    let p_value = if indicator == Indicator::Observed {
        None
    } else {
        let base: Vec<f64> = farms.iter().map(|s| s.observed.cv.expect("comparable farm")).collect();
        Some(stats::wilcoxon_signed_rank(&cvs, &base)?.p_value)
    };
    Ok(IndicatorRow {
        indicator: label.to_string(),
        farms: farms.len(),
        mean: median_of(farms, |s| s.get(indicator).mean)?,
        median: median_of(farms, |s| s.get(indicator).median)?,
        sd: median_of(farms, |s| s.get(indicator).sd)?,
        mad: median_of(farms, |s| s.get(indicator).mad)?,
        cv: stats::median(&cvs)?,
        p_value,
    })
}

/// Rows `I`, `I_I` and one net row per scheme, computed on the farms whose
/// coefficient of variation is defined for every indicator of every result.
/// All results must come from the same panel and parameters.
pub fn stabilization_table(results: &[&ScenarioResult]) -> Result<Vec<IndicatorRow>> {
    if results.is_empty() {
        return Err(Error::domain("no scenario results to summarize"));
    }
    let per: Vec<Vec<FarmStatistics>> = results.iter().map(|r| farm_statistics(r)).collect::<Result<_>>()?;
    if per.iter().any(|p| p.len() != per[0].len()) {
        return Err(Error::domain("scenario results cover different farms"));
    }
    let keep: Vec<bool> = (0..per[0].len()).map(|i| per.iter().all(|p| p[i].comparable())).collect();
    fn pick<'a>(p: &'a [FarmStatistics], keep: &[bool]) -> Vec<&'a FarmStatistics> {
        p.iter().zip(keep).filter(|(_, k)| **k).map(|(s, _)| s).collect()
    }
    let base = pick(&per[0], &keep);
    if base.is_empty() {
        return Err(Error::domain("no farm has a defined coefficient of variation"));
    }
    let mut rows = vec![
        indicator_row("I", &base, Indicator::Observed)?,
        indicator_row("I_I", &base, Indicator::WithIndemnity)?,
    ];
    for (r, p) in results.iter().zip(&per) {
        rows.push(indicator_row(net_label(r.scheme), &pick(p, &keep), Indicator::Net)?);
    }
    Ok(rows)
}

/// Median per-farm CVs within one fund (or the whole scenario when `fund`
/// is `"all"`), with relative changes from `I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCvRow {
    pub scenario: String,
    pub fund: String,
    pub farms: usize,
    pub cv_observed: f64,
    pub cv_with_indemnity: f64,
    pub cv_flat: f64,
    pub cv_proportional: f64,
    pub change_with_indemnity: f64,
    pub change_flat: f64,
    pub change_proportional: f64,
}

/// Needs the flat and the proportional result of one scenario.
pub fn group_cv_table(flat: &ScenarioResult, proportional: &ScenarioResult) -> Result<Vec<GroupCvRow>> {
    if flat.scenario != proportional.scenario {
        return Err(Error::domain("flat and proportional results belong to different scenarios"));
    }
    let a = farm_statistics(flat)?;
    let b = farm_statistics(proportional)?;
    if a.len() != b.len() {
        return Err(Error::domain("scenario results cover different farms"));
    }
    let make = |fund: Option<usize>, label: &str| -> Result<Option<GroupCvRow>> {
        let idx: Vec<usize> = (0..a.len())
            .filter(|&i| fund.is_none_or(|f| a[i].fund == f) && a[i].comparable() && b[i].comparable())
            .collect();
        if idx.is_empty() {
            return Ok(None);
        }
        let med = |v: Vec<f64>| stats::median(&v);
        let i = med(idx.iter().map(|&i| a[i].observed.cv.unwrap()).collect())?;
        let ii = med(idx.iter().map(|&i| a[i].with_indemnity.cv.unwrap()).collect())?;
        let f = med(idx.iter().map(|&i| a[i].net.cv.unwrap()).collect())?;
        let p = med(idx.iter().map(|&i| b[i].net.cv.unwrap()).collect())?;
        Ok(Some(GroupCvRow {
            scenario: flat.scenario.name.clone(),
            fund: label.to_string(),
            farms: idx.len(),
            cv_observed: i,
            cv_with_indemnity: ii,
            cv_flat: f,
            cv_proportional: p,
            change_with_indemnity: ii / i - 1.0,
            change_flat: f / i - 1.0,
            change_proportional: p / i - 1.0,
        }))
    };
    let mut rows = Vec::new();
    rows.extend(make(None, "all")?);
    if flat.funds.len() > 1 {
        for (k, fund) in flat.funds.iter().enumerate() {
            rows.extend(make(Some(k), &fund.label)?);
        }
    }
    Ok(rows)
}

/// One farm of the benefit distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcbPoint {
    pub farm_id: String,
    pub weight: f64,
    pub mean_indemnity: f64,
    pub mean_contribution: f64,
    pub dcb: f64,
    /// Weight share of farms with a ratio at or below this one.
    pub cumulative_weight: f64,
}

/// Farms sorted by ascending benefit ratio (ties by farm id).
pub fn dcb_distribution(result: &ScenarioResult) -> Vec<DcbPoint> {
    let mut farms: Vec<&super::FarmSummary> = result.farms.iter().collect();
    farms.sort_by(|a, b| a.dcb.total_cmp(&b.dcb).then_with(|| a.farm_id.cmp(&b.farm_id)));
    let total: f64 = farms.iter().map(|f| f.weight).sum();
    let mut acc = 0.0;
    farms
        .into_iter()
        .map(|f| {
            acc += f.weight;
            DcbPoint {
                farm_id: f.farm_id.clone(),
                weight: f.weight,
                mean_indemnity: f.mean_indemnity,
                mean_contribution: f.mean_contribution,
                dcb: f.dcb,
                cumulative_weight: if total > 0.0 { acc / total } else { 0.0 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorKde {
    pub indicator: String,
    pub kde: Kde,
}

/// Densities of the per-farm CVs of `I`, `I_I` and each scheme's net income.
pub fn indicator_kdes(results: &[&ScenarioResult], grid_points: usize) -> Result<Vec<IndicatorKde>> {
    let Some(first) = results.first() else {
        return Err(Error::domain("no scenario results to summarize"));
    };
    let base = farm_statistics(first)?;
    let cvs = |s: &[FarmStatistics], ind: Indicator| -> Vec<f64> { s.iter().filter_map(|f| f.get(ind).cv).collect() };
    let mut out = vec![
        IndicatorKde { indicator: "I".into(), kde: stats::epanechnikov_kde(&cvs(&base, Indicator::Observed), grid_points)? },
        IndicatorKde {
            indicator: "I_I".into(),
            kde: stats::epanechnikov_kde(&cvs(&base, Indicator::WithIndemnity), grid_points)?,
        },
    ];
    for r in results {
        let s = farm_statistics(r)?;
        out.push(IndicatorKde {
            indicator: net_label(r.scheme).into(),
            kde: stats::epanechnikov_kde(&cvs(&s, Indicator::Net), grid_points)?,
        });
    }
    Ok(out)
}
