//! Income Stabilization Tool engine: expected income, trigger, indemnity,
//! mutual-fund aggregation, farmer contributions and net-benefit ratios.

mod report;

use serde::{Deserialize, Serialize};

pub use report::{
    dcb_distribution, farm_statistics, group_cv_table, indicator_kdes, pooling_table, stabilization_table,
    DcbPoint, FarmStatistics, GroupCvRow, Indicator, IndicatorKde, IndicatorRow, PoolingRow, SpreadStats,
};

use crate::data::{reference_income, FarmPanel};
use crate::error::{Error, Result};

/// Scheme constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IstParams {
    /// Trigger fraction of expected income.
    pub alpha: f64,
    /// Compensated fraction of the shortfall from expected income.
    pub beta: f64,
    /// Years of history behind the expected income.
    pub window: usize,
    /// Share of total indemnities recovered through farmer contributions.
    pub recovery_share: f64,
}

impl Default for IstParams {
    fn default() -> Self {
        IstParams {
            alpha: 0.7,
            beta: 0.7,
            window: 3,
            recovery_share: 0.35,
        }
    }
}

impl IstParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1 year".into()));
        }
        if !(0.0..=1.0).contains(&self.recovery_share) {
            return Err(Error::Config(format!(
                "recovery_share must lie in [0, 1], got {}",
                self.recovery_share
            )));
        }
        Ok(())
    }
}

/// Outcome of the indemnity rule for one farm-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndemnityRecord {
    pub farm_id: String,
    pub year: i32,
    pub realized_income: f64,
    pub expected_income: f64,
    pub trigger: f64,
    pub indemnity: f64,
}

/// Aggregation level of the mutual funds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    National,
    /// One fund per level of the named categorical column.
    ByCategory(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutualFundScenario {
    pub name: String,
    pub grouping: Grouping,
}

impl MutualFundScenario {
    pub fn national() -> Self {
        MutualFundScenario {
            name: "national".into(),
            grouping: Grouping::National,
        }
    }

    pub fn by_category(column: &str) -> Self {
        MutualFundScenario {
            name: format!("by_{}", column.to_lowercase()),
            grouping: Grouping::ByCategory(column.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContributionScheme {
    Flat,
    ProportionalToExpectedIncome,
}

impl ContributionScheme {
    pub fn label(self) -> &'static str {
        match self {
            ContributionScheme::Flat => "flat",
            ContributionScheme::ProportionalToExpectedIncome => "proportional",
        }
    }
}

/// Mean of the last `window` incomes of `history` (oldest first).
pub fn expected_income(history: &[f64], window: usize) -> Result<f64> {
    if window == 0 || history.len() < window {
        return Err(Error::ShortHistory {
            needed: window,
            have: history.len(),
        });
    }
    let recent = &history[history.len() - window..];
    Ok(recent.iter().sum::<f64>() / window as f64)
}

/// `beta * (E - I)` when realized income falls strictly below the trigger
/// `alpha * E`, zero otherwise.
pub fn indemnity(realized: f64, expected: f64, params: &IstParams) -> f64 {
    if realized >= params.alpha * expected {
        0.0
    } else {
        (params.beta * (expected - realized)).max(0.0)
    }
}

/// Weighted sum of indemnities.
pub fn total_indemnity(indemnities: &[f64], weights: &[f64]) -> Result<f64> {
    if indemnities.len() != weights.len() {
        return Err(Error::LengthMismatch(indemnities.len(), weights.len()));
    }
    Ok(indemnities.iter().zip(weights).map(|(i, w)| i * w).sum())
}

pub fn indemnity_rate(total_indemnity: f64, total_expected: f64) -> Result<f64> {
    if !(total_expected > 0.0) {
        return Err(Error::domain(format!(
            "indemnity rate needs positive total expected income, got {total_expected}"
        )));
    }
    Ok(total_indemnity / total_expected)
}

/// Contribution per unit weight, identical for every member of the fund.
pub fn flat_contribution(total_indemnity: f64, total_weight: f64, recovery_share: f64) -> Result<f64> {
    if !(total_weight > 0.0) {
        return Err(Error::domain("flat contribution needs positive total weight"));
    }
    Ok(recovery_share * total_indemnity / total_weight)
}

/// Contribution proportional to the farm's expected income.
pub fn proportional_contribution(
    total_indemnity: f64,
    total_expected: f64,
    expected: f64,
    recovery_share: f64,
) -> Result<f64> {
    if !(total_expected > 0.0) {
        return Err(Error::domain(
            "proportional contribution needs positive total expected income",
        ));
    }
    Ok(recovery_share * total_indemnity / total_expected * expected)
}

/// Returns `(I + Ind, I + Ind - Cont)`.
pub fn income_indicators(income: f64, indemnity: f64, contribution: f64) -> (f64, f64) {
    let with_indemnity = income + indemnity;
    (with_indemnity, with_indemnity - contribution)
}

/// Ratio of mean indemnity received to mean contribution paid; zero for
/// farms never indemnified.
pub fn dcb(avg_indemnity: f64, avg_contribution: f64) -> Result<f64> {
    if avg_indemnity == 0.0 {
        return Ok(0.0);
    }
    if !(avg_contribution > 0.0) {
        return Err(Error::domain(format!(
            "benefit ratio needs a positive mean contribution, got {avg_contribution}"
        )));
    }
    Ok(avg_indemnity / avg_contribution)
}

/// One simulated farm-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmYearOutcome {
    pub record: IndemnityRecord,
    pub weight: f64,
    /// Index into [`ScenarioResult::funds`].
    pub fund: usize,
    pub contribution: f64,
    /// `I + Ind`.
    pub income_with_indemnity: f64,
    /// `I + Ind - Cont`.
    pub income_net: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundYear {
    pub year: i32,
    pub members: usize,
    pub total_weight: f64,
    pub total_indemnity: f64,
    pub total_expected: f64,
    /// `None` when the fund's total expected income is not positive.
    pub indemnity_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundSummary {
    pub label: String,
    pub years: Vec<FundYear>,
}

impl FundSummary {
    pub fn is_empty(&self) -> bool {
        self.years.iter().all(|y| y.members == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmSummary {
    pub farm_id: String,
    pub weight: f64,
    pub fund: usize,
    pub years: usize,
    pub mean_indemnity: f64,
    pub mean_contribution: f64,
    pub dcb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: MutualFundScenario,
    pub scheme: ContributionScheme,
    pub params: IstParams,
    /// Simulated years, ascending.
    pub years: Vec<i32>,
    pub funds: Vec<FundSummary>,
    /// Farm-years in panel order.
    pub outcomes: Vec<FarmYearOutcome>,
    pub farms: Vec<FarmSummary>,
    /// Farm-years with full history but non-positive expected income.
    pub excluded_non_positive: usize,
}

fn fund_labels(panel: &FarmPanel, grouping: &Grouping) -> Result<(Vec<String>, Option<usize>)> {
    match grouping {
        Grouping::National => Ok((vec!["national".to_string()], None)),
        Grouping::ByCategory(name) => {
            let idx = panel.schema().categorical_index(name).ok_or_else(|| {
                Error::Schema(format!("panel has no categorical column `{name}`"))
            })?;
            Ok((panel.schema().categorical[idx].levels.clone(), Some(idx)))
        }
    }
}

/// Runs the scheme over every farm-year that has `window` contiguous years
/// of history. Contributions of year `t` recover the share of that same
/// year's fund indemnities.
pub fn simulate_scenario(
    panel: &FarmPanel,
    scenario: &MutualFundScenario,
    scheme: ContributionScheme,
    params: &IstParams,
) -> Result<ScenarioResult> {
    params.validate()?;
    let (labels, category) = fund_labels(panel, &scenario.grouping)?;

    let mut outcomes = Vec::new();
    let mut excluded_non_positive = 0;
    for farm in panel.farms() {
        for (pos, rec) in farm.iter().enumerate() {
            let Some(expected) = reference_income(farm, pos, params.window) else {
                continue;
            };
            if expected <= 0.0 {
                excluded_non_positive += 1;
                continue;
            }
            let ind = indemnity(rec.income, expected, params);
            outcomes.push(FarmYearOutcome {
                record: IndemnityRecord {
                    farm_id: rec.farm_id.clone(),
                    year: rec.year,
                    realized_income: rec.income,
                    expected_income: expected,
                    trigger: params.alpha * expected,
                    indemnity: ind,
                },
                weight: rec.weight,
                fund: category.map_or(0, |c| rec.categories[c]),
                contribution: 0.0,
                income_with_indemnity: 0.0,
                income_net: 0.0,
            });
        }
    }

    let mut years: Vec<i32> = outcomes.iter().map(|o| o.record.year).collect();
    years.sort_unstable();
    years.dedup();
    let year_pos = |y: i32| years.binary_search(&y).expect("year collected above");

    // Sequential reduction in panel order per (fund, year).
    let mut funds: Vec<FundSummary> = labels
        .iter()
        .map(|label| FundSummary {
            label: label.clone(),
            years: years
                .iter()
                .map(|&year| FundYear {
                    year,
                    members: 0,
                    total_weight: 0.0,
                    total_indemnity: 0.0,
                    total_expected: 0.0,
                    indemnity_rate: None,
                })
                .collect(),
        })
        .collect();
    for o in &outcomes {
        let fy = &mut funds[o.fund].years[year_pos(o.record.year)];
        fy.members += 1;
        fy.total_weight += o.weight;
        fy.total_indemnity += o.record.indemnity * o.weight;
        fy.total_expected += o.record.expected_income * o.weight;
    }
    for fund in &mut funds {
        for fy in &mut fund.years {
            fy.indemnity_rate = indemnity_rate(fy.total_indemnity, fy.total_expected).ok();
        }
    }

    for o in &mut outcomes {
        let fy = &funds[o.fund].years[year_pos(o.record.year)];
        o.contribution = match scheme {
            ContributionScheme::Flat => {
                flat_contribution(fy.total_indemnity, fy.total_weight, params.recovery_share)
                    .unwrap_or(0.0)
            }
            ContributionScheme::ProportionalToExpectedIncome => proportional_contribution(
                fy.total_indemnity,
                fy.total_expected,
                o.record.expected_income,
                params.recovery_share,
            )
            .unwrap_or(0.0),
        };
        let (with_ind, net) =
            income_indicators(o.record.realized_income, o.record.indemnity, o.contribution);
        o.income_with_indemnity = with_ind;
        o.income_net = net;
    }

    let mut farms = Vec::new();
    let mut start = 0;
    for i in 1..=outcomes.len() {
        if i == outcomes.len() || outcomes[i].record.farm_id != outcomes[start].record.farm_id {
            let span = &outcomes[start..i];
            let n = span.len() as f64;
            let mean_indemnity = span.iter().map(|o| o.record.indemnity).sum::<f64>() / n;
            let mean_contribution = span.iter().map(|o| o.contribution).sum::<f64>() / n;
            farms.push(FarmSummary {
                farm_id: span[0].record.farm_id.clone(),
                weight: span[0].weight,
                fund: span[0].fund,
                years: span.len(),
                mean_indemnity,
                mean_contribution,
                dcb: dcb(mean_indemnity, mean_contribution).unwrap_or(0.0),
            });
            start = i;
        }
    }

    Ok(ScenarioResult {
        scenario: scenario.clone(),
        scheme,
        params: *params,
        years,
        funds,
        outcomes,
        farms,
        excluded_non_positive,
    })
}

impl ScenarioResult {
    /// Year-by-year indemnity rates of one fund, skipping undefined years.
    pub fn fund_rates(&self, fund: usize) -> Vec<f64> {
        self.funds[fund]
            .years
            .iter()
            .filter_map(|y| y.indemnity_rate)
            .collect()
    }

    /// Farm-year outcomes grouped per farm, in farm order.
    pub fn outcomes_by_farm(&self) -> Vec<&[FarmYearOutcome]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.outcomes.len() {
            if i == self.outcomes.len()
                || self.outcomes[i].record.farm_id != self.outcomes[start].record.farm_id
            {
                out.push(&self.outcomes[start..i]);
                start = i;
            }
        }
        out
    }
}
