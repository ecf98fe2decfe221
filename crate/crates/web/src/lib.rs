//! wasm-bindgen entry points for the static demo page in `www/`. Each call
//! returns a JSON document; the page draws it.

use agristab::data::{generate_synthetic, FarmPanel, SyntheticConfig};
use agristab::ist::{self, dcb_distribution, pooling_table, ContributionScheme, IstParams, MutualFundScenario};
use agristab::stats::BootstrapConfig;
use agristab::tweedie::{self, TweedieParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js<E: std::fmt::Display>(e: E) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js)
}

#[derive(Serialize)]
struct Curve {
    zero_mass: f64,
    mean: f64,
    variance: f64,
    y: Vec<f64>,
    density: Vec<f64>,
}

/// Density of the compound Poisson-gamma law on `points` values of y > 0,
/// together with the probability of an exact zero.
#[wasm_bindgen]
pub fn tweedie_curve(mu: f64, phi: f64, p: f64, points: usize) -> Result<String, JsError> {
    let params = TweedieParams::new(mu, phi, p).map_err(js)?;
    let variance = phi * mu.powf(p);
    let upper = mu + 4.0 * variance.sqrt();
    let n = points.clamp(10, 2000);
    let y: Vec<f64> = (1..=n).map(|k| upper * k as f64 / n as f64).collect();
    let density = y.iter().map(|v| tweedie::density(*v, &params)).collect::<Result<_, _>>().map_err(js)?;
    to_json(&Curve { zero_mass: tweedie::zero_mass(mu, phi, p).map_err(js)?, mean: mu, variance, y, density })
}

fn panel(n_farms: usize, n_years: usize, systemic_sd: f64, seed: u64) -> Result<FarmPanel, JsError> {
    let cfg = SyntheticConfig { n_farms, n_years, systemic_sd, seed, ..SyntheticConfig::default() };
    cfg.validate().map_err(js)?;
    generate_synthetic(&cfg).map_err(js)
}

#[derive(Serialize)]
struct Fund {
    label: String,
    weight_share: f64,
    cv: f64,
    ci: [f64; 2],
    rates: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct Pooling {
    years: Vec<i32>,
    funds: Vec<Fund>,
}

/// Yearly indemnity rates of one national fund and of one fund per level
/// of `column`, with the CV of each rate series and a bootstrap interval.
#[wasm_bindgen]
pub fn pooling(
    n_farms: usize,
    n_years: usize,
    systemic_sd: f64,
    alpha: f64,
    column: &str,
    seed: u64,
) -> Result<String, JsError> {
    let panel = panel(n_farms, n_years, systemic_sd, seed)?;
    let params = IstParams { alpha, ..IstParams::default() };
    params.validate().map_err(js)?;
    let boot = BootstrapConfig { replicates: 200, level: 0.83, seed };
    let mut out = Pooling { years: Vec::new(), funds: Vec::new() };
    for scenario in [MutualFundScenario::national(), MutualFundScenario::by_category(column)] {
        let res = ist::simulate_scenario(&panel, &scenario, ContributionScheme::Flat, &params).map_err(js)?;
        let rows = pooling_table(&res, &boot).map_err(js)?;
        out.years.clone_from(&res.years);
        for (k, fund) in res.funds.iter().enumerate() {
            let Some(row) = rows.iter().find(|r| r.fund == fund.label) else { continue };
            let rates = res
                .years
                .iter()
                .map(|y| fund.years.iter().find(|fy| fy.year == *y).and_then(|fy| fy.indemnity_rate))
                .collect();
            let label = if scenario.name == "national" { "national".to_string() } else { res.funds[k].label.clone() };
            out.funds.push(Fund { label, weight_share: row.weight_share, cv: row.cv, ci: [row.ci_low, row.ci_high], rates });
        }
    }
    to_json(&out)
}

#[derive(Serialize)]
struct Benefit {
    scheme: &'static str,
    above_one: usize,
    cumulative_weight: Vec<f64>,
    dcb: Vec<f64>,
}

/// Sorted per-farm ratios of mean indemnity to mean contribution under the
/// flat and the income-proportional contribution rules.
#[wasm_bindgen]
pub fn benefit(n_farms: usize, n_years: usize, recovery_share: f64, seed: u64) -> Result<String, JsError> {
    let panel = panel(n_farms, n_years, SyntheticConfig::default().systemic_sd, seed)?;
    let params = IstParams { recovery_share, ..IstParams::default() };
    params.validate().map_err(js)?;
    let mut out = Vec::new();
    for (scheme, name) in [
        (ContributionScheme::Flat, "flat"),
        (ContributionScheme::ProportionalToExpectedIncome, "proportional"),
    ] {
        let res = ist::simulate_scenario(&panel, &MutualFundScenario::national(), scheme, &params).map_err(js)?;
        let points = dcb_distribution(&res);
        out.push(Benefit {
            scheme: name,
            above_one: points.iter().filter(|d| d.dcb > 1.0).count(),
            cumulative_weight: points.iter().map(|d| d.cumulative_weight).collect(),
            dcb: points.iter().map(|d| d.dcb).collect(),
        });
    }
    to_json(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: Result<String, JsError>) -> Value {
        serde_json::from_str(&s.unwrap_or_else(|_| panic!("call failed"))).unwrap()
    }

    #[test]
    fn curve_has_requested_points() {
        let v = parse(tweedie_curve(2.0, 1.0, 1.5, 100));
        assert_eq!(v["density"].as_array().unwrap().len(), 100);
        assert!(v["zero_mass"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn pooling_reports_national_and_groups() {
        let v = parse(pooling(300, 8, 0.12, 0.7, "ALT", 3));
        let funds = v["funds"].as_array().unwrap();
        assert_eq!(funds[0]["label"], "national");
        assert!(funds.len() > 1);
        assert_eq!(funds[0]["rates"].as_array().unwrap().len(), v["years"].as_array().unwrap().len());
    }

    #[test]
    fn benefit_has_both_schemes() {
        let v = parse(benefit(300, 8, 1.0, 3));
        let arr = v.as_array().unwrap();
        assert_eq!(arr.len(), 2);
        let d: Vec<f64> = arr[1]["dcb"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }
}
