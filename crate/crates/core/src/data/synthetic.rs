//! FADN-like synthetic panels.
//!
//! Relative income of farm `i` in year `t` is
//! `u_it = a_i + z_it`, with a farm fixed effect `a_i ~ N(0, fe_sd^2)` and
//! `z_it = rho * z_i,t-1 + shock_it + eps_it`. The systemic shock is the sum
//! of one normal draw per (categorical column, level, year) for the
//! altimetry, macro-region and farming-type columns, each with variance
//! `systemic_sd^2 / 3`. The idiosyncratic term is a unit-variance Student-t
//! scaled by `idiosyncratic_sd * r_i`, where `r_i` is a farm risk multiplier
//! partly explained by observable covariates. Realized income is
//! `s_i * (1 + u_it)` for a log-normal farm size `s_i`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::{CategoricalColumn, FarmPanel, FarmYearRecord, NumericColumn, PanelSchema};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const BURN_IN: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_farms: usize,
    pub start_year: i32,
    pub n_years: usize,
    pub altimetry_levels: usize,
    pub macro_region_levels: usize,
    pub farming_type_levels: usize,
    /// Median farm value added.
    pub base_income: f64,
    /// Standard deviation of log farm size.
    pub size_log_sd: f64,
    pub fixed_effect_sd: f64,
    pub ar_coefficient: f64,
    pub systemic_sd: f64,
    pub idiosyncratic_sd: f64,
    /// Degrees of freedom of the Student-t idiosyncratic noise (> 2).
    pub tail_df: f64,
    /// Standard deviation of the unexplained part of log farm risk.
    pub risk_dispersion: f64,
    /// Scale of the covariate-explained part of log farm risk.
    pub risk_loading: f64,
    /// Use weight 1 for every farm instead of drawing FADN-like weights.
    pub unit_weights: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_farms: 1000,
            start_year: 2008,
            n_years: 11,
            altimetry_levels: 3,
            macro_region_levels: 5,
            farming_type_levels: 7,
            base_income: 40_000.0,
            size_log_sd: 0.9,
            fixed_effect_sd: 0.1,
            ar_coefficient: 0.3,
            systemic_sd: 0.15,
            idiosyncratic_sd: 0.2,
            tail_df: 4.0,
            risk_dispersion: 0.25,
            risk_loading: 1.0,
            unit_weights: false,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_farms == 0 {
            return fail("n_farms must be at least 1".into());
        }
        if self.n_years == 0 {
            return fail("n_years must be at least 1".into());
        }
        if self.altimetry_levels == 0 || self.macro_region_levels == 0 || self.farming_type_levels == 0
        {
            return fail("every categorical column needs at least one level".into());
        }
        for (name, v) in [
            ("size_log_sd", self.size_log_sd),
            ("fixed_effect_sd", self.fixed_effect_sd),
            ("systemic_sd", self.systemic_sd),
            ("idiosyncratic_sd", self.idiosyncratic_sd),
            ("risk_dispersion", self.risk_dispersion),
            ("risk_loading", self.risk_loading),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.ar_coefficient > -1.0 && self.ar_coefficient < 1.0) {
            return fail(format!(
                "ar_coefficient must lie in (-1, 1), got {}",
                self.ar_coefficient
            ));
        }
        if !(self.tail_df > 2.0) {
            return fail(format!("tail_df must exceed 2, got {}", self.tail_df));
        }
        if !(self.base_income > 0.0) {
            return fail("base_income must be positive".into());
        }
        Ok(())
    }

    /// Covariate layout of generated panels.
    pub fn schema(&self) -> PanelSchema {
        let numeric = [
            ("LND", false),
            ("LU", false),
            ("AWU", false),
            ("REV", true),
            ("MACHIN", false),
            ("HHI", false),
            ("OGA", false),
            ("FXCOST", true),
            ("CURCOST", false),
            ("INSURE", false),
            ("DEBT", false),
            ("K_CIRC", true),
            ("L_IMM", true),
            ("DDP", true),
            ("CDP", true),
        ]
        .iter()
        .map(|(name, monetary)| NumericColumn {
            name: name.to_string(),
            monetary: *monetary,
        })
        .collect();
        let cat = |name: &str, prefix: &str, n: usize| CategoricalColumn {
            name: name.to_string(),
            levels: (1..=n).map(|k| format!("{prefix}.{k}")).collect(),
        };
        PanelSchema {
            numeric,
            categorical: vec![
                cat("ALT", "ALT", self.altimetry_levels),
                cat("MR", "MR", self.macro_region_levels),
                cat("TOF", "ToF", self.farming_type_levels),
                CategoricalColumn {
                    name: "GEND".into(),
                    levels: vec!["M".into(), "F".into()],
                },
                CategoricalColumn {
                    name: "ORGAN".into(),
                    levels: vec!["no".into(), "yes".into()],
                },
            ],
        }
    }
}

struct FarmProfile {
    size: f64,
    fixed_effect: f64,
    risk: f64,
    weight: f64,
    levels: [usize; 5],
    land: f64,
    livestock_per_ha: f64,
    hhi: f64,
    oga: f64,
    insure: f64,
    debt: f64,
    curcost: f64,
}

/// Generates a panel from `config`. The output is a pure function of the
/// config, including its seed.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<FarmPanel> {
    config.validate()?;
    let schema = config.schema();
    let n_cat = [
        config.altimetry_levels,
        config.macro_region_levels,
        config.farming_type_levels,
    ];
    let total_periods = BURN_IN + config.n_years;

    // shocks[c][level][period]
    let shock_sd = config.systemic_sd / 3f64.sqrt();
    let mut shock_rng = stream_rng(config.seed, 0);
    let shocks: Vec<Vec<Vec<f64>>> = n_cat
        .iter()
        .map(|&levels| {
            (0..levels)
                .map(|_| {
                    (0..total_periods)
                        .map(|_| shock_sd * shock_rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        })
        .collect();

    let student = StudentT::new(config.tail_df).map_err(|e| Error::Config(e.to_string()))?;
    let t_scale = ((config.tail_df - 2.0) / config.tail_df).sqrt();
    let lognormal_noise = |rng: &mut rand_chacha::ChaCha8Rng, sd: f64| -> f64 {
        (sd * rng.sample::<f64, _>(StandardNormal)).exp()
    };

    let mut records = Vec::with_capacity(config.n_farms * config.n_years);
    for i in 0..config.n_farms {
        let mut rng = stream_rng(config.seed, 1_000 + i as u64);
        let profile = draw_profile(config, &n_cat, &mut rng);
        let farm_id = format!("F{:06}", i + 1);

        let stationary_sd = config.idiosyncratic_sd * profile.risk
            / (1.0 - config.ar_coefficient * config.ar_coefficient).sqrt();
        let mut z = stationary_sd * rng.sample::<f64, _>(StandardNormal);
        for period in 0..total_periods {
            let systemic: f64 = (0..3).map(|c| shocks[c][profile.levels[c]][period]).sum();
            let eps = config.idiosyncratic_sd
                * profile.risk
                * t_scale
                * student.sample(&mut rng);
            z = config.ar_coefficient * z + systemic + eps;
            if period < BURN_IN {
                continue;
            }
            let year = config.start_year + (period - BURN_IN) as i32;
            let relative = 1.0 + profile.fixed_effect + z;
            let income = profile.size * relative;
            let s = profile.size;
            let land = profile.land;
            let covariates = vec![
                land,
                profile.livestock_per_ha * land * lognormal_noise(&mut rng, 0.1),
                0.6 + land.sqrt() / 5.0 * lognormal_noise(&mut rng, 0.1),
                2.4 * s * (1.0 + profile.fixed_effect + 0.7 * z).max(0.05) * lognormal_noise(&mut rng, 0.05),
                15.0 * lognormal_noise(&mut rng, 0.5),
                profile.hhi,
                profile.oga,
                0.5 * s / land * lognormal_noise(&mut rng, 0.1),
                (profile.curcost + 0.02 * rng.sample::<f64, _>(StandardNormal)).clamp(0.05, 0.99),
                profile.insure,
                (profile.debt * lognormal_noise(&mut rng, 0.2)).min(2.0),
                0.6 * s * lognormal_noise(&mut rng, 0.1) * (1.0 + 0.5 * z).max(0.1),
                0.3 * s * (relative.max(0.0) + 0.1) * lognormal_noise(&mut rng, 0.3),
                0.25 * s * lognormal_noise(&mut rng, 0.05),
                0.05 * s * (profile.livestock_per_ha + 0.2) * lognormal_noise(&mut rng, 0.2),
            ];
            records.push(FarmYearRecord {
                farm_id: farm_id.clone(),
                year,
                weight: profile.weight,
                income,
                covariates,
                categories: profile.levels.to_vec(),
            });
        }
    }
    FarmPanel::new(schema, records)
}

fn draw_profile(
    config: &SyntheticConfig,
    n_cat: &[usize; 3],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> FarmProfile {
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let levels = [
        rng.random_range(0..n_cat[0]),
        rng.random_range(0..n_cat[1]),
        rng.random_range(0..n_cat[2]),
        usize::from(rng.random_bool(0.22)),
        usize::from(rng.random_bool(0.11)),
    ];
    let size = config.base_income * (config.size_log_sd * normal(rng)).exp();
    let fixed_effect = config.fixed_effect_sd * normal(rng);
    let hhi: f64 = rng.random_range(0.3..1.0);
    let insure: f64 = rng.random_range(0.0..0.05);
    let debt: f64 = 0.05 * (normal(rng)).exp();
    // log-risk explained by specialisation, insurance use, debt and the
    // highest altimetry level.
    let explained = 1.2 * (hhi - 0.65) - 8.0 * (insure - 0.025) + 1.5 * (debt - 0.08)
        + if n_cat[0] > 1 && levels[0] == n_cat[0] - 1 { 0.2 } else { 0.0 };
    let risk = (config.risk_loading * explained + config.risk_dispersion * normal(rng)).exp();
    let weight = if config.unit_weights {
        1.0
    } else {
        rng.random_range(1.0..30.0f64).round()
    };
    let livestock_dist: Normal<f64> = Normal::new(0.0, 0.8).expect("valid sd");
    let livestock_per_ha = if levels[2] % 2 == 1 {
        1.5 * livestock_dist.sample(rng).exp()
    } else {
        0.05 * livestock_dist.sample(rng).exp()
    };
    FarmProfile {
        size,
        fixed_effect,
        risk,
        weight,
        levels,
        land: (size / 1200.0 * (0.4 * normal(rng)).exp()).max(0.5),
        livestock_per_ha,
        hhi,
        oga: rng.random_range(0.0..0.2),
        insure,
        debt,
        curcost: rng.random_range(0.45..0.85),
    }
}
