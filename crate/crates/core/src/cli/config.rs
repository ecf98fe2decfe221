use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::evalecon::{FamilySettings, ModelFamily, COMPATIBILITY_LEVELS};
use crate::ist::{Grouping, IstParams, MutualFundScenario};
use crate::stats::BootstrapConfig;
use crate::tweedie::PhiMethod;

pub const CONFIG_VERSION: u32 = 1;

/// Declarative run document shared by every subcommand. Each command reads
/// the sections it needs; relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Run seed, overridden by `--seed`. Seeds inside sections are derived
    /// from it and any value given there is replaced.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub ist: IstParams,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub ratemake: RatemakeConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Panel CSV. Defaults to `panel.csv` in the output directory.
    pub panel: Option<PathBuf>,
    /// Panel schema as JSON. Defaults to `schema.json` in the output
    /// directory, then to the synthetic layout.
    pub schema: Option<PathBuf>,
    /// Two-column CSV `year,index` used to deflate incomes and monetary
    /// covariates.
    pub price_index: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub scenarios: Vec<MutualFundScenario>,
    pub bootstrap: BootstrapConfig,
    pub kde_grid: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            scenarios: vec![
                MutualFundScenario::national(),
                MutualFundScenario::by_category("ALT"),
                MutualFundScenario::by_category("MR"),
                MutualFundScenario::by_category("TOF"),
            ],
            bootstrap: BootstrapConfig::default(),
            kde_grid: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatemakeConfig {
    pub families: Vec<ModelFamily>,
    /// Explicit target years; otherwise the last `n_target_years` years
    /// whose previous year is labeled.
    pub target_years: Option<Vec<i32>>,
    pub n_target_years: usize,
    pub resamples: usize,
    /// Power grid of the profile likelihood; the default grid when absent.
    pub power_grid: Option<Vec<f64>>,
    pub phi_method: PhiMethod,
    pub models: FamilySettings,
}

impl Default for RatemakeConfig {
    fn default() -> Self {
        RatemakeConfig {
            families: ModelFamily::ALL.to_vec(),
            target_years: None,
            n_target_years: 5,
            resamples: 10,
            power_grid: None,
            phi_method: PhiMethod::default(),
            models: FamilySettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Model bundle. Defaults to `models.json` in the output directory.
    pub models: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    /// Premium loading.
    pub delta: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            models: None,
            thresholds: COMPATIBILITY_LEVELS.to_vec(),
            delta: 0.0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.panel,
            &mut cfg.data.schema,
            &mut cfg.data.price_index,
            &mut cfg.evaluate.models,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}; this build reads version {CONFIG_VERSION}",
                self.version
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.synthetic.validate()?;
        self.ist.validate()?;

        let sim = &self.simulate;
        if sim.scenarios.is_empty() {
            return Err(Error::Config("simulate.scenarios is empty".into()));
        }
        let mut names: Vec<&str> = sim.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("scenario names must be unique".into()));
        }
        if sim.scenarios.iter().any(|s| matches!(&s.grouping, Grouping::ByCategory(c) if c.is_empty())) {
            return Err(Error::Config("by_category scenarios need a column name".into()));
        }
        sim.bootstrap.validate()?;
        if sim.kde_grid < 2 {
            return Err(Error::Config("simulate.kde_grid must be at least 2".into()));
        }

        let rm = &self.ratemake;
        if rm.families.is_empty() {
            return Err(Error::Config("ratemake.families is empty".into()));
        }
        if rm.resamples == 0 {
            return Err(Error::Config("ratemake.resamples must be at least 1".into()));
        }
        match &rm.target_years {
            Some(t) if t.is_empty() => return Err(Error::Config("ratemake.target_years is empty".into())),
            None if rm.n_target_years == 0 => {
                return Err(Error::Config("ratemake.n_target_years must be at least 1".into()))
            }
            _ => {}
        }
        rm.models.validate()?;

        let ev = &self.evaluate;
        if ev.thresholds.is_empty() || ev.thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("evaluate.thresholds must be a non-empty list of positive numbers".into()));
        }
        if !(ev.delta >= 0.0 && ev.delta.is_finite()) {
            return Err(Error::Config(format!("evaluate.delta must be non-negative, got {}", ev.delta)));
        }
        Ok(())
    }
}
