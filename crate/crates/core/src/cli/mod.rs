//! Command-line pipeline: `gen`, `simulate`, `ratemake` and `evaluate`
//! share one declarative config and write UTF-8 CSV, JSON and SVG files
//! into the output directory.

mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, EvaluateConfig, RatemakeConfig, RunConfig, SimulateConfig, CONFIG_VERSION};

use crate::data::{self, FarmPanel, PanelSchema, SyntheticConfig};
use crate::error::{Error, Result};
use crate::evalecon::{self, EconReport, ModelFamily, OosResult, RateModel, RatingData};
use crate::ist::{self, ContributionScheme, IstParams, ScenarioResult};
use crate::rng::derive_seed;
use crate::tweedie::{self, PowerEstimate};

#[derive(Debug, Parser)]
#[command(name = "agristab", version, about = "Income stabilization tool simulation and Tweedie ratemaking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created when missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic farm panel.
    Gen,
    /// Simulate mutual-fund scenarios and write the stabilization tables.
    Simulate,
    /// Estimate the power, fit the rating families out of sample, save models.
    Ratemake,
    /// Price saved models and report participation, balances and classes.
    Evaluate,
}

/// Success, some model cells failed, or bad input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Partial,
}

/// Exit code of a failed command: 2 for input, schema and config problems,
/// 1 for numerical failures.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::DuplicateKey { .. }
        | Error::MissingIndexYear(_)
        | Error::Config(_) => 2,
        _ => 1,
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("agristab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => return Err(Error::Config("--config is required".into())),
    };
    let Some(out) = &cli.out else {
        return Err(Error::Config("--out is required".into()));
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    fs::create_dir_all(out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Gen => cmd_gen(&cfg, seed, out).map(|_| Outcome::Ok),
        Command::Simulate => cmd_simulate(&cfg, seed, out).map(|_| Outcome::Ok),
        Command::Ratemake => cmd_ratemake(&cfg, seed, out),
        Command::Evaluate => cmd_evaluate(&cfg, out).map(|_| Outcome::Ok),
    })
}

/// Shortest round-trip form, in exponent notation for very small or large
/// magnitudes.
fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn writer(out: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(out.join(name))?)))
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(out.join(name), text)?;
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(out.join(name))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn synthetic_config(cfg: &RunConfig, seed: u64) -> SyntheticConfig {
    SyntheticConfig { seed, ..cfg.synthetic.clone() }
}

/// Writes `panel.csv` and `schema.json`.
pub fn cmd_gen(cfg: &RunConfig, seed: u64, out: &Path) -> Result<FarmPanel> {
    let panel = data::generate_synthetic(&synthetic_config(cfg, seed))?;
    data::write_panel(out.join("panel.csv"), &panel)?;
    write_json(out, "schema.json", panel.schema())?;
    let (first, last) = panel.year_range().expect("generated panel is not empty");
    println!("gen: {} farms, {} rows, years {first}-{last}", panel.farms().len(), panel.len());
    Ok(panel)
}

/// Panel named in the config, or the one `gen` left in the output
/// directory, deflated when a price index is configured.
pub fn load_input_panel(cfg: &RunConfig, out: &Path) -> Result<FarmPanel> {
    let schema: PanelSchema = match &cfg.data.schema {
        Some(p) => serde_json::from_reader(File::open(p)?)?,
        None if out.join("schema.json").exists() => serde_json::from_reader(File::open(out.join("schema.json"))?)?,
        None => cfg.synthetic.schema(),
    };
    let path = cfg.data.panel.clone().unwrap_or_else(|| out.join("panel.csv"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "panel {} not found; set data.panel or run `agristab gen` first",
            path.display()
        )));
    }
    let panel = data::load_panel(&path, &schema)?;
    match &cfg.data.price_index {
        Some(p) => data::deflate(&panel, &data::load_price_index(p)?),
        None => Ok(panel),
    }
}

const SCHEMES: [ContributionScheme; 2] = [ContributionScheme::Flat, ContributionScheme::ProportionalToExpectedIncome];

/// Flat and proportional result of every configured scenario.
pub fn simulate_all(cfg: &RunConfig, panel: &FarmPanel) -> Result<Vec<(ScenarioResult, ScenarioResult)>> {
    use rayon::prelude::*;
    cfg.simulate
        .scenarios
        .par_iter()
        .map(|s| {
            let run = |scheme| ist::simulate_scenario(panel, s, scheme, &cfg.ist);
            Ok((run(SCHEMES[0])?, run(SCHEMES[1])?))
        })
        .collect()
}

/// Writes the pooling, stabilization, group, benefit-ratio and density tables.
pub fn cmd_simulate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Vec<(ScenarioResult, ScenarioResult)>> {
    let panel = load_input_panel(cfg, out)?;
    let results = simulate_all(cfg, &panel)?;
    let boot = stats_seed(cfg, seed);

    let mut fund_years = writer(out, "fund_years.csv")?;
    fund_years.write_record(["scenario", "fund", "year", "members", "total_weight", "total_indemnity", "total_expected", "indemnity_rate"])?;
    let mut pooling = writer(out, "pooling.csv")?;
    pooling.write_record(["scenario", "fund", "members", "weight_share", "mean_rate", "sd_rate", "cv", "ci_low", "ci_high"])?;
    let mut stab = writer(out, "stabilization.csv")?;
    stab.write_record(["scenario", "indicator", "farms", "mean", "median", "sd", "mad", "cv", "p_value"])?;
    let mut group = writer(out, "group_cv.csv")?;
    group.write_record([
        "scenario", "fund", "farms", "cv_i", "cv_i_i", "cv_i_if", "cv_i_ie", "change_i_i", "change_i_if", "change_i_ie",
    ])?;
    let mut dcb = writer(out, "dcb.csv")?;
    dcb.write_record(["scenario", "scheme", "rank", "farm_id", "weight", "mean_indemnity", "mean_contribution", "dcb", "cumulative_weight"])?;
    let mut dcb_sum = writer(out, "dcb_summary.csv")?;
    dcb_sum.write_record(["scenario", "scheme", "farms", "no_indemnity", "dcb_above_one", "excluded_non_positive"])?;
    let mut kde = writer(out, "kde.csv")?;
    kde.write_record(["scenario", "indicator", "bandwidth", "x", "density"])?;

    for (flat, prop) in &results {
        let name = flat.scenario.name.as_str();
        for f in &flat.funds {
            for y in &f.years {
                fund_years.write_record([
                    name.to_string(),
                    f.label.clone(),
                    y.year.to_string(),
                    y.members.to_string(),
                    num(y.total_weight),
                    num(y.total_indemnity),
                    num(y.total_expected),
                    opt(y.indemnity_rate),
                ])?;
            }
        }
        for r in ist::pooling_table(flat, &boot)? {
            pooling.write_record([
                r.scenario,
                r.fund,
                r.members.to_string(),
                num(r.weight_share),
                num(r.mean_rate),
                num(r.sd_rate),
                num(r.cv),
                num(r.ci_low),
                num(r.ci_high),
            ])?;
        }
        for r in ist::stabilization_table(&[flat, prop])? {
            stab.write_record([
                name.to_string(),
                r.indicator,
                r.farms.to_string(),
                num(r.mean),
                num(r.median),
                num(r.sd),
                num(r.mad),
                num(r.cv),
                opt(r.p_value),
            ])?;
        }
        for r in ist::group_cv_table(flat, prop)? {
            group.write_record([
                r.scenario,
                r.fund,
                r.farms.to_string(),
                num(r.cv_observed),
                num(r.cv_with_indemnity),
                num(r.cv_flat),
                num(r.cv_proportional),
                num(r.change_with_indemnity),
                num(r.change_flat),
                num(r.change_proportional),
            ])?;
        }
        for res in [flat, prop] {
            let points = ist::dcb_distribution(res);
            for (rank, p) in points.iter().enumerate() {
                dcb.write_record([
                    name.to_string(),
                    res.scheme.label().to_string(),
                    (rank + 1).to_string(),
                    p.farm_id.clone(),
                    num(p.weight),
                    num(p.mean_indemnity),
                    num(p.mean_contribution),
                    num(p.dcb),
                    num(p.cumulative_weight),
                ])?;
            }
            let no_ind = points.iter().filter(|p| p.mean_indemnity == 0.0).count();
            let above = points.iter().filter(|p| p.dcb > 1.0).count();
            dcb_sum.write_record([
                name.to_string(),
                res.scheme.label().to_string(),
                points.len().to_string(),
                no_ind.to_string(),
                above.to_string(),
                res.excluded_non_positive.to_string(),
            ])?;
            println!(
                "simulate: {name}/{}: {} farms, {no_ind} never indemnified, {above} with benefit ratio above 1",
                res.scheme.label(),
                points.len()
            );
        }
        for k in ist::indicator_kdes(&[flat, prop], cfg.simulate.kde_grid)? {
            for (x, d) in k.kde.grid.iter().zip(&k.kde.density) {
                kde.write_record([name.to_string(), k.indicator.clone(), num(k.kde.bandwidth), num(*x), num(*d)])?;
            }
        }
    }
    for w in [&mut fund_years, &mut pooling, &mut stab, &mut group, &mut dcb, &mut dcb_sum, &mut kde] {
        w.flush()?;
    }
    Ok(results)
}

fn stats_seed(cfg: &RunConfig, seed: u64) -> crate::stats::BootstrapConfig {
    crate::stats::BootstrapConfig { seed: derive_seed(seed, 1), ..cfg.simulate.bootstrap }
}

/// Saved output of `ratemake`, read back by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub ist: IstParams,
    pub p: f64,
    pub phi: f64,
    pub features: Vec<String>,
    pub models: Vec<FittedModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub year: i32,
    pub family: ModelFamily,
    pub model: RateModel,
}

#[derive(Debug, Clone, Serialize)]
struct PowerReport<'a> {
    years: Vec<i32>,
    rows: usize,
    outliers: usize,
    first_stage: &'a PowerEstimate,
    final_stage: &'a PowerEstimate,
    phi: f64,
}

/// Target years of the out-of-sample runs.
pub fn target_years(cfg: &RatemakeConfig, data: &RatingData) -> Result<Vec<i32>> {
    let years = data.years();
    if let Some(t) = &cfg.target_years {
        return Ok(t.clone());
    }
    let usable: Vec<i32> = years.iter().copied().filter(|y| years.contains(&(y - 1))).collect();
    if usable.is_empty() {
        return Err(Error::Config("the panel has no two consecutive labeled years".into()));
    }
    Ok(usable[usable.len().saturating_sub(cfg.n_target_years)..].to_vec())
}

/// Writes `power.json`, `models.json`, `metrics.csv`, `metrics_summary.csv`
/// and `selection.csv`. Returns `Partial` when some cell failed to fit.
pub fn cmd_ratemake(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Outcome> {
    let panel = load_input_panel(cfg, out)?;
    let data = evalecon::build_rating_data(&panel, &cfg.ist)?;
    let rm = &cfg.ratemake;
    let targets = target_years(rm, &data)?;

    // The power is estimated once, on every row that serves as training data.
    let train_years: Vec<i32> = targets.iter().map(|t| t - 1).collect();
    let rows: Vec<usize> = (0..data.rows.len()).filter(|&i| train_years.contains(&data.rows[i].year)).collect();
    if rows.is_empty() {
        return Err(Error::Config(format!("no labeled rows in {train_years:?} to estimate the power")));
    }
    let grid = rm.power_grid.clone().unwrap_or_else(tweedie::default_power_grid);
    let power = tweedie::two_stage_fit(&data.design(&rows), &data.features, &data.response(&rows), None, &grid, rm.phi_method)?;
    let (p, phi) = (power.final_stage.p, power.model.phi);
    write_json(
        out,
        "power.json",
        &PowerReport {
            years: train_years.clone(),
            rows: rows.len(),
            outliers: power.outlier_mask.iter().filter(|m| **m).count(),
            first_stage: &power.first_stage,
            final_stage: &power.final_stage,
            phi,
        },
    )?;
    println!("ratemake: power {p:.3} (first stage {:.3}), dispersion {phi:.4}, from {} training rows", power.first_stage.p, rows.len());

    let oos = evalecon::run_out_of_sample(&data, &rm.families, &targets, rm.resamples, p, phi, &rm.models, derive_seed(seed, 2))?;
    write_metrics(out, &data, &oos)?;
    let bundle = ModelBundle {
        version: CONFIG_VERSION,
        ist: cfg.ist,
        p,
        phi,
        features: data.features.clone(),
        models: oos.models.iter().map(|(year, family, model)| FittedModel { year: *year, family: *family, model: model.clone() }).collect(),
    };
    write_json(out, "models.json", &bundle)?;
    for s in evalecon::summarize_cells(&oos.cells) {
        println!(
            "ratemake: {} {}: test R2 {:.4} (sd {:.4}), train R2 {:.4}, {} failed of {}",
            s.year,
            s.family.label(),
            s.test_r2_mean,
            s.test_r2_sd,
            s.train_r2_mean,
            s.failed,
            s.fits + s.failed
        );
    }
    let failed = oos.failed();
    if failed > 0 {
        eprintln!("agristab: {failed} of {} model fits failed; see metrics.csv", oos.cells.len());
        return Ok(Outcome::Partial);
    }
    Ok(Outcome::Ok)
}

fn write_metrics(out: &Path, data: &RatingData, oos: &OosResult) -> Result<()> {
    let mut m = writer(out, "metrics.csv")?;
    m.write_record(["year", "resample", "family", "n_train", "n_test", "train_r2", "test_r2", "train_rmse", "test_rmse", "selected", "error"])?;
    for c in &oos.cells {
        m.write_record([
            c.year.to_string(),
            c.resample.to_string(),
            c.family.label().to_string(),
            c.n_train.to_string(),
            c.n_test.to_string(),
            num(c.train_r2),
            num(c.test_r2),
            num(c.train_rmse),
            num(c.test_rmse),
            c.selected.join(";"),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    m.flush()?;

    let mut s = writer(out, "metrics_summary.csv")?;
    s.write_record(["year", "family", "fits", "failed", "train_r2_mean", "train_r2_sd", "test_r2_mean", "test_r2_sd", "test_rmse_mean", "test_rmse_sd"])?;
    for r in evalecon::summarize_cells(&oos.cells) {
        s.write_record([
            r.year.to_string(),
            r.family.label().to_string(),
            r.fits.to_string(),
            r.failed.to_string(),
            num(r.train_r2_mean),
            num(r.train_r2_sd),
            num(r.test_r2_mean),
            num(r.test_r2_sd),
            num(r.test_rmse_mean),
            num(r.test_rmse_sd),
        ])?;
    }
    s.flush()?;

    let mut sel = writer(out, "selection.csv")?;
    sel.write_record(["family", "feature", "count", "samples", "percent"])?;
    let mut by_family: BTreeMap<ModelFamily, Vec<Vec<String>>> = BTreeMap::new();
    for c in oos.cells.iter().filter(|c| c.error.is_none()) {
        by_family.entry(c.family).or_default().push(c.selected.clone());
    }
    for (family, sets) in &by_family {
        for r in evalecon::selection_frequency(sets, &data.groups.names) {
            sel.write_record([
                family.label().to_string(),
                r.feature,
                r.count.to_string(),
                sets.len().to_string(),
                r.percent.to_string(),
            ])?;
        }
    }
    sel.flush()?;
    Ok(())
}

fn threshold_tag(t: f64) -> String {
    format!("{:03}", (t * 100.0).round() as i64)
}

/// Writes `econ_summary.csv`, `balance.csv`, `classes.csv` and SVG charts.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<Vec<EconReport>> {
    let path = cfg.evaluate.models.clone().unwrap_or_else(|| out.join("models.json"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "model bundle {} not found; set evaluate.models or run `agristab ratemake` first",
            path.display()
        )));
    }
    let bundle: ModelBundle = serde_json::from_reader(std::io::BufReader::new(File::open(&path)?))?;
    if bundle.version != CONFIG_VERSION {
        return Err(Error::Schema(format!("model bundle version {} is not supported", bundle.version)));
    }
    if bundle.ist != cfg.ist {
        log::warn!("config scheme parameters differ from the ones the models were trained with; using the latter");
    }
    let panel = load_input_panel(cfg, out)?;
    let data = evalecon::build_rating_data(&panel, &bundle.ist)?;
    if bundle.features != data.features {
        return Err(Error::Schema(format!(
            "models expect features [{}], panel gives [{}]",
            bundle.features.join(", "),
            data.features.join(", ")
        )));
    }
    let models: Vec<(i32, ModelFamily, RateModel)> = bundle.models.into_iter().map(|m| (m.year, m.family, m.model)).collect();
    let ev = &cfg.evaluate;
    let reports = evalecon::economic_evaluation(&data, &models, &ev.thresholds, ev.delta)?;
    write_econ(out, &reports, &ev.thresholds)?;
    for r in &reports {
        println!(
            "evaluate: {} threshold {}: {} farms, balance {:.2} (weighted {:.2}), solvent in {} of {} years",
            r.family,
            r.threshold,
            r.farms,
            r.balance,
            r.balance_weighted,
            r.solvent_years(),
            r.years.len()
        );
    }
    Ok(reports)
}

fn write_econ(out: &Path, reports: &[EconReport], thresholds: &[f64]) -> Result<()> {
    let mut sum = writer(out, "econ_summary.csv")?;
    sum.write_record(["family", "threshold", "delta", "farms", "balance", "balance_weighted", "solvent_years", "years"])?;
    let mut bal = writer(out, "balance.csv")?;
    bal.write_record(["family", "threshold", "year", "participants", "balance", "balance_weighted"])?;
    let mut cls = writer(out, "classes.csv")?;
    cls.write_record(["family", "threshold", "class", "farms", "total"])?;
    for r in reports {
        sum.write_record([
            r.family.clone(),
            num(r.threshold),
            num(r.delta),
            r.farms.to_string(),
            num(r.balance),
            num(r.balance_weighted),
            r.solvent_years().to_string(),
            r.years.len().to_string(),
        ])?;
        for (i, y) in r.years.iter().enumerate() {
            bal.write_record([
                r.family.clone(),
                num(r.threshold),
                y.to_string(),
                r.participants[i].to_string(),
                num(r.annual_balance[i]),
                num(r.annual_balance_weighted[i]),
            ])?;
        }
        for c in &r.classes {
            cls.write_record([r.family.clone(), num(r.threshold), c.label.clone(), c.farms.to_string(), num(c.total)])?;
        }
    }
    for w in [&mut sum, &mut bal, &mut cls] {
        w.flush()?;
    }

    let mut families: Vec<&str> = Vec::new();
    for r in reports {
        if !families.contains(&r.family.as_str()) {
            families.push(&r.family);
        }
    }
    let pick = |f: &str, t: f64| reports.iter().find(|r| r.family == f && r.threshold == t);
    for &t in thresholds {
        let Some(first) = reports.iter().find(|r| r.threshold == t) else { continue };
        let years: Vec<String> = first.years.iter().map(|y| y.to_string()).collect();
        let series: Vec<svg::Series> = families
            .iter()
            .filter_map(|f| pick(f, t).map(|r| svg::Series { name: f, values: r.annual_balance.clone() }))
            .collect();
        let tag = threshold_tag(t);
        write_text(out, &format!("balance_{tag}.svg"), &svg::line_chart(&format!("Annual balance, compatibility {t}"), &years, &series))?;
        let labels: Vec<String> = first.classes.iter().map(|c| c.label.clone()).collect();
        let series: Vec<svg::Series> = families
            .iter()
            .filter_map(|f| {
                pick(f, t).map(|r| svg::Series { name: f, values: r.classes.iter().map(|c| c.farms as f64).collect() })
            })
            .collect();
        write_text(out, &format!("classes_{tag}.svg"), &svg::bar_chart(&format!("Farms per net premium class, compatibility {t}"), &labels, &series))?;
    }
    let cats: Vec<String> = thresholds.iter().map(|t| t.to_string()).collect();
    let series = |value: fn(&EconReport) -> f64| -> Vec<svg::Series> {
        families
            .iter()
            .map(|f| svg::Series {
                name: f,
                values: thresholds.iter().map(|&t| pick(f, t).map_or(f64::NAN, value)).collect(),
            })
            .collect()
    };
    write_text(out, "participation.svg", &svg::bar_chart("Participating farms by compatibility", &cats, &series(|r| r.farms as f64)))?;
    write_text(out, "total_balance.svg", &svg::bar_chart("Total balance by compatibility", &cats, &series(|r| r.balance)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig::parse(
            r#"
            version = 1
            [synthetic]
            n_farms = 1500
            n_years = 6
            [[simulate.scenarios]]
            name = "national"
            grouping = "national"
            [[simulate.scenarios]]
            name = "alt"
            grouping = { by_category = "ALT" }
            [simulate.bootstrap]
            replicates = 50
            [ratemake]
            families = ["glm", "boosting"]
            n_target_years = 2
            resamples = 2
            [ratemake.models]
            cv_folds = 2
            [ratemake.models.boost]
            max_trees = 20
            learning_rate = 0.2
            "#,
        )
        .unwrap()
    }

    fn read(dir: &Path, name: &str) -> String {
        fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn pipeline_round_trip_is_reproducible() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            let panel = cmd_gen(&cfg, 5, dir).unwrap();
            assert_eq!(load_input_panel(&cfg, dir).unwrap(), panel);
            cmd_simulate(&cfg, 5, dir).unwrap();
            cmd_ratemake(&cfg, 5, dir).unwrap();
            let reports = cmd_evaluate(&cfg, dir).unwrap();
            assert_eq!(reports.len(), 2 * 4);
        }
        for name in ["panel.csv", "pooling.csv", "stabilization.csv", "dcb.csv", "kde.csv", "metrics.csv", "models.json", "balance.csv", "classes.csv", "balance_100.svg"] {
            assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
        }
        let metrics = read(a.path(), "metrics.csv");
        assert_eq!(metrics.lines().count(), 1 + 2 * 2 * 2);
    }

    #[test]
    fn delta_scales_premiums_and_thins_participation() {
        let mut cfg = small();
        cfg.ratemake.families = vec![ModelFamily::Glm];
        let dir = tempfile::tempdir().unwrap();
        cmd_gen(&cfg, 2, dir.path()).unwrap();
        cmd_ratemake(&cfg, 2, dir.path()).unwrap();
        let base = cmd_evaluate(&cfg, dir.path()).unwrap();
        cfg.evaluate.delta = 0.2;
        let loaded = cmd_evaluate(&cfg, dir.path()).unwrap();
        for (a, b) in base.iter().zip(&loaded) {
            assert!(b.farms <= a.farms);
        }
        cfg.evaluate.thresholds = vec![1.0];
        assert_eq!(cmd_evaluate(&cfg, dir.path()).unwrap().len(), 1);
    }

    #[test]
    fn zero_recovery_gives_zero_contributions() {
        let mut cfg = small();
        cfg.ist.recovery_share = 0.0;
        let dir = tempfile::tempdir().unwrap();
        cmd_gen(&cfg, 1, dir.path()).unwrap();
        let results = cmd_simulate(&cfg, 1, dir.path()).unwrap();
        for (f, p) in &results {
            assert!(f.outcomes.iter().chain(&p.outcomes).all(|o| o.contribution == 0.0));
        }
    }

    #[test]
    fn input_errors_map_to_exit_two() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_simulate(&cfg, 1, dir.path()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        fs::write(dir.path().join("panel.csv"), "farm_id,year,income\nA,2010,1\n").unwrap();
        let err = cmd_simulate(&cfg, 1, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("LND")), "{err}");
        assert_eq!(exit_code(&err), 2);
        assert_eq!(exit_code(&Error::PathNonConvergence { lambda_index: 0 }), 1);
    }
}
