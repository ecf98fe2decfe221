//! Farm income panels: schema, ingestion, deflation, filtering rules,
//! synthetic generation and stratified sampling.

mod io;
mod split;
mod synthetic;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_panel, load_price_index, read_panel, write_panel, write_panel_to};
pub use split::{stratified_folds, stratified_split, Split};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// A numeric covariate column. Monetary columns are rescaled by [`deflate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericColumn {
    pub name: String,
    #[serde(default)]
    pub monetary: bool,
}

/// A categorical column with a closed list of levels. The first level is the
/// reference level when the column is dummy-coded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalColumn {
    pub name: String,
    pub levels: Vec<String>,
}

/// Ordered covariate layout shared by every record of a panel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSchema {
    #[serde(default)]
    pub numeric: Vec<NumericColumn>,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
}

impl PanelSchema {
    pub fn numeric_index(&self, name: &str) -> Option<usize> {
        self.numeric.iter().position(|c| c.name == name)
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical.iter().position(|c| c.name == name)
    }

    /// Column names of the CSV layout, in order.
    pub fn header(&self) -> Vec<String> {
        let mut header: Vec<String> = ["farm_id", "year", "weight", "income"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.numeric.iter().map(|c| c.name.clone()));
        header.extend(self.categorical.iter().map(|c| c.name.clone()));
        header
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for name in ["farm_id", "year", "weight", "income"] {
            seen.insert(name.to_string());
        }
        let names = self
            .numeric
            .iter()
            .map(|c| &c.name)
            .chain(self.categorical.iter().map(|c| &c.name));
        for name in names {
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate column name `{name}`")));
            }
        }
        for cat in &self.categorical {
            if cat.levels.is_empty() {
                return Err(Error::Schema(format!(
                    "categorical column `{}` has no levels",
                    cat.name
                )));
            }
            let mut levels = std::collections::HashSet::new();
            for level in &cat.levels {
                if !levels.insert(level) {
                    return Err(Error::Schema(format!(
                        "categorical column `{}` repeats level `{level}`",
                        cat.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One farm observed in one accounting year.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmYearRecord {
    pub farm_id: String,
    pub year: i32,
    /// Population extrapolation weight.
    pub weight: f64,
    /// Farm value added, deflated currency units. May be negative.
    pub income: f64,
    /// Numeric covariates in schema order.
    pub covariates: Vec<f64>,
    /// Level index per categorical column, in schema order.
    pub categories: Vec<usize>,
}

/// Longitudinal farm records sorted by `(farm_id, year)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmPanel {
    schema: PanelSchema,
    records: Vec<FarmYearRecord>,
    year_range: Option<(i32, i32)>,
}

impl FarmPanel {
    /// Builds a panel, sorting the records and checking every invariant.
    pub fn new(schema: PanelSchema, mut records: Vec<FarmYearRecord>) -> Result<Self> {
        schema.validate()?;
        records.sort_by(|a, b| a.farm_id.cmp(&b.farm_id).then(a.year.cmp(&b.year)));
        for pair in records.windows(2) {
            if pair[0].farm_id == pair[1].farm_id && pair[0].year == pair[1].year {
                return Err(Error::DuplicateKey {
                    farm_id: pair[0].farm_id.clone(),
                    year: pair[0].year,
                });
            }
        }
        for r in &records {
            if !(r.weight >= 0.0) || !r.weight.is_finite() {
                return Err(Error::Schema(format!(
                    "farm `{}` year {}: weight must be finite and non-negative, got {}",
                    r.farm_id, r.year, r.weight
                )));
            }
            if r.covariates.len() != schema.numeric.len()
                || r.categories.len() != schema.categorical.len()
            {
                return Err(Error::Schema(format!(
                    "farm `{}` year {}: record does not match the schema layout",
                    r.farm_id, r.year
                )));
            }
            for (level, col) in r.categories.iter().zip(&schema.categorical) {
                if *level >= col.levels.len() {
                    return Err(Error::Schema(format!(
                        "farm `{}` year {}: unknown level index {level} for `{}`",
                        r.farm_id, r.year, col.name
                    )));
                }
            }
        }
        let year_range = records.iter().fold(None, |acc: Option<(i32, i32)>, r| {
            Some(match acc {
                None => (r.year, r.year),
                Some((lo, hi)) => (lo.min(r.year), hi.max(r.year)),
            })
        });
        Ok(FarmPanel {
            schema,
            records,
            year_range,
        })
    }

    pub fn schema(&self) -> &PanelSchema {
        &self.schema
    }

    pub fn records(&self) -> &[FarmYearRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(min_year, max_year)`, or `None` for an empty panel.
    pub fn year_range(&self) -> Option<(i32, i32)> {
        self.year_range
    }

    /// Distinct years present, ascending.
    pub fn years(&self) -> Vec<i32> {
        let mut years: Vec<i32> = self.records.iter().map(|r| r.year).collect();
        years.sort_unstable();
        years.dedup();
        years
    }

    /// Contiguous per-farm slices, in farm order.
    pub fn farms(&self) -> Vec<&[FarmYearRecord]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].farm_id != self.records[start].farm_id {
                out.push(&self.records[start..i]);
                start = i;
            }
        }
        out
    }

    /// Index from `(farm_id, year)` to record position.
    pub fn index(&self) -> HashMap<(&str, i32), usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.farm_id.as_str(), r.year), i))
            .collect()
    }

    pub fn into_parts(self) -> (PanelSchema, Vec<FarmYearRecord>) {
        (self.schema, self.records)
    }
}

/// Year to base-100 consumer price index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceIndex {
    values: BTreeMap<i32, f64>,
}

impl PriceIndex {
    pub fn new(values: impl IntoIterator<Item = (i32, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (year, value) in values {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::domain(format!(
                    "price index for {year} must be positive, got {value}"
                )));
            }
            if map.insert(year, value).is_some() {
                return Err(Error::domain(format!("price index repeats year {year}")));
            }
        }
        Ok(PriceIndex { values: map })
    }

    pub fn get(&self, year: i32) -> Option<f64> {
        self.values.get(&year).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.values.iter().map(|(y, v)| (*y, *v))
    }
}

/// Expresses every monetary field in base-year currency: each value is
/// multiplied by `100 / index(year)`.
pub fn deflate(panel: &FarmPanel, index: &PriceIndex) -> Result<FarmPanel> {
    let monetary: Vec<bool> = panel.schema.numeric.iter().map(|c| c.monetary).collect();
    let mut records = Vec::with_capacity(panel.records.len());
    for r in &panel.records {
        let value = index.get(r.year).ok_or(Error::MissingIndexYear(r.year))?;
        let factor = 100.0 / value;
        let mut rec = r.clone();
        rec.income *= factor;
        for (x, is_money) in rec.covariates.iter_mut().zip(&monetary) {
            if *is_money {
                *x *= factor;
            }
        }
        records.push(rec);
    }
    FarmPanel::new(panel.schema.clone(), records)
}

/// Mean income of the `window` calendar years preceding `records[pos]`, or
/// `None` when any of those years is missing. `records` must be a single
/// farm's series sorted by year.
pub fn reference_income(records: &[FarmYearRecord], pos: usize, window: usize) -> Option<f64> {
    if window == 0 || pos < window {
        return None;
    }
    let year = records[pos].year;
    let history = &records[pos - window..pos];
    let contiguous = history
        .iter()
        .enumerate()
        .all(|(k, r)| r.year == year - (window - k) as i32);
    if !contiguous {
        return None;
    }
    Some(history.iter().map(|r| r.income).sum::<f64>() / window as f64)
}

/// Outcome of [`filter_positive_reference`].
#[derive(Debug, Clone)]
pub struct ReferenceFilter {
    pub panel: FarmPanel,
    pub dropped: usize,
}

/// Drops farm-years whose reference income (mean of the previous `window`
/// calendar years) is non-positive, and farms whose series is too short to
/// ever define a reference income. Records that only serve as history for
/// later years are kept.
pub fn filter_positive_reference(panel: &FarmPanel, window: usize) -> Result<ReferenceFilter> {
    if window == 0 {
        return Err(Error::domain("reference window must be at least 1 year"));
    }
    let mut kept = Vec::with_capacity(panel.records.len());
    let mut dropped = 0;
    for farm in panel.farms() {
        let references: Vec<Option<f64>> = (0..farm.len())
            .map(|pos| reference_income(farm, pos, window))
            .collect();
        if references.iter().all(Option::is_none) {
            dropped += farm.len();
            continue;
        }
        for (rec, reference) in farm.iter().zip(&references) {
            match reference {
                Some(r) if *r <= 0.0 => dropped += 1,
                _ => kept.push(rec.clone()),
            }
        }
    }
    Ok(ReferenceFilter {
        panel: FarmPanel::new(panel.schema.clone(), kept)?,
        dropped,
    })
}

/// Cook's distance cut-off `4 / (n - k - 1)` for `n` observations and `k`
/// regressors.
pub fn cook_cutoff(n: usize, k: usize) -> Result<f64> {
    if n <= k + 1 {
        return Err(Error::domain(format!(
            "Cook cut-off needs n > k + 1 (n = {n}, k = {k})"
        )));
    }
    Ok(4.0 / (n - k - 1) as f64)
}
