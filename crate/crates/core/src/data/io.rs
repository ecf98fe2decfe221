use std::io::{Read, Write};
use std::path::Path;

use crate::data::{FarmPanel, FarmYearRecord, PanelSchema, PriceIndex};
use crate::error::{Error, Result};

/// Reads a panel CSV laid out as
/// `farm_id,year[,weight],income,<numeric...>,<categorical...>`.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<FarmPanel> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

pub fn read_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<FarmPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();

    let mut expected = schema.header();
    let has_weight = header.iter().any(|h| h == "weight");
    if !has_weight {
        expected.retain(|h| h != "weight");
    }
    if header != expected {
        let missing: Vec<&String> = expected.iter().filter(|h| !header.contains(h)).collect();
        let extra: Vec<&String> = header.iter().filter(|h| !expected.contains(h)).collect();
        return Err(Error::Schema(format!(
            "header does not match schema (missing: {missing:?}, unexpected: {extra:?}, expected order: {expected:?})"
        )));
    }
    let offset = if has_weight { 4 } else { 3 };
    let n_num = schema.numeric.len();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // Row 1 is the header.
        let row_no = i + 2;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            msg: e.to_string(),
        })?;
        if row.len() != expected.len() {
            return Err(Error::Parse {
                row: row_no,
                msg: format!("expected {} fields, found {}", expected.len(), row.len()),
            });
        }
        let num = |col: usize, name: &str| -> Result<f64> {
            let raw = row[col].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: row_no,
                    msg: format!("column `{name}`: `{raw}` is not a finite number"),
                })
        };
        let farm_id = row[0].trim().to_string();
        if farm_id.is_empty() {
            return Err(Error::Parse {
                row: row_no,
                msg: "empty farm_id".into(),
            });
        }
        let year = row[1].trim().parse::<i32>().map_err(|_| Error::Parse {
            row: row_no,
            msg: format!("column `year`: `{}` is not an integer", row[1].trim()),
        })?;
        let weight = if has_weight { num(2, "weight")? } else { 1.0 };
        let income = num(offset - 1, "income")?;
        let covariates = schema
            .numeric
            .iter()
            .enumerate()
            .map(|(j, c)| num(offset + j, &c.name))
            .collect::<Result<Vec<f64>>>()?;
        let categories = schema
            .categorical
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let raw = row[offset + n_num + j].trim();
                c.levels.iter().position(|l| l == raw).ok_or_else(|| {
                    Error::Schema(format!(
                        "row {row_no}: unknown level `{raw}` for categorical column `{}`",
                        c.name
                    ))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        records.push(FarmYearRecord {
            farm_id,
            year,
            weight,
            income,
            covariates,
            categories,
        });
    }
    FarmPanel::new(schema.clone(), records)
}

pub fn write_panel(path: impl AsRef<Path>, panel: &FarmPanel) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_panel_to(std::io::BufWriter::new(file), panel)
}

/// Writes the panel with a weight column. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_panel_to<W: Write>(writer: W, panel: &FarmPanel) -> Result<()> {
    let schema = panel.schema();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(schema.header())?;
    let mut row: Vec<String> = Vec::new();
    for r in panel.records() {
        row.clear();
        row.push(r.farm_id.clone());
        row.push(r.year.to_string());
        row.push(r.weight.to_string());
        row.push(r.income.to_string());
        row.extend(r.covariates.iter().map(|v| v.to_string()));
        row.extend(
            r.categories
                .iter()
                .zip(&schema.categorical)
                .map(|(l, c)| c.levels[*l].clone()),
        );
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a `year,index` CSV.
pub fn load_price_index(path: impl AsRef<Path>) -> Result<PriceIndex> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["year", "index"] {
        return Err(Error::Schema(format!(
            "price index header must be `year,index`, found {header:?}"
        )));
    }
    let mut values = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 2;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            msg: e.to_string(),
        })?;
        let year = row[0].trim().parse::<i32>().map_err(|_| Error::Parse {
            row: row_no,
            msg: "year is not an integer".into(),
        })?;
        let value = row[1].trim().parse::<f64>().map_err(|_| Error::Parse {
            row: row_no,
            msg: "index is not a number".into(),
        })?;
        values.push((year, value));
    }
    PriceIndex::new(values)
}
