//! CSV dataset ingestion and emission.
//!
//! Two layouts are supported. Wide: one row per series, first column the
//! series id, remaining columns the observations; rows may have different
//! lengths and blank cells are allowed only as trailing padding. Long: one
//! row per observation with columns id, t, value (t strictly increasing
//! within a series) and an optional header row; extra columns are ignored
//! unless one is named as the label column.
//!
//! Writing a dataset and reading it back yields an identical dataset in
//! either layout; floats are printed in shortest round-trip form.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use csv::StringRecord;
use kmodels::series::{Dataset, TimeSeries};

use crate::manifest::FormatChoice;

/// Reads a dataset, and per-series labels when `label_column` is given
/// (long layout with a header row only). Labels come back in dataset order.
pub fn read_dataset(
    path: &Path,
    format: FormatChoice,
    label_column: Option<&str>,
) -> Result<(Dataset, Option<Vec<String>>)> {
    match format {
        FormatChoice::Wide => {
            if label_column.is_some() {
                bail!("label columns need the long input format");
            }
            Ok((read_wide(path)?, None))
        }
        FormatChoice::Long => read_long(path, label_column),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))
}

fn record_line(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Wide layout: `id,v1,v2,...` with optional trailing blanks for unequal
/// lengths. Interior blanks and non-numeric cells are errors.
pub fn read_wide(path: &Path) -> Result<Dataset> {
    let mut reader = open_reader(path)?;
    let mut series = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in reader.records() {
        let record = record.context("malformed CSV")?;
        let line = record_line(&record);
        let fields: Vec<&str> = record.iter().collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let id = fields[0];
        if id.is_empty() {
            bail!("line {line}: missing series id in the first column");
        }
        if let Some(prev) = seen.insert(id.to_string(), line) {
            bail!("line {line}: duplicate series id {id:?} (first seen on line {prev})");
        }
        let mut last = fields.len();
        while last > 1 && fields[last - 1].is_empty() {
            last -= 1;
        }
        let mut values = Vec::with_capacity(last.saturating_sub(1));
        for (offset, cell) in fields[1..last].iter().enumerate() {
            let column = offset + 2;
            if cell.is_empty() {
                bail!(
                    "line {line}, column {column}: blank cell inside the data \
                     (only trailing blanks may pad unequal lengths)"
                );
            }
            values.push(parse_value(cell, line, column)?);
        }
        series.push(
            TimeSeries::new(id, values).map_err(|e| anyhow!("line {line}: {e}"))?,
        );
    }
    Dataset::new(series).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn parse_value(cell: &str, line: u64, column: usize) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| anyhow!("line {line}, column {column}: non-numeric value {cell:?}"))?;
    if !v.is_finite() {
        bail!("line {line}, column {column}: non-finite value {cell:?}");
    }
    Ok(v)
}

/// Long layout: columns id, t, value, observations in row order, t strictly
/// increasing within each series. A first row whose second column is not an
/// integer is treated as a header; resolving `label_column` requires one.
pub fn read_long(
    path: &Path,
    label_column: Option<&str>,
) -> Result<(Dataset, Option<Vec<String>>)> {
    let mut reader = open_reader(path)?;
    let mut records = reader.records();

    let first = records.next().transpose().context("malformed CSV")?;
    let has_header = first.as_ref().is_some_and(|r| {
        r.get(1).map_or(true, |cell| cell.parse::<i64>().is_err())
    });
    let label_index = match (label_column, &first) {
        (None, _) | (Some(_), None) => None,
        (Some(name), Some(header)) => {
            if !has_header {
                bail!("label column {name:?} needs a header row in the long format");
            }
            let idx = header.iter().position(|h| h == name).ok_or_else(|| {
                anyhow!(
                    "label column {name:?} not found in the header (columns: {})",
                    header.iter().collect::<Vec<_>>().join(", ")
                )
            })?;
            Some(idx)
        }
    };
    let head = if has_header { None } else { first };

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut last_t: Vec<i64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();

    for record in head.into_iter().map(Ok).chain(records) {
        let record = record.context("malformed CSV")?;
        let line = record_line(&record);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let needed = 3.max(label_index.map_or(0, |i| i + 1));
        if record.len() < needed {
            bail!(
                "line {line}: expected at least {needed} columns (id, t, value), found {}",
                record.len()
            );
        }
        let id = &record[0];
        if id.is_empty() {
            bail!("line {line}: missing series id in the first column");
        }
        let t: i64 = record[1]
            .parse()
            .map_err(|_| anyhow!("line {line}, column 2: non-integer t {:?}", &record[1]))?;
        let v = parse_value(&record[2], line, 3)?;

        let si = match index.get(id) {
            Some(&si) => {
                if t <= last_t[si] {
                    bail!(
                        "line {line}: t must be strictly increasing within series {id:?} \
                         (previous {}, found {t})",
                        last_t[si]
                    );
                }
                si
            }
            None => {
                let si = order.len();
                order.push(id.to_string());
                index.insert(id.to_string(), si);
                values.push(Vec::new());
                last_t.push(i64::MIN);
                labels.push(String::new());
                si
            }
        };
        last_t[si] = t;
        values[si].push(v);
        if let Some(li) = label_index {
            let label = &record[li];
            if values[si].len() == 1 {
                labels[si] = label.to_string();
            } else if labels[si] != label {
                bail!(
                    "line {line}: series {id:?} has conflicting labels {:?} and {label:?}",
                    labels[si]
                );
            }
        }
    }

    let series: Vec<TimeSeries> = order
        .iter()
        .zip(values)
        .map(|(id, v)| TimeSeries::new(id.clone(), v))
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let dataset =
        Dataset::new(series).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let labels = label_index.map(|_| labels);
    Ok((dataset, labels))
}

/// Writes the wide layout: one row per series, no header, no padding.
pub fn write_wide<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(out);
    for s in dataset.series() {
        let mut row = vec![s.id().to_string()];
        row.extend(s.values().iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the long layout with a header and 1-based t. When labels are
/// given (one per series, dataset order) they fill an extra column.
pub fn write_long<W: Write>(
    dataset: &Dataset,
    labels: Option<(&str, &[String])>,
    out: W,
) -> Result<()> {
    if let Some((_, values)) = labels {
        if values.len() != dataset.len() {
            bail!("need exactly one label per series");
        }
    }
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["id", "t", "value"];
    if let Some((name, _)) = labels {
        header.push(name);
    }
    writer.write_record(&header)?;
    for (i, s) in dataset.series().iter().enumerate() {
        for (t, v) in s.values().iter().enumerate() {
            let mut row = vec![s.id().to_string(), (t + 1).to_string(), v.to_string()];
            if let Some((_, values)) = labels {
                row.push(values[i].clone());
            }
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}
