//! Delimited-text datasets: reading, validation and the response transform.

use std::path::Path;

use clap::ValueEnum;
use ltrc_sieve::Observation;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    None,
    Log,
    Logit,
}

impl Transform {
    fn apply(self, v: f64) -> Option<f64> {
        match self {
            Transform::None => Some(v),
            Transform::Log => (v > 0.0).then(|| v.ln()),
            Transform::Logit => (v > 0.0 && v < 1.0).then(|| (v / (1.0 - v)).ln()),
        }
    }

    fn requirement(self) -> &'static str {
        match self {
            Transform::None => "a finite value",
            Transform::Log => "a positive value for the log transform",
            Transform::Logit => "a value strictly inside (0, 1) for the logit transform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Delimiter {
    Comma,
    Tab,
}

impl Delimiter {
    pub fn byte(self) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnMap {
    pub response: String,
    pub event: Option<String>,
    pub trunc: Option<String>,
    pub covars: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub covariates: Vec<String>,
    pub data: Vec<Observation>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::MissingColumn(name.to_string()))
}

fn number(field: &str, row: usize, name: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| CliError::Row {
        row,
        message: format!("`{name}` is `{field}`, not a number"),
    })?;
    if !v.is_finite() {
        return Err(CliError::Row {
            row,
            message: format!("`{name}` is not finite"),
        });
    }
    Ok(v)
}

fn transformed(v: f64, t: Transform, row: usize, name: &str) -> Result<f64> {
    t.apply(v).ok_or_else(|| CliError::Row {
        row,
        message: format!("`{name}` = {v} but the transform needs {}", t.requirement()),
    })
}

/// Reads and validates a dataset. Row numbers in errors count data rows from
/// 1, not counting the header.
pub fn read(
    path: &Path,
    map: &ColumnMap,
    delimiter: Delimiter,
    transform: Transform,
) -> Result<Dataset> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter.byte())
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if map.covars.is_empty() {
        return Err(CliError::NoCovariates);
    }
    let yi = column(&headers, &map.response)?;
    let ei = map
        .event
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;
    let ti = map
        .trunc
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;
    let xi: Vec<usize> = map
        .covars
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;

    let mut data = Vec::new();
    let mut bad_order = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(csv_err)?;
        let field = |j: usize| record.get(j).unwrap_or("");
        let y = number(field(yi), row, &map.response)?;
        let y = transformed(y, transform, row, &map.response)?;
        let delta = match ei {
            None => true,
            Some(j) => match field(j).trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(CliError::Row {
                        row,
                        message: format!("event indicator is `{other}`, expected 0 or 1"),
                    })
                }
            },
        };
        let t = match ti {
            Some(j) if !field(j).trim().is_empty() => {
                let name = map.trunc.as_deref().unwrap_or("truncation");
                let t = number(field(j), row, name)?;
                Some(transformed(t, transform, row, name)?)
            }
            _ => None,
        };
        let x = xi
            .iter()
            .zip(&map.covars)
            .map(|(&j, name)| number(field(j), row, name))
            .collect::<Result<Vec<f64>>>()?;
        if t.is_some_and(|t| y <= t) {
            bad_order.push(row);
        }
        data.push(Observation::new(y, delta, t, x));
    }
    if !bad_order.is_empty() {
        return Err(CliError::TruncationOrder(bad_order));
    }
    if data.is_empty() {
        return Err(CliError::EmptyDataset);
    }
    for (j, name) in map.covars.iter().enumerate() {
        let first = data[0].x[j];
        if data.iter().all(|o| o.x[j] == first) {
            return Err(CliError::ConstantCovariate(name.clone()));
        }
    }
    Ok(Dataset {
        covariates: map.covars.clone(),
        data,
    })
}

/// Writes `data` with columns `y, event, trunc, <covariates>`; blank `trunc`
/// marks an untruncated subject.
pub fn write(path: &Path, covariates: &[String], data: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut header = vec!["y".to_string(), "event".into(), "trunc".into()];
    header.extend(covariates.iter().cloned());
    let mut rows = vec![header];
    for o in data {
        let mut r = vec![
            o.y.to_string(),
            u8::from(o.delta).to_string(),
            o.t.map_or(String::new(), |t| t.to_string()),
        ];
        r.extend(o.x.iter().map(|v| v.to_string()));
        rows.push(r);
    }
    for r in rows {
        w.write_record(&r).map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
