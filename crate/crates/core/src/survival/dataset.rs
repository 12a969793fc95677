//! One center's survival cohort and its CSV representation.
//!
//! The CSV layout is a header of feature names plus the reserved columns
//! `time` and `event`. An empty cell is a missing covariate value. The writer
//! puts the reserved columns last and formats every number with the shortest
//! representation that round-trips, so read-then-write is the identity.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const TIME_COLUMN: &str = "time";
pub const EVENT_COLUMN: &str = "event";

/// Covariates, observed times, event indicators and missingness for one center.
///
/// Covariates are stored row-major. A missing cell holds `NaN` until
/// [`ClientDataset::impute_mean`] fills it; the mask keeps recording it as
/// absent either way.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    feature_names: Vec<String>,
    covariates: Vec<f64>,
    missing_mask: Vec<bool>,
    event_time: Vec<f64>,
    event_flag: Vec<bool>,
}

impl ClientDataset {
    /// Builds a dataset from row-major covariates. Cells that are `NaN` are
    /// marked missing.
    pub fn new(
        feature_names: Vec<String>,
        covariates: Vec<f64>,
        event_time: Vec<f64>,
        event_flag: Vec<bool>,
    ) -> Result<Self> {
        let missing_mask = covariates.iter().map(|v| v.is_nan()).collect();
        Self::with_mask(feature_names, covariates, missing_mask, event_time, event_flag)
    }

    pub fn with_mask(
        feature_names: Vec<String>,
        covariates: Vec<f64>,
        missing_mask: Vec<bool>,
        event_time: Vec<f64>,
        event_flag: Vec<bool>,
    ) -> Result<Self> {
        let n = event_time.len();
        let p = feature_names.len();
        if event_flag.len() != n {
            return Err(Error::InvalidData(format!(
                "{} event flags for {} event times",
                event_flag.len(),
                n
            )));
        }
        if covariates.len() != n * p || missing_mask.len() != n * p {
            return Err(Error::InvalidData(format!(
                "covariate block has {} cells, expected {} rows x {} features",
                covariates.len(),
                n,
                p
            )));
        }
        if let Some(t) = event_time.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::InvalidData(format!("event time {t} is not a finite non-negative value")));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if name == TIME_COLUMN || name == EVENT_COLUMN {
                return Err(Error::InvalidData(format!("feature name `{name}` is reserved")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate feature name `{name}`")));
            }
        }
        Ok(Self {
            feature_names,
            covariates,
            missing_mask,
            event_time,
            event_flag,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.event_time.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_events(&self) -> usize {
        self.event_flag.iter().filter(|&&e| e).count()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn event_time(&self) -> &[f64] {
        &self.event_time
    }

    pub fn event_flag(&self) -> &[bool] {
        &self.event_flag
    }

    /// Row-major covariate block.
    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing_mask
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.covariates[i * p..(i + 1) * p]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.covariates[row * self.n_features() + col]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing_mask[row * self.n_features() + col]
    }

    /// Number of observed (non-missing) cells in a column.
    pub fn observed_count(&self, col: usize) -> usize {
        (0..self.n_patients()).filter(|&i| !self.is_missing(i, col)).count()
    }

    /// True when every covariate is a finite number (missing cells imputed).
    pub fn is_complete(&self) -> bool {
        self.covariates.iter().all(|v| v.is_finite())
    }

    /// Replaces each missing cell with its column's observed mean at this
    /// center. A column with no observed values is filled with 0.
    pub fn impute_mean(&self) -> Self {
        let p = self.n_features();
        let n = self.n_patients();
        let mut means = vec![0.0; p];
        for (j, mean) in means.iter_mut().enumerate() {
            let (sum, count) = (0..n)
                .filter(|&i| !self.is_missing(i, j))
                .fold((0.0, 0usize), |(s, c), i| (s + self.value(i, j), c + 1));
            if count > 0 {
                *mean = sum / count as f64;
            }
        }
        let mut out = self.clone();
        for i in 0..n {
            for (j, &m) in means.iter().enumerate() {
                if out.missing_mask[i * p + j] {
                    out.covariates[i * p + j] = m;
                }
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let p = self.n_features();
        let mut covariates = Vec::with_capacity(rows.len() * p);
        let mut missing_mask = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            covariates.extend_from_slice(self.row(i));
            missing_mask.extend_from_slice(&self.missing_mask[i * p..(i + 1) * p]);
        }
        Self {
            feature_names: self.feature_names.clone(),
            covariates,
            missing_mask,
            event_time: rows.iter().map(|&i| self.event_time[i]).collect(),
            event_flag: rows.iter().map(|&i| self.event_flag[i]).collect(),
        }
    }

    /// Same covariates with new outcomes.
    pub fn with_outcomes(&self, event_time: Vec<f64>, event_flag: Vec<bool>) -> Result<Self> {
        Self::with_mask(
            self.feature_names.clone(),
            self.covariates.clone(),
            self.missing_mask.clone(),
            event_time,
            event_flag,
        )
    }

    /// Same outcomes and mask with a new covariate block.
    pub fn with_covariates(&self, covariates: Vec<f64>) -> Result<Self> {
        Self::with_mask(
            self.feature_names.clone(),
            covariates,
            self.missing_mask.clone(),
            self.event_time.clone(),
            self.event_flag.clone(),
        )
    }

    /// Marks cells missing. Masked values become `NaN`.
    pub fn with_missing(&self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.missing_mask.len() {
            return Err(Error::DimensionMismatch {
                expected: self.missing_mask.len(),
                found: mask.len(),
            });
        }
        let covariates = self
            .covariates
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { f64::NAN } else { v })
            .collect();
        Self::with_mask(
            self.feature_names.clone(),
            covariates,
            mask,
            self.event_time.clone(),
            self.event_flag.clone(),
        )
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(file)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        self.to_writer(std::io::BufWriter::new(file))
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let time_col = header
            .iter()
            .position(|h| h == TIME_COLUMN)
            .ok_or_else(|| Error::InvalidData("missing `time` column".into()))?;
        let event_col = header
            .iter()
            .position(|h| h == EVENT_COLUMN)
            .ok_or_else(|| Error::InvalidData("missing `event` column".into()))?;
        let feature_cols: Vec<usize> =
            (0..header.len()).filter(|&c| c != time_col && c != event_col).collect();
        let feature_names = feature_cols.iter().map(|&c| header[c].to_string()).collect();

        let mut covariates = Vec::new();
        let mut event_time = Vec::new();
        let mut event_flag = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |c: usize| -> Result<f64> {
                record[c].trim().parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!(
                        "row {}: cannot parse `{}` in column `{}`",
                        line + 1,
                        &record[c],
                        &header[c]
                    ))
                })
            };
            for &c in &feature_cols {
                if record[c].trim().is_empty() {
                    covariates.push(f64::NAN);
                } else {
                    covariates.push(parse(c)?);
                }
            }
            event_time.push(parse(time_col)?);
            event_flag.push(match record[event_col].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::InvalidData(format!(
                        "row {}: event must be 0 or 1, got `{other}`",
                        line + 1
                    )))
                }
            });
        }
        Self::new(feature_names, covariates, event_time, event_flag)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(TIME_COLUMN);
        header.push(EVENT_COLUMN);
        wtr.write_record(&header)?;
        let p = self.n_features();
        let mut fields: Vec<String> = Vec::with_capacity(p + 2);
        for i in 0..self.n_patients() {
            fields.clear();
            for j in 0..p {
                if self.is_missing(i, j) {
                    fields.push(String::new());
                } else {
                    fields.push(self.value(i, j).to_string());
                }
            }
            fields.push(self.event_time[i].to_string());
            fields.push(if self.event_flag[i] { "1" } else { "0" }.to_string());
            wtr.write_record(&fields)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
