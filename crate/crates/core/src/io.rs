//! Long-format CSV ingestion, CSV writers and JSON float formatting.
//!
//! Input is one row per observation with a subject column, a 0/1
//! response and numeric covariates. Rows sharing a subject id form one
//! cluster, in file order. Interactions must be precomputed columns.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterData, Dataset};
use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::residuals::{EnvelopeBand, ResidualRecord};

pub const INTERCEPT_NAME: &str = "(Intercept)";

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub subject: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() && !self.intercept {
            return Err(Error::Config("model needs an intercept or at least one covariate".into()));
        }
        let mut seen: Vec<&str> = vec![&self.response, &self.subject];
        for c in &self.covariates {
            if seen.contains(&c.as_str()) {
                return Err(Error::Config(format!("column `{c}` named more than once")));
            }
            seen.push(c);
        }
        if self.response == self.subject {
            return Err(Error::Config("response and subject columns must differ".into()));
        }
        Ok(())
    }

    /// Design column names, intercept first.
    pub fn design_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.covariates.len() + 1);
        if self.intercept {
            names.push(INTERCEPT_NAME.to_string());
        }
        names.extend(self.covariates.iter().cloned());
        names
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A dataset together with the subject id of each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTable {
    pub dataset: Dataset,
    pub subjects: Vec<String>,
}

pub fn load_dataset(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Dataset> {
    Ok(load_long_table(path, spec)?.dataset)
}

pub fn load_long_table(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<LongTable> {
    read_long_table(std::fs::File::open(path)?, spec)
}

/// Parses a long-format table. Row numbers in errors count data rows
/// from 1, excluding the header.
pub fn read_long_table<R: Read>(reader: R, spec: &ModelSpec) -> Result<LongTable> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyData);
    }
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let response_col = index_of(&spec.response)?;
    let subject_col = index_of(&spec.subject)?;
    let covariate_cols: Vec<usize> = spec
        .covariates
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<_>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<u8>, Vec<Vec<f64>>)> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |col: usize| record.get(col).unwrap_or("").trim();
        let y = match field(response_col) {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                let as_num = other.parse::<f64>().ok();
                match as_num {
                    Some(v) if v == 0.0 => 0,
                    Some(v) if v == 1.0 => 1,
                    _ => {
                        return Err(Error::Data {
                            row,
                            column: spec.response.clone(),
                            message: format!("response must be 0 or 1, found \"{other}\""),
                        })
                    }
                }
            }
        };
        let mut design = Vec::with_capacity(spec.design_names().len());
        if spec.intercept {
            design.push(1.0);
        }
        for (name, &col) in spec.covariates.iter().zip(&covariate_cols) {
            let raw = field(col);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => design.push(v),
                _ => {
                    return Err(Error::Data {
                        row,
                        column: name.clone(),
                        message: format!("covariate must be a finite number, found \"{raw}\""),
                    })
                }
            }
        }
        let subject = field(subject_col).to_string();
        let entry = groups.entry(subject.clone()).or_insert_with(|| {
            order.push(subject);
            (Vec::new(), Vec::new())
        });
        entry.0.push(y);
        entry.1.push(design);
    }
    if order.is_empty() {
        return Err(Error::EmptyData);
    }
    let p = spec.design_names().len();
    let mut clusters = Vec::with_capacity(order.len());
    for subject in &order {
        let (y, rows) = groups.remove(subject).expect("grouped subject");
        let x = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
        clusters.push(ClusterData::new(y, x)?);
    }
    Ok(LongTable {
        dataset: Dataset::new(clusters, spec.design_names())?,
        subjects: order,
    })
}

/// Writes a dataset in long format: subject, response, then the design
/// columns other than the intercept.
pub fn write_long_table<W: Write>(writer: W, table: &LongTable, response: &str, subject: &str) -> Result<()> {
    let data = &table.dataset;
    let keep: Vec<usize> = data
        .covariate_names
        .iter()
        .enumerate()
        .filter_map(|(k, n)| (n != INTERCEPT_NAME).then_some(k))
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![subject.to_string(), response.to_string()];
    header.extend(keep.iter().map(|&k| data.covariate_names[k].clone()));
    w.write_record(&header)?;
    for (cluster, id) in data.clusters.iter().zip(&table.subjects) {
        for j in 0..cluster.len() {
            let mut rec = vec![id.clone(), cluster.y[j].to_string()];
            rec.extend(keep.iter().map(|&k| format_f64(cluster.x[(j, k)])));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals<W: Write>(writer: W, records: &[ResidualRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cluster_index", "within_index", "y", "mu_hat", "a", "u_draw", "r_q"])?;
    for r in records {
        w.write_record([
            r.cluster_index.to_string(),
            r.within_index.to_string(),
            r.y.to_string(),
            format_f64(r.mu_hat),
            format_f64(r.a),
            format_f64(r.u_draw),
            format_f64(r.r_q),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Envelope bands next to the sorted observed residuals.
pub fn write_envelope<W: Write>(writer: W, bands: &[EnvelopeBand], observed_sorted: &[f64]) -> Result<()> {
    if bands.len() != observed_sorted.len() {
        return Err(Error::DimensionMismatch {
            what: "envelope positions",
            expected: observed_sorted.len(),
            found: bands.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "observed", "lower", "median", "upper"])?;
    for (b, o) in bands.iter().zip(observed_sorted) {
        w.write_record([
            b.index.to_string(),
            format_f64(*o),
            format_f64(b.lower),
            format_f64(b.median),
            format_f64(b.upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// What `fit` writes: the model spec alongside the report, so later
/// steps can reload the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub spec: ModelSpec,
    pub report: FitReport,
}

impl FitArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let artifact: Self = serde_json::from_str(text)?;
        artifact.spec.validate()?;
        Ok(artifact)
    }
}

/// Shortest decimal that round-trips.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Serde helpers writing floats with 17 significant digits; non-finite
/// and missing values become `null`.
pub mod float17 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    pub fn format(v: f64) -> String {
        if v.is_finite() {
            format!("{v:.16e}")
        } else {
            "null".to_string()
        }
    }

    fn raw(v: Option<f64>) -> Box<RawValue> {
        let text = v.map_or_else(|| "null".to_string(), format);
        RawValue::from_string(text).expect("formatted float is valid JSON")
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            raw(Some(*v)).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
        }
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            raw(*v).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<f64>::deserialize(d)
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| raw(Some(*x))).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?
                .into_iter()
                .map(|x| x.unwrap_or(f64::NAN))
                .collect())
        }
    }

    pub mod opt_vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[Option<f64>], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| raw(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<f64>>, D::Error> {
            Vec::<Option<f64>>::deserialize(d)
        }
    }
}
