//! Tabular preprocessing for demand data.
//!
//! The full recipe, in order: map raw point-of-sale descriptions to trade
//! categories, split by fold (week), log-transform the target, append
//! out-of-fold group statistics, standardize numericals and one-hot encode
//! categoricals, and drop incomplete rows. Everything learned from the
//! training split is stored in a [`PipelineArtifact`] so test data goes
//! through the identical transformation.

mod config;
mod table;
mod transforms;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use config::{
    AggregateSpec, CategoryGrouping, Normalization, NullPolicy, PipelineConfig, SplitRule, Statistic,
};
pub use table::{
    export_table, export_table_path, ingest_path, ingest_str, Column, ColumnData, ColumnKind, FeatureTable, Schema,
};
pub use transforms::{
    aggregate_group_stats, apply_aggregates, apply_encoding, categorize, finalize_matrix, fit_aggregates,
    group_categories, inverse_transform, log_transform_target, normalize_and_encode, split_train_test, statistic,
    tokenize, AggregateLookup, EncodingArtifact, FinalMatrix, NumericScaler, TargetTransform, Vocabulary, OTHER,
};

use crate::error::{Error, Result};

/// Reads a delimited file using the configuration's declared columns.
pub fn ingest_csv(path: &Path, config: &PipelineConfig) -> Result<FeatureTable> {
    ingest_path(path, &config.schema())
}

/// Everything fitted on the training table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineArtifact {
    pub transform: TargetTransform,
    pub null_policy: NullPolicy,
    pub aggregates: Vec<AggregateLookup>,
    pub encoding: EncodingArtifact,
    pub feature_names: Vec<String>,
}

impl PipelineArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}

/// Ingests, groups categories and splits by fold.
pub fn load_and_split(path: &Path, config: &PipelineConfig) -> Result<(FeatureTable, FeatureTable)> {
    let table = group_categories(&ingest_csv(path, config)?, config)?;
    let rule = config
        .split
        .as_ref()
        .ok_or_else(|| Error::config("train_folds", "no split rule configured"))?;
    split_train_test(&table, rule)
}

/// Fits every learned step on a grouped training table and returns the
/// training matrix together with the artifact.
pub fn fit_pipeline(train: &FeatureTable, config: &PipelineConfig) -> Result<(FinalMatrix, PipelineArtifact)> {
    let transform = if config.log_target {
        TargetTransform::Log1p
    } else {
        TargetTransform::Identity
    };
    let t = if config.log_target {
        log_transform_target(train)?
    } else {
        train.clone()
    };
    let aggregates = fit_aggregates(&t, &config.aggregates)?;
    let t = apply_aggregates(&t, &aggregates)?;
    let (_, encoding) = normalize_and_encode(&t, config)?;
    let mut artifact = PipelineArtifact {
        transform,
        null_policy: config.null_policy,
        aggregates,
        encoding,
        feature_names: Vec::new(),
    };
    // the training matrix goes through the same path as any later table
    let matrix = apply_pipeline(train, &artifact)?;
    artifact.feature_names = matrix.feature_names.clone();
    Ok((matrix, artifact))
}

/// Applies a fitted artifact to a grouped table.
pub fn apply_pipeline(table: &FeatureTable, artifact: &PipelineArtifact) -> Result<FinalMatrix> {
    let t = match artifact.transform {
        TargetTransform::Log1p => log_transform_target(table)?,
        TargetTransform::Identity => table.clone(),
    };
    let t = apply_aggregates(&t, &artifact.aggregates)?;
    let t = apply_encoding(&t, &artifact.encoding)?;
    let m = finalize_matrix(&t, artifact.null_policy)?;
    if !artifact.feature_names.is_empty() && m.feature_names != artifact.feature_names {
        return Err(Error::dim("encoded features differ from the fitted feature list"));
    }
    Ok(m)
}

/// Writes `feature..., target` with a header; numbers round-trip exactly.
pub fn matrix_to_csv(m: &FinalMatrix, target_name: &str) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let mut header: Vec<String> = m.feature_names.clone();
    header.push(target_name.to_string());
    let _ = writeln!(out, "{}", header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
    for i in 0..m.x.nrows() {
        let mut row: Vec<String> = (0..m.x.ncols()).map(|j| m.x[(i, j)].to_string()).collect();
        row.push(m.y[i].to_string());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a matrix written by [`matrix_to_csv`]: `(feature names, X, y)`.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>, DVector<f64>)> {
    let origin = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: origin.clone(),
            message: e.to_string(),
        })?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(Error::Parse {
            path: origin,
            message: "expected at least one feature column and the target".into(),
        });
    }
    let d = headers.len() - 1;
    let mut values = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: origin.clone(),
                message: format!("row {}, column {}: cannot parse `{field}`", r + 1, j + 1),
            })?;
            if j < d {
                values.push(v);
            } else {
                y.push(v);
            }
        }
    }
    let n = y.len();
    Ok((
        headers[..d].to_vec(),
        DMatrix::from_row_slice(n, d, &values),
        DVector::from_vec(y),
    ))
}
