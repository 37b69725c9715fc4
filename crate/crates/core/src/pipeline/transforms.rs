//! Individual preprocessing steps. Each is a pure function of its inputs.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_report::median;
use crate::pipeline::config::{
    AggregateSpec, CategoryGrouping, Normalization, NullPolicy, PipelineConfig, SplitRule, Statistic,
};
use crate::pipeline::table::{Column, ColumnData, ColumnKind, FeatureTable};

/// Category assigned to descriptions without a mapped token.
pub const OTHER: &str = "OTHER";

// ---- category grouping -------------------------------------------------------

/// Lowercased alphanumeric tokens of a description.
pub fn tokenize(description: &str) -> Vec<String> {
    description
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Category of one description: the first remaining token found in the map,
/// else [`OTHER`]. Values that already are a category name pass through,
/// which makes the step idempotent.
pub fn categorize(description: &str, grouping: &CategoryGrouping) -> String {
    let trimmed = description.trim();
    if trimmed == OTHER || grouping.map.values().any(|v| v == trimmed) {
        return trimmed.to_string();
    }
    tokenize(trimmed)
        .into_iter()
        .filter(|t| !grouping.stop_words.contains(t) && !grouping.generic_tokens.contains(t))
        .find_map(|t| grouping.map.get(&t).cloned())
        .unwrap_or_else(|| OTHER.to_string())
}

/// Replaces the raw description column by its category column, in place.
pub fn group_categories(table: &FeatureTable, config: &PipelineConfig) -> Result<FeatureTable> {
    let Some(grouping) = &config.grouping else {
        return Ok(table.clone());
    };
    let source = match table.column(&grouping.description_column) {
        Some(c) => c,
        // already grouped
        None if table.column(&grouping.category_column).is_some() => {
            let mut cols = table.clone().into_columns();
            for c in cols.iter_mut().filter(|c| c.name == grouping.category_column) {
                let values = c.as_text()?.iter().map(|v| Some(categorize(v.as_deref().unwrap_or(""), grouping))).collect();
                c.data = ColumnData::Text(values);
            }
            return FeatureTable::new(cols);
        }
        None => return Err(Error::invalid(format!("missing column `{}`", grouping.description_column))),
    };
    let values: Vec<Option<String>> = source
        .as_text()?
        .iter()
        .map(|v| Some(categorize(v.as_deref().unwrap_or(""), grouping)))
        .collect();
    let cols = table
        .columns()
        .iter()
        .map(|c| {
            if c.name == grouping.description_column {
                Column::text(grouping.category_column.clone(), ColumnKind::Categorical, values.clone())
            } else {
                c.clone()
            }
        })
        .collect();
    FeatureTable::new(cols)
}

// ---- target transform ------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetTransform {
    Identity,
    /// `ln(y + 1)`, inverted by `exp(z) - 1`.
    Log1p,
}

impl TargetTransform {
    pub fn forward(self, y: f64) -> f64 {
        match self {
            TargetTransform::Identity => y,
            TargetTransform::Log1p => y.ln_1p(),
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            TargetTransform::Identity => z,
            TargetTransform::Log1p => z.exp_m1(),
        }
    }
}

/// `ln(y + 1)` on the target column; negative targets are rejected with
/// their row indices.
pub fn log_transform_target(table: &FeatureTable) -> Result<FeatureTable> {
    let target = table.target().ok_or_else(|| Error::invalid("table has no target column"))?;
    let values = target.as_numeric()?;
    let negative: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_some_and(|x| x < 0.0))
        .map(|(i, _)| i)
        .collect();
    if !negative.is_empty() {
        let shown: Vec<String> = negative.iter().take(20).map(|i| i.to_string()).collect();
        return Err(Error::invalid(format!(
            "negative target values at rows [{}]{}",
            shown.join(", "),
            if negative.len() > 20 { ", ..." } else { "" }
        )));
    }
    let transformed: Vec<Option<f64>> = values.iter().map(|v| v.map(f64::ln_1p)).collect();
    let cols = table
        .columns()
        .iter()
        .map(|c| {
            if c.kind == ColumnKind::Target {
                Column::numeric(c.name.clone(), ColumnKind::Target, transformed.clone())
            } else {
                c.clone()
            }
        })
        .collect();
    FeatureTable::new(cols)
}

/// `exp(z) - 1` elementwise.
pub fn inverse_transform(predictions: &DVector<f64>) -> DVector<f64> {
    predictions.map(f64::exp_m1)
}

// ---- out-of-fold group statistics -------------------------------------------

pub fn statistic(stat: Statistic, values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    Some(match stat {
        Statistic::Sum => values.iter().sum(),
        Statistic::Mean => values.iter().sum::<f64>() / n,
        Statistic::Median => median(&mut values.to_vec()),
        Statistic::Std => {
            let mean = values.iter().sum::<f64>() / n;
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        }
    })
}

/// Lookup tables for one aggregate feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateLookup {
    pub spec: AggregateSpec,
    /// Statistic over rows of the group whose fold differs from the key
    /// fold, for every (group, fold) pair present in the fitting table.
    pub out_of_fold: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    /// Statistic over every fitting row of the group; used for folds the
    /// group did not occupy at fit time (nothing to leave out).
    pub all_folds: BTreeMap<String, Option<f64>>,
}

impl AggregateLookup {
    pub fn value(&self, group: &str, fold: &str) -> Option<f64> {
        match self.out_of_fold.get(group).and_then(|m| m.get(fold)) {
            Some(v) => *v,
            None => self.all_folds.get(group).copied().flatten(),
        }
    }
}

fn group_and_fold<'a>(
    table: &'a FeatureTable,
    spec: &AggregateSpec,
) -> Result<(&'a [Option<String>], &'a [Option<String>])> {
    let group = table.require(&spec.group_column)?;
    if group.kind != ColumnKind::Categorical {
        return Err(Error::invalid(format!(
            "aggregate group column `{}` is not categorical",
            spec.group_column
        )));
    }
    let fold = table
        .fold_key()
        .ok_or_else(|| Error::invalid("aggregate features need a fold-key column"))?;
    Ok((group.as_text()?, fold.as_text()?))
}

/// Builds the out-of-fold lookup tables from a (training) table.
pub fn fit_aggregates(table: &FeatureTable, specs: &[AggregateSpec]) -> Result<Vec<AggregateLookup>> {
    specs
        .iter()
        .map(|spec| {
            let (groups, folds) = group_and_fold(table, spec)?;
            let source = table.require(&spec.source)?.as_numeric()?;
            // group -> (fold, value) in table row order, so every statistic
            // accumulates its values in row order
            let mut rows: BTreeMap<&str, Vec<(&str, Option<f64>)>> = BTreeMap::new();
            for r in 0..table.n_rows() {
                if let (Some(g), Some(f)) = (&groups[r], &folds[r]) {
                    rows.entry(g.as_str()).or_default().push((f.as_str(), source[r]));
                }
            }
            let mut out_of_fold = BTreeMap::new();
            let mut all_folds = BTreeMap::new();
            for (g, members) in &rows {
                let folds_of_group: BTreeSet<&str> = members.iter().map(|m| m.0).collect();
                let mut per_fold = BTreeMap::new();
                for f in folds_of_group {
                    let others: Vec<f64> = members.iter().filter(|m| m.0 != f).filter_map(|m| m.1).collect();
                    per_fold.insert(f.to_string(), statistic(spec.statistic, &others));
                }
                let all: Vec<f64> = members.iter().filter_map(|m| m.1).collect();
                out_of_fold.insert(g.to_string(), per_fold);
                all_folds.insert(g.to_string(), statistic(spec.statistic, &all));
            }
            Ok(AggregateLookup {
                spec: spec.clone(),
                out_of_fold,
                all_folds,
            })
        })
        .collect()
}

/// Appends one numerical column per lookup. Rows with a null group or fold,
/// or whose group has no out-of-fold data, receive null.
pub fn apply_aggregates(table: &FeatureTable, lookups: &[AggregateLookup]) -> Result<FeatureTable> {
    let mut cols = table.columns().to_vec();
    for lookup in lookups {
        let (groups, folds) = group_and_fold(table, &lookup.spec)?;
        let values: Vec<Option<f64>> = groups
            .iter()
            .zip(folds)
            .map(|(g, f)| match (g, f) {
                (Some(g), Some(f)) => lookup.value(g, f),
                _ => None,
            })
            .collect();
        cols.push(Column::numeric(lookup.spec.column_name(), ColumnKind::Numerical, values));
    }
    FeatureTable::new(cols)
}

/// Out-of-fold statistics computed on `table` itself.
pub fn aggregate_group_stats(
    table: &FeatureTable,
    config: &PipelineConfig,
) -> Result<(FeatureTable, Vec<AggregateLookup>)> {
    let lookups = fit_aggregates(table, &config.aggregates)?;
    Ok((apply_aggregates(table, &lookups)?, lookups))
}

// ---- normalization and one-hot encoding -----------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericScaler {
    pub column: String,
    pub mean: f64,
    pub scale: f64,
}

impl NumericScaler {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub column: String,
    /// Sorted, distinct.
    pub values: Vec<String>,
}

impl Vocabulary {
    pub fn indicator_names(&self) -> Vec<String> {
        self.values.iter().map(|v| format!("{}={}", self.column, v)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodingArtifact {
    pub scalers: Vec<NumericScaler>,
    pub vocabularies: Vec<Vocabulary>,
    /// Categorical columns removed rather than encoded.
    #[serde(default)]
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

/// Fits per-column standardization (population standard deviation, nulls
/// ignored) and sorted category vocabularies, then applies them.
pub fn normalize_and_encode(
    table: &FeatureTable,
    config: &PipelineConfig,
) -> Result<(FeatureTable, EncodingArtifact)> {
    let mut artifact = EncodingArtifact::default();
    for c in table.columns().iter().filter(|c| c.kind == ColumnKind::Numerical) {
        let vals: Vec<f64> = c.as_numeric()?.iter().flatten().copied().collect();
        let (mean, scale) = match config.normalization {
            Normalization::None => (0.0, 1.0),
            Normalization::Standard => {
                let n = vals.len() as f64;
                let mean = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / n };
                let var = if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
                };
                let sd = var.sqrt();
                if sd > 0.0 && sd.is_finite() {
                    (mean, sd)
                } else {
                    let msg = format!("column `{}` has zero variance; centered with scale 1", c.name);
                    log::warn!("{msg}");
                    artifact.warnings.push(msg);
                    (mean, 1.0)
                }
            }
        };
        artifact.scalers.push(NumericScaler {
            column: c.name.clone(),
            mean,
            scale,
        });
    }
    for c in table.columns().iter().filter(|c| c.kind == ColumnKind::Categorical) {
        if config.group_only.contains(&c.name) {
            artifact.dropped.push(c.name.clone());
            continue;
        }
        let values: BTreeSet<String> = c.as_text()?.iter().flatten().cloned().collect();
        artifact.vocabularies.push(Vocabulary {
            column: c.name.clone(),
            values: values.into_iter().collect(),
        });
    }
    let out = apply_encoding(table, &artifact)?;
    Ok((out, artifact))
}

/// Output columns: scaled numericals, then indicator blocks, then target
/// and fold key. Unseen categories encode as all zeros; null categories as
/// null indicators.
pub fn apply_encoding(table: &FeatureTable, artifact: &EncodingArtifact) -> Result<FeatureTable> {
    let mut cols = Vec::new();
    for s in &artifact.scalers {
        let c = table.require(&s.column)?;
        let vals = c.as_numeric()?.iter().map(|v| v.map(|x| s.apply(x))).collect();
        cols.push(Column::numeric(s.column.clone(), ColumnKind::Numerical, vals));
    }
    for vocab in &artifact.vocabularies {
        let c = table.require(&vocab.column)?.as_text()?;
        for (value, name) in vocab.values.iter().zip(vocab.indicator_names()) {
            let vals = c
                .iter()
                .map(|v| v.as_ref().map(|v| if v == value { 1.0 } else { 0.0 }))
                .collect();
            cols.push(Column::numeric(name, ColumnKind::Numerical, vals));
        }
    }
    let known: BTreeSet<&str> = artifact
        .scalers
        .iter()
        .map(|s| s.column.as_str())
        .chain(artifact.vocabularies.iter().map(|v| v.column.as_str()))
        .chain(artifact.dropped.iter().map(String::as_str))
        .collect();
    for c in table.columns() {
        match c.kind {
            ColumnKind::Target | ColumnKind::FoldKey => cols.push(c.clone()),
            _ if !known.contains(c.name.as_str()) => {
                return Err(Error::invalid(format!("column `{}` has no fitted encoding", c.name)))
            }
            _ => {}
        }
    }
    FeatureTable::new(cols)
}

// ---- final matrix and split --------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct FinalMatrix {
    pub x: DMatrix<f64>,
    /// Target in model space (after any transform).
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub dropped_rows: usize,
    /// Source row index of every kept row.
    pub kept_rows: Vec<usize>,
}

/// Collects the numerical columns (table order) into `X` and the target into
/// `y`. Only the drop policy is accepted: GP models need complete rows.
pub fn finalize_matrix(table: &FeatureTable, null_policy: NullPolicy) -> Result<FinalMatrix> {
    if null_policy == NullPolicy::Retain {
        return Err(Error::invalid("null policy `retain` is not supported: GP models need complete rows"));
    }
    if let Some(c) = table.columns().iter().find(|c| c.kind == ColumnKind::Categorical) {
        return Err(Error::invalid(format!("column `{}` is still categorical; encode it first", c.name)));
    }
    let target = table.target().ok_or_else(|| Error::invalid("table has no target column"))?;
    let y_all = target.as_numeric()?;
    let features: Vec<&Column> = table
        .columns()
        .iter()
        .filter(|c| c.kind == ColumnKind::Numerical)
        .collect();
    let feature_values: Vec<&[Option<f64>]> = features.iter().map(|c| c.as_numeric()).collect::<Result<_>>()?;
    let kept_rows: Vec<usize> = (0..table.n_rows())
        .filter(|&r| y_all[r].is_some() && feature_values.iter().all(|c| c[r].is_some()))
        .collect();
    if kept_rows.is_empty() {
        return Err(Error::invalid("no complete rows left after dropping nulls"));
    }
    let d = features.len();
    let x = DMatrix::from_fn(kept_rows.len(), d, |i, j| feature_values[j][kept_rows[i]].unwrap());
    let y = DVector::from_iterator(kept_rows.len(), kept_rows.iter().map(|&r| y_all[r].unwrap()));
    Ok(FinalMatrix {
        x,
        y,
        feature_names: features.iter().map(|c| c.name.clone()).collect(),
        dropped_rows: table.n_rows() - kept_rows.len(),
        kept_rows,
    })
}

/// Rows whose fold is in `train_folds` go to train; the rest (or only the
/// listed `test_folds`) go to test.
pub fn split_train_test(table: &FeatureTable, rule: &SplitRule) -> Result<(FeatureTable, FeatureTable)> {
    let folds = table
        .fold_key()
        .ok_or_else(|| Error::invalid("fold-based split needs a fold-key column"))?
        .as_text()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, f) in folds.iter().enumerate() {
        let in_train = f.as_ref().is_some_and(|f| rule.train_folds.contains(f));
        if in_train {
            train.push(r);
        } else {
            let in_test = match &rule.test_folds {
                None => true,
                Some(t) => f.as_ref().is_some_and(|f| t.contains(f)),
            };
            if in_test {
                test.push(r);
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "split leaves an empty side ({} train rows, {} test rows)",
            train.len(),
            test.len()
        )));
    }
    Ok((table.select_rows(&train), table.select_rows(&test)))
}
